"""Spectral efficiency of DUEs and CUEs under a channel/power allocation.

Indices are 0-based throughout: pair ``i`` owns users ``2i`` (a) and
``2i + 1`` (b); channels run ``0..K-1``; power level ``0`` is 0 W.

Every sum below is accumulated left to right in ascending user order and
SINR denominators are built as ``((noise + dues) + cue) + self``. The
compiled kernels in :mod:`fdd2d._kernels` use the same order, so the numba
path agrees bit for bit (the numpy path to within one ulp of ``log2``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig


@dataclass(frozen=True)
class Allocation:
    channel: tuple[int, ...]  # per pair, 0..K-1
    power_level: tuple[int, ...]  # per user, 0..L-1

    def __post_init__(self):
        object.__setattr__(self, "channel", tuple(int(c) for c in self.channel))
        object.__setattr__(self, "power_level", tuple(int(p) for p in self.power_level))

    def validate(self, config: ScenarioConfig):
        if len(self.channel) != config.N or len(self.power_level) != 2 * config.N:
            raise ValueError(
                f"allocation sized for N={len(self.channel)}, config has N={config.N}"
            )
        if any(not 0 <= c < config.K for c in self.channel):
            raise ValueError(f"channel index out of range: {self.channel}")
        if any(not 0 <= p < config.L for p in self.power_level):
            raise ValueError(f"power level out of range: {self.power_level}")

    @classmethod
    def all_off(cls, config: ScenarioConfig) -> "Allocation":
        return cls((0,) * config.N, (0,) * (2 * config.N))


@dataclass(frozen=True)
class RateReport:
    se_due: np.ndarray  # [2N]
    se_cue: np.ndarray  # [K]
    sum_due_se: float
    feasible: bool


def noise_power(config: ScenarioConfig) -> float:
    """Thermal noise over the band in watts."""
    return 10.0 ** ((config.noise_density - 30.0) / 10.0) * config.bandwidth


def eta_linear(config: ScenarioConfig) -> float:
    return 10.0 ** (config.eta_db / 10.0)


def tx_power(alloc: Allocation, config: ScenarioConfig, user: int) -> float:
    return config.power_levels[alloc.power_level[user]]


def due_interference(H, alloc: Allocation, config: ScenarioConfig, pair: int, user: int) -> float:
    """Power received by ``user`` (0 = a, 1 = b) of ``pair`` from co-channel DUEs of other pairs."""
    k = alloc.channel[pair]
    rx = 2 * pair + user
    total = 0.0
    for j in range(config.N):
        if j == pair or alloc.channel[j] != k:
            continue
        for v in (2 * j, 2 * j + 1):
            total += H[k, rx, v] * tx_power(alloc, config, v)
    return total


def self_interference(alloc: Allocation, config: ScenarioConfig, pair: int, user: int) -> float:
    return eta_linear(config) * tx_power(alloc, config, 2 * pair + user)


def se_due(H, alloc: Allocation, config: ScenarioConfig, pair: int, user: int) -> float:
    k = alloc.channel[pair]
    rx = 2 * pair + user
    partner = 2 * pair + (1 - user)
    cue = config.n_nodes - 1
    signal = H[k, rx, partner] * tx_power(alloc, config, partner)
    denom = noise_power(config) + due_interference(H, alloc, config, pair, user)
    denom = denom + H[k, rx, cue] * config.cue_power
    denom = denom + self_interference(alloc, config, pair, user)
    return math.log2(1.0 + signal / denom)


def se_cue(H, alloc: Allocation, config: ScenarioConfig, channel: int) -> float:
    bs = config.n_nodes - 1
    interference = 0.0
    for u in range(2 * config.N):
        if alloc.channel[u // 2] == channel:
            interference += H[channel, bs, u] * tx_power(alloc, config, u)
    signal = H[channel, bs, bs] * config.cue_power
    return math.log2(1.0 + signal / (noise_power(config) + interference))


def evaluate(H, alloc: Allocation, config: ScenarioConfig) -> RateReport:
    alloc.validate(config)
    due = np.array([se_due(H, alloc, config, u // 2, u % 2) for u in range(2 * config.N)])
    cue = np.array([se_cue(H, alloc, config, k) for k in range(config.K)])
    total = 0.0
    for value in due:
        total += value
    feasible = bool(np.all(cue > config.cue_thr))
    return RateReport(se_due=due, se_cue=cue, sum_due_se=float(total), feasible=feasible)
