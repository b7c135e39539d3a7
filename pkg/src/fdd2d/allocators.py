"""Reference allocations: exhaustive optimum, ERP baseline, random feasible."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .config import ScenarioConfig
from .rates import Allocation, evaluate, eta_linear, noise_power

MAX_RANDOM_DRAWS = 10_000


class InfeasibleSample(Exception):
    """Even the all-off allocation violates the CUE threshold."""


def n_combinations(config: ScenarioConfig) -> int:
    return config.K ** config.N * config.L ** (2 * config.N)


def exhaustive_optimal(H, config: ScenarioConfig, backend: str | None = None) -> tuple[Allocation, float]:
    """Best feasible allocation over all K^N * L^(2N) combinations.

    Ties go to the lexicographically smallest (channel, power) pair.
    """
    ch, pl, best, _ = _kernels.exhaustive_search(
        H, np.asarray(config.power_levels), noise_power(config), eta_linear(config),
        config.cue_power, config.cue_thr, backend=backend,
    )
    if best < 0:
        raise InfeasibleSample("all-off allocation violates the CUE threshold")
    return Allocation(ch, pl), best


def erp_channels(H, config: ScenarioConfig) -> tuple[int, ...]:
    """Each pair takes the channel maximizing min(gain a<-b, gain b<-a)."""
    channels = []
    for i in range(config.N):
        a, b = 2 * i, 2 * i + 1
        mutual = np.minimum(H[:, a, b], H[:, b, a])
        channels.append(int(np.argmax(mutual)))
    return tuple(channels)


def erp(H, config: ScenarioConfig) -> Allocation:
    """Equally reduced power: all DUEs step down one level together until the CUEs are served."""
    channels = erp_channels(H, config)
    for level in range(config.L - 1, -1, -1):
        alloc = Allocation(channels, (level,) * (2 * config.N))
        if evaluate(H, alloc, config).feasible:
            return alloc
    raise InfeasibleSample("all-off allocation violates the CUE threshold")


def random_feasible(H, config: ScenarioConfig, seed) -> Allocation:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(MAX_RANDOM_DRAWS):
        alloc = Allocation(
            rng.integers(0, config.K, size=config.N),
            rng.integers(0, config.L, size=2 * config.N),
        )
        if evaluate(H, alloc, config).feasible:
            return alloc
    return Allocation.all_off(config)
