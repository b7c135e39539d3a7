"""Scenario configuration and its INI-file loader."""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


def default_power_levels(n_levels: int = 8, p_max: float = 0.2) -> tuple[float, ...]:
    """Uniform grid from 0 W to `p_max` inclusive, `n_levels` values."""
    return tuple(float(p_max * i / (n_levels - 1)) for i in range(n_levels))


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical constants of the single-cell full-duplex D2D scenario.

    Power levels are indexed from 0; level 0 is always 0 W so that an
    all-off allocation exists.
    """

    N: int = 2
    K: int = 2
    area_x: float = 100.0
    area_y: float = 100.0
    d2d_max_dist: float = 30.0
    pl_coeff: float = 10 ** 3.453
    pl_exp: float = 3.8
    noise_density: float = -173.0  # dBm/Hz
    bandwidth: float = 1e7
    eta_db: float = -100.0
    cue_power: float = 0.2
    power_levels: tuple[float, ...] = field(default_factory=default_power_levels)
    cue_thr: float = 0.5
    min_link_dist: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "power_levels", tuple(float(p) for p in self.power_levels))
        self.validate()

    @property
    def L(self) -> int:
        return len(self.power_levels)

    @property
    def n_nodes(self) -> int:
        """Receiver/transmitter axis length, 2N DUEs plus the BS (or CUE)."""
        return 2 * self.N + 1

    @property
    def csi_shape(self) -> tuple[int, int, int]:
        return (self.K, self.n_nodes, self.n_nodes)

    def validate(self):
        if self.N < 1 or self.K < 1:
            raise ConfigError(f"need N >= 1 and K >= 1, got N={self.N}, K={self.K}")
        if self.N > 127 or self.K > 255 or self.L > 255:
            raise ConfigError("N, K and L must fit the 8-bit label encoding")
        if self.L < 2:
            raise ConfigError(f"need at least 2 power levels, got {self.L}")
        levels = np.asarray(self.power_levels)
        if levels[0] != 0.0:
            raise ConfigError("the first power level must be 0 W")
        if np.any(np.diff(levels) <= 0):
            raise ConfigError("power levels must be strictly increasing")
        positive = dict(
            area_x=self.area_x, area_y=self.area_y, d2d_max_dist=self.d2d_max_dist,
            pl_coeff=self.pl_coeff, pl_exp=self.pl_exp, bandwidth=self.bandwidth,
            cue_power=self.cue_power, min_link_dist=self.min_link_dist,
        )
        for name, value in positive.items():
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive and finite, got {value}")
        if not np.isfinite(self.eta_db) or not np.isfinite(self.noise_density):
            raise ConfigError("eta_db and noise_density must be finite")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["power_levels"] = list(self.power_levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


_INT_KEYS = {"N", "K"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "power_levels":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if key in _INT_KEYS:
        return int(raw)
    return float(eval_number(raw))


def eval_number(raw: str) -> float:
    """Parse a float, also accepting ``10^x`` / ``10**x`` powers of ten."""
    raw = raw.replace(" ", "")
    for op in ("10**", "10^"):
        if raw.startswith(op):
            return 10.0 ** float(raw[len(op):])
    return float(raw)


def load_config(path: str | Path | None, overrides: dict | None = None) -> tuple[ScenarioConfig, dict]:
    """Read an INI file with ``[scenario]`` and optional ``[training]`` sections.

    Returns the scenario config and the raw training section (strings) for
    the caller to coerce. ``overrides`` are applied to the scenario section
    after the file is read.
    """
    values: dict = {}
    training: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(str(path))
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keep N/K case
        parser.read(path)
        if parser.has_section("scenario"):
            for key, raw in parser.items("scenario"):
                values[key] = _parse_value(key, raw)
        if parser.has_section("training"):
            training = dict(parser.items("training"))
        if "levels" in values:
            raise ConfigError("use power_levels, not levels")
    if "L" in values:
        n_levels = int(values.pop("L"))
        values.setdefault("power_levels", default_power_levels(n_levels))
    if overrides:
        values.update(overrides)
    try:
        return ScenarioConfig.from_dict(values), training
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
