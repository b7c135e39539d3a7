"""User placement and the per-channel gain tensor.

Node ordering on both tensor axes is ``(1a, 1b, 2a, 2b, ..., Na, Nb, X)``
where the last index ``X`` is the BS on the receiver axis and the CUE of
channel ``k`` on the transmitter axis. ``gains[k, rx, tx]`` is the linear
power gain from ``tx`` to ``rx`` on channel ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig

GAIN_FLOOR = 1e-30
MAX_PLACEMENT_TRIES = 10_000


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class UserLayout:
    cue_pos: np.ndarray  # [K, 2]
    due_pos: np.ndarray  # [N, 2, 2], (pair, a/b, xy)
    bs_pos: np.ndarray  # [2]

    def tx_positions(self) -> np.ndarray:
        """Transmitter-axis positions for channel-independent nodes, [2N, 2]."""
        return self.due_pos.reshape(-1, 2)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def place_users(config: ScenarioConfig, seed) -> UserLayout:
    """Drop CUEs and D2D pairs uniformly in the area.

    User b of each pair is uniform in the disk of radius ``d2d_max_dist``
    around user a, redrawn until it lands inside the area.
    """
    rng = _as_rng(seed)
    size = np.array([config.area_x, config.area_y])
    cue_pos = rng.uniform(0.0, 1.0, size=(config.K, 2)) * size
    due_pos = np.empty((config.N, 2, 2))
    for i in range(config.N):
        a = rng.uniform(0.0, 1.0, size=2) * size
        for _ in range(MAX_PLACEMENT_TRIES):
            r = config.d2d_max_dist * np.sqrt(rng.uniform())
            theta = rng.uniform(0.0, 2 * np.pi)
            b = a + r * np.array([np.cos(theta), np.sin(theta)])
            if 0.0 <= b[0] <= size[0] and 0.0 <= b[1] <= size[1]:
                break
        else:
            raise GenerationError(f"could not place user b of pair {i} inside the area")
        due_pos[i, 0] = a
        due_pos[i, 1] = b
    return UserLayout(cue_pos=cue_pos, due_pos=due_pos, bs_pos=size / 2.0)


def link_gain(distance, fading_power, config: ScenarioConfig):
    """Path loss times fading power; distances below ``min_link_dist`` are clamped."""
    d = np.maximum(distance, config.min_link_dist)
    return fading_power / (config.pl_coeff * d ** config.pl_exp)


def draw_fading(rng: np.random.Generator, size=None):
    """Circularly symmetric complex Gaussian samples with unit mean power."""
    scale = np.sqrt(0.5)
    re = rng.normal(0.0, scale, size=size)
    im = rng.normal(0.0, scale, size=size)
    return re + 1j * im


def node_distances(layout: UserLayout) -> np.ndarray:
    """Pairwise distances [K, 2N+1, 2N+1] between receiver and transmitter nodes."""
    K = layout.cue_pos.shape[0]
    dues = layout.tx_positions()
    n = dues.shape[0] + 1
    rx = np.vstack([dues, layout.bs_pos[None, :]])  # [2N+1, 2]
    tx = np.broadcast_to(dues, (K, n - 1, 2))
    tx = np.concatenate([tx, layout.cue_pos[:, None, :]], axis=1)  # [K, 2N+1, 2]
    diff = rx[None, :, None, :] - tx[:, None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def build_csi(layout: UserLayout, config: ScenarioConfig, seed) -> np.ndarray:
    """Gain tensor with independent Rayleigh fading per (channel, rx, tx)."""
    rng = _as_rng(seed)
    dist = node_distances(layout)
    h = draw_fading(rng, size=dist.shape)
    gains = link_gain(dist, np.abs(h) ** 2, config)
    return np.maximum(gains, GAIN_FLOOR)
