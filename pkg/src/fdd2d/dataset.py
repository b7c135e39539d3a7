"""Labeled sample generation, dB standardization, model views and the ``.fdd`` file format.

File layout (all little-endian)::

    magic      8 bytes  b"FDD2DSET"
    version    u16
    N, K, L    u16 x 3
    count      u64
    meta_len   u32
    meta       UTF-8 JSON: config snapshot, seed, split, stats source
    has_stats  u8
    mean, std  f64 x K(2N+1)^2 each, only if has_stats
    records    count x (gains f64 x K(2N+1)^2, channel u8 x N, level u8 x 2N, optimal SE f64)
    crc32      u32 over every preceding byte (zlib polynomial)
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import allocators, scenario
from .config import ScenarioConfig
from .rates import Allocation

MAGIC = b"FDD2DSET"
VERSION = 1
STD_FLOOR = 1e-6
MAX_REJECTIONS = 1000
SPLIT_CODES = {"train": 0, "dev": 1, "test": 2}

_HEAD = struct.Struct("<8sHHHHQI")


class DatasetFormatError(ValueError):
    pass


class BadMagic(DatasetFormatError):
    pass


class VersionMismatch(DatasetFormatError):
    pass


class TruncatedFile(DatasetFormatError):
    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class ChecksumError(DatasetFormatError):
    pass


class MissingStats(RuntimeError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    csi: np.ndarray  # [K, 2N+1, 2N+1]
    label_channel: np.ndarray  # [N]
    label_power: np.ndarray  # [2N]
    optimal_sum_se: float

    @property
    def allocation(self) -> Allocation:
        return Allocation(self.label_channel, self.label_power)


@dataclass(frozen=True)
class NormStats:
    """Per-position mean and std of 10*log10(gain) over a training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std shape mismatch")


@dataclass
class Dataset:
    config: ScenarioConfig
    csi: np.ndarray  # [S, K, R, R]
    label_channel: np.ndarray  # [S, N] uint8
    label_power: np.ndarray  # [S, 2N] uint8
    optimal_se: np.ndarray  # [S]
    stats: NormStats | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.csi.shape[0]

    def __getitem__(self, i) -> LabeledSample:
        return LabeledSample(self.csi[i], self.label_channel[i], self.label_power[i], float(self.optimal_se[i]))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.config, self.csi[index], self.label_channel[index], self.label_power[index],
            self.optimal_se[index], self.stats, dict(self.meta),
        )

    def with_stats(self, stats: NormStats | None, source: str) -> "Dataset":
        meta = dict(self.meta, stats_source=source)
        return Dataset(self.config, self.csi, self.label_channel, self.label_power, self.optimal_se, stats, meta)

    def normalized(self) -> np.ndarray:
        if self.stats is None:
            raise MissingStats("dataset carries no normalization statistics")
        return normalize(self.csi, self.stats)


# ---------------------------------------------------------------- generation


def _split_code(split: str) -> int:
    return SPLIT_CODES.get(split, zlib.crc32(split.encode()) + len(SPLIT_CODES))


def sample_seed(seed: int, split: str, index: int, attempt: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(_split_code(split), index, attempt))


def generate_one(config: ScenarioConfig, seed: int, split: str, index: int, backend=None):
    """Draw and label sample ``index``; infeasible draws are replaced by the next attempt."""
    for attempt in range(MAX_REJECTIONS):
        layout_ss, fading_ss = sample_seed(seed, split, index, attempt).spawn(2)
        layout = scenario.place_users(config, np.random.default_rng(layout_ss))
        H = scenario.build_csi(layout, config, np.random.default_rng(fading_ss))
        try:
            alloc, best = allocators.exhaustive_optimal(H, config, backend=backend)
        except allocators.InfeasibleSample:
            continue
        return H, alloc, best
    raise scenario.GenerationError(f"sample {index}: {MAX_REJECTIONS} infeasible draws in a row")


def _generate_chunk(args):
    config, seed, split, start, stop = args
    return [generate_one(config, seed, split, i) for i in range(start, stop)]


def default_workers() -> int:
    return max(1, int(os.environ.get("FDD2D_WORKERS", "1")))


def generate_and_label(config: ScenarioConfig, n: int, seed: int, split: str = "train",
                       workers: int | None = None, progress=None) -> Dataset:
    """Generate ``n`` labeled samples; output is independent of ``workers``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    workers = default_workers() if workers is None else workers
    chunk = 256
    jobs = [(config, seed, split, s, min(s + chunk, n)) for s in range(0, n, chunk)]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_generate_chunk, jobs):
                results.extend(part)
                if progress:
                    progress(len(results), n)
    else:
        for job in jobs:
            results.extend(_generate_chunk(job))
            if progress:
                progress(len(results), n)
    csi = np.stack([r[0] for r in results])
    ch = np.array([r[1].channel for r in results], dtype=np.uint8)
    pl = np.array([r[1].power_level for r in results], dtype=np.uint8)
    se = np.array([r[2] for r in results], dtype=np.float64)
    meta = {"seed": int(seed), "split": split, "stats_source": None}
    return Dataset(config, csi, ch, pl, se, None, meta)


# ---------------------------------------------------------------- normalization


def to_db(gains):
    return 10.0 * np.log10(gains)


def compute_stats(csi: np.ndarray) -> NormStats:
    """Per-position dB statistics over a batch of tensors ``[S, ...]``."""
    db = to_db(csi)
    return NormStats(db.mean(axis=0), np.maximum(db.std(axis=0), STD_FLOOR))


def normalize(csi, stats: NormStats | None):
    if stats is None:
        raise MissingStats("normalization statistics are required")
    return (to_db(csi) - stats.mean) / stats.std


def denormalize(x, stats: NormStats):
    return 10.0 ** ((x * stats.std + stats.mean) / 10.0)


# ---------------------------------------------------------------- model views
# Batch forms take normalized tensors [B, K, R, R]; single-sample forms
# take a LabeledSample and the stats to normalize it with.


def centralized_batch(x):
    return x


def flat_batch(x):
    return x.reshape(x.shape[0], -1)


def per_user_batch(x):
    """[B, K, R(rx), R(tx)] -> [B, R(rx), R(tx), K]; entry [b, i, t, k] = x[b, k, i, t]."""
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def view_centralized(sample: LabeledSample, stats: NormStats):
    return normalize(sample.csi, stats)


def view_flat(sample: LabeledSample, stats: NormStats):
    return normalize(sample.csi, stats).reshape(-1)


def view_per_user(sample: LabeledSample, stats: NormStats, user: int):
    """Receiver ``user``'s [2N+1, K] slice; ``user == 2N`` is the BS."""
    n_nodes = sample.csi.shape[1]
    if not 0 <= user < n_nodes:
        raise IndexError(f"user index {user} outside 0..{n_nodes - 1}")
    return normalize(sample.csi, stats)[:, user, :].T


# ---------------------------------------------------------------- file format


def record_dtype(config: ScenarioConfig) -> np.dtype:
    return np.dtype([
        ("gains", "<f8", config.csi_shape),
        ("channel", "u1", (config.N,)),
        ("level", "u1", (2 * config.N,)),
        ("se", "<f8"),
    ])


def to_bytes(ds: Dataset) -> bytes:
    cfg = ds.config
    meta = json.dumps({"config": cfg.to_dict(), **ds.meta}, sort_keys=True).encode()
    parts = [_HEAD.pack(MAGIC, VERSION, cfg.N, cfg.K, cfg.L, len(ds), len(meta)), meta]
    if ds.stats is None:
        parts.append(b"\x00")
    else:
        parts += [b"\x01", ds.stats.mean.astype("<f8").tobytes(), ds.stats.std.astype("<f8").tobytes()]
    rec = np.empty(len(ds), dtype=record_dtype(cfg))
    rec["gains"] = ds.csi
    rec["channel"] = ds.label_channel
    rec["level"] = ds.label_power
    rec["se"] = ds.optimal_se
    parts.append(rec.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(buf: bytes) -> Dataset:
    if len(buf) < _HEAD.size:
        if not MAGIC.startswith(buf[:8]):
            raise BadMagic("not a dataset file")
        raise TruncatedFile("file shorter than its header")
    magic, version, N, K, L, count, meta_len = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {VERSION}")
    pos = _HEAD.size
    if len(buf) < pos + meta_len + 1:
        raise TruncatedFile("file ends inside the metadata block")
    meta = json.loads(buf[pos:pos + meta_len].decode())
    pos += meta_len
    config = ScenarioConfig.from_dict(meta.pop("config"))
    if (config.N, config.K, config.L) != (N, K, L):
        raise DatasetFormatError("header dimensions disagree with the config snapshot")
    has_stats = buf[pos]
    pos += 1
    stats = None
    n_pos = int(np.prod(config.csi_shape))
    if has_stats:
        need = 16 * n_pos
        if len(buf) < pos + need:
            raise TruncatedFile("file ends inside the statistics block")
        mean = np.frombuffer(buf, "<f8", n_pos, pos).reshape(config.csi_shape).copy()
        std = np.frombuffer(buf, "<f8", n_pos, pos + 8 * n_pos).reshape(config.csi_shape).copy()
        stats = NormStats(mean, std)
        pos += need
    dt = record_dtype(config)
    available = len(buf) - pos - 4
    if available < count * dt.itemsize:
        index = max(available, 0) // dt.itemsize
        raise TruncatedFile(f"truncated at sample {index} of {count}", sample_index=index)
    if available > count * dt.itemsize:
        raise DatasetFormatError("trailing bytes after the last record")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:len(buf) - 4]) != crc:
        raise ChecksumError("crc32 mismatch")
    rec = np.frombuffer(buf, dt, count, pos)
    return Dataset(
        config,
        rec["gains"].astype(np.float64),
        rec["channel"].copy(),
        rec["level"].copy(),
        rec["se"].astype(np.float64),
        stats,
        meta,
    )


def save(ds: Dataset, path):
    Path(path).write_bytes(to_bytes(ds))


def load(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    return from_bytes(path.read_bytes())
