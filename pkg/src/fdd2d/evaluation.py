"""Accuracy, achieved-SE outcomes, CDF data, timing and the metrics report."""

from __future__ import annotations

import json
import platform
import time
from pathlib import Path

import numpy as np

from . import _kernels, allocators
from .dataset import Dataset
from .rates import eta_linear, noise_power

SCHEMA = "fdd2d.metrics"
SCHEMA_VERSION = 1


def accuracy_of(ch_pred, pw_pred, ds: Dataset) -> tuple[float, float]:
    """Per-pair channel accuracy and per-user power accuracy."""
    return (float(np.mean(ch_pred == ds.label_channel)),
            float(np.mean(pw_pred == ds.label_power)))


def predict(model, ds: Dataset):
    from .models import decode_batch
    return decode_batch(*model.predict_csi(ds.csi))


def accuracy(model, ds: Dataset) -> tuple[float, float]:
    return accuracy_of(*predict(model, ds), ds)


def se_outcomes(ds: Dataset, ch_pred, pw_pred) -> np.ndarray:
    """Mean DUE SE per sample; 0 where any CUE falls to or below threshold."""
    cfg = ds.config
    se_due, se_cue = _kernels.evaluate_batch(
        ds.csi, ch_pred, pw_pred, np.asarray(cfg.power_levels),
        noise_power(cfg), eta_linear(cfg), cfg.cue_power,
    )
    feasible = np.all(se_cue > cfg.cue_thr, axis=1)
    return np.where(feasible, se_due.mean(axis=1), 0.0)


def model_se_outcomes(model, ds: Dataset) -> np.ndarray:
    return se_outcomes(ds, *predict(model, ds))


def baseline_predictions(name: str, ds: Dataset, seed: int = 0):
    """Channel/level arrays for ``optimal``, ``erp``, ``random`` or ``off``."""
    cfg = ds.config
    S = len(ds)
    if name == "optimal":
        return ds.label_channel.astype(np.int64), ds.label_power.astype(np.int64)
    if name == "off":
        return np.zeros((S, cfg.N), np.int64), np.zeros((S, 2 * cfg.N), np.int64)
    if name == "erp":
        allocs = [allocators.erp(ds.csi[s], cfg) for s in range(S)]
    elif name == "random":
        rng = np.random.default_rng(seed)
        allocs = [allocators.random_feasible(ds.csi[s], cfg, rng) for s in range(S)]
    else:
        raise ValueError(f"unknown baseline {name!r}")
    return (np.array([a.channel for a in allocs], np.int64),
            np.array([a.power_level for a in allocs], np.int64))


def cdf(values) -> np.ndarray:
    """Rows of (value, fraction of samples <= value) in ascending order, one per sample."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.size
    return np.column_stack([v, np.arange(1, n + 1) / n])


def zero_rate(values) -> float:
    v = np.asarray(values)
    return float(np.mean(v == 0.0)) if v.size else 0.0


def bench(fn, repeats: int = 3, warmup: bool = True) -> float:
    """Median wall-clock seconds of ``fn()`` over ``repeats`` runs."""
    if warmup:
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_exhaustive(ds: Dataset, repeats: int = 3, backend: str | None = None) -> float:
    def run():
        for s in range(len(ds)):
            allocators.exhaustive_optimal(ds.csi[s], ds.config, backend=backend)
    # warm up on one sample only: compilation, not the whole set
    allocators.exhaustive_optimal(ds.csi[0], ds.config, backend=backend)
    return bench(run, repeats, warmup=False)


def bench_model(model, ds: Dataset, repeats: int = 3) -> float:
    return bench(lambda: predict(model, ds), repeats)


def environment() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "backend": _kernels.BACKEND,
    }


def method_metrics(ds: Dataset, ch_pred, pw_pred, parameters: dict | None = None):
    se = se_outcomes(ds, ch_pred, pw_pred)
    acc_c, acc_p = accuracy_of(ch_pred, pw_pred, ds)
    return {
        "channel_accuracy": acc_c,
        "power_accuracy": acc_p,
        "mean_se": float(se.mean()),
        "zero_rate": zero_rate(se),
        "parameters": parameters,
    }, se


def build_report(ds: Dataset, methods: dict, extra: dict | None = None) -> dict:
    """``methods`` maps a name to (metrics dict, per-sample SE array)."""
    return {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "config": ds.config.to_dict(),
        "dataset": {"samples": len(ds), **ds.meta},
        "methods": {name: m for name, (m, _) in methods.items()},
        "cdf": {name: cdf(se).tolist() for name, (_, se) in methods.items()},
        **(extra or {}),
    }


def format_table(report: dict) -> str:
    rows = [f"{'method':<16}{'channel acc':>12}{'power acc':>11}{'mean SE':>10}{'SE=0 rate':>11}{'params':>10}"]
    for name, m in report["methods"].items():
        params = m.get("parameters") or {}
        rows.append(
            f"{name:<16}{m['channel_accuracy']:>12.4f}{m['power_accuracy']:>11.4f}"
            f"{m['mean_se']:>10.4f}{m['zero_rate']:>11.4f}{params.get('total', ''):>10}"
        )
    return "\n".join(rows)


def write_report(report: dict, path) -> list[Path]:
    """Write the JSON report, a text table next to it, and one two-column CDF file per method."""
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    written = [path]
    table = path.with_suffix(".txt")
    table.write_text(format_table(report) + "\n")
    written.append(table)
    for name, rows in report["cdf"].items():
        cdf_path = path.with_name(f"{path.stem}.{name}.cdf.txt")
        with cdf_path.open("w") as fh:
            fh.write("# se_bps_hz cumulative_fraction\n")
            for value, frac in rows:
                fh.write(f"{value!r} {frac!r}\n")
        written.append(cdf_path)
    return written


def read_report(path) -> dict:
    report = json.loads(Path(path).read_text())
    if report.get("schema") != SCHEMA:
        raise ValueError(f"{path}: not a metrics report")
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {report.get('schema_version')}")
    return report


def read_cdf(path) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=2)
