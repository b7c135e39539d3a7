"""Central finite-difference checks for stored parameters and layer inputs."""

from __future__ import annotations

import numpy as np

from .params import ParameterStore


def relative_error(numeric, analytic) -> float:
    """||numeric - analytic|| / max(||numeric||, ||analytic||); 0 when both vanish."""
    num = np.linalg.norm(numeric)
    ana = np.linalg.norm(analytic)
    scale = max(num, ana)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(np.asarray(numeric) - np.asarray(analytic)) / scale)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place).

    ``index`` restricts the probe to a subset of flat positions; other
    entries of the result are left at zero.
    """
    flat = x.reshape(-1)
    out = np.zeros(flat.size)
    positions = range(flat.size) if index is None else index
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def check_store(f, store: ParameterStore, h: float = 1e-5, max_entries: int | None = None, seed=0):
    """Compare ``store`` gradients (already filled by a backward pass) to finite differences of ``f``.

    Returns {name: relative error}. With ``max_entries`` only a random
    subset of each tensor is probed and compared.
    """
    rng = np.random.default_rng(seed)
    errors = {}
    for name in store.names(trainable=True):
        value = store[name]
        analytic = store.grad(name).reshape(-1).copy()
        if max_entries is not None and value.size > max_entries:
            idx = np.sort(rng.choice(value.size, max_entries, replace=False))
        else:
            idx = np.arange(value.size)
        numeric = numeric_grad(f, value, h, idx).reshape(-1)
        errors[name] = relative_error(numeric[idx], analytic[idx])
    return errors
