#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Covers exhaustive labeling, batched SE evaluation and the convolution
forward/backward pass. Both backends are timed in one process and their
outputs compared.

    python benchmarks/bench_kernels.py --samples 50 --repeats 3
"""

import argparse
import json
import sys
import time

import numpy as np

from fdd2d import _kernels, scenario
from fdd2d.config import ScenarioConfig
from fdd2d.rates import eta_linear, noise_power


def median_time(fn, repeats):
    fn()  # warm-up, includes compilation on the numba path
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def make_inputs(n_samples, seed):
    cfg = ScenarioConfig()
    rng = np.random.default_rng(seed)
    H = np.stack([scenario.build_csi(scenario.place_users(cfg, rng), cfg, rng) for _ in range(n_samples)])
    return cfg, H, rng


def bench_exhaustive(cfg, H, repeats):
    args = (np.asarray(cfg.power_levels), noise_power(cfg), eta_linear(cfg), cfg.cue_power, cfg.cue_thr)
    out, times = {}, {}
    for backend in ("numpy", "numba"):
        def run(backend=backend):
            return [_kernels.exhaustive_search(h, *args, backend=backend) for h in H]
        times[backend] = median_time(run, repeats)
        out[backend] = run()
    same = all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
               for a, b in zip(out["numpy"], out["numba"]))
    return times, same


def bench_evaluate(cfg, H, rng, repeats):
    S = H.shape[0]
    ch = rng.integers(0, cfg.K, (S, cfg.N))
    pl = rng.integers(0, cfg.L, (S, 2 * cfg.N))
    args = (H, ch, pl, np.asarray(cfg.power_levels), noise_power(cfg), eta_linear(cfg), cfg.cue_power)
    times, out = {}, {}
    for backend in ("numpy", "numba"):
        times[backend] = median_time(lambda b=backend: _kernels.evaluate_batch(*args, backend=b), repeats)
        out[backend] = _kernels.evaluate_batch(*args, backend=backend)
    same = all(np.allclose(a, b, rtol=1e-15, atol=0) for a, b in zip(out["numpy"], out["numba"]))
    return times, same


def bench_conv(batch, repeats, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, 2, 5, 5))
    w = rng.normal(size=(8, 2, 2, 2))
    g = rng.normal(size=(batch, 8, 4, 4))
    times, out = {}, {}
    for backend in ("numpy", "numba"):
        def run(b=backend):
            return _kernels.conv2d_forward(x, w, backend=b), _kernels.conv2d_backward(x, w, g, backend=b)
        times[backend] = median_time(run, repeats)
        out[backend] = run()
    fa, (gxa, gwa) = out["numpy"]
    fb, (gxb, gwb) = out["numba"]
    same = all(np.allclose(a, b, rtol=1e-12, atol=1e-12) for a, b in ((fa, fb), (gxa, gxb), (gwa, gwb)))
    return times, same


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=50, help="CSI samples for the labeling benchmarks")
    p.add_argument("--conv-batch", type=int, default=1024)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print one JSON object instead of a table")
    args = p.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not available (missing or FDD2D_DISABLE_NUMBA set); nothing to compare", file=sys.stderr)
        return 1

    cfg, H, rng = make_inputs(args.samples, args.seed)
    rows = {
        f"exhaustive x{args.samples}": bench_exhaustive(cfg, H, args.repeats),
        f"evaluate x{args.samples}": bench_evaluate(cfg, H, rng, args.repeats),
        f"conv fwd+bwd B={args.conv_batch}": bench_conv(args.conv_batch, args.repeats, args.seed),
    }
    if args.json:
        print(json.dumps({k: {"numpy_s": t["numpy"], "numba_s": t["numba"], "match": same}
                          for k, (t, same) in rows.items()}, indent=2))
        return 0
    print(f"{'kernel':<28}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}  match")
    for name, (t, same) in rows.items():
        print(f"{name:<28}{t['numpy']:>12.4f}{t['numba']:>12.4f}{t['numpy'] / t['numba']:>9.1f}x  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
