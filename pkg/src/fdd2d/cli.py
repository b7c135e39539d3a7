"""Command-line entry point: ``fdd2d {gen,train,eval,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 bad input (missing file,
unparsable config, bad flag). Failures print one JSON line on stderr:
``{"error": <type>, "message": <text>, "path": <path or null>}``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import __version__, allocators, dataset, evaluation, models
from .config import ConfigError, load_config

log = logging.getLogger("fdd2d")

EXIT_RUNTIME = 1
EXIT_INPUT = 2


class InputError(Exception):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _scenario_config(args):
    from .config import _parse_value
    overrides = {k: _parse_value(k, v) for k, v in _parse_overrides(args.set).items()}
    if "L" in overrides:
        from .config import default_power_levels
        overrides.setdefault("power_levels", default_power_levels(int(overrides.pop("L"))))
    return load_config(args.config, overrides)


def _require(path):
    if path is not None and not Path(path).exists():
        raise InputError(f"no such file: {path}", path=str(path))
    return path


@contextlib.contextmanager
def _determinism(enabled):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _progress(label):
    def report(done, total):
        if done == total or done % 2048 == 0:
            log.info("%s: %d/%d samples", label, done, total)
    return report


# ---------------------------------------------------------------- subcommands


def cmd_gen(args):
    _require(args.config)
    _require(args.stats_from)
    config, _ = _scenario_config(args)
    workers = 1 if args.deterministic else args.workers
    log.info("resolved config: %s", config.to_json())
    log.info("seed=%d split=%s samples=%d workers=%s", args.seed, args.split, args.samples, workers)
    ds = dataset.generate_and_label(config, args.samples, args.seed, args.split, workers,
                                    progress=_progress(f"gen {args.split}"))
    if args.stats_from:
        src = dataset.load(args.stats_from)
        if src.stats is None:
            raise InputError(f"{args.stats_from} carries no statistics", path=args.stats_from)
        if src.config != config:
            raise InputError("statistics source was generated with a different config", path=args.stats_from)
        ds = ds.with_stats(src.stats, f"{Path(args.stats_from).name}")
    elif args.split == "train":
        ds = ds.with_stats(dataset.compute_stats(ds.csi), "self")
    dataset.save(ds, args.out)
    log.info("wrote %d samples to %s", len(ds), args.out)
    return 0


def _hyperparams(args, training_section):
    values = dict(models.Hyperparams().to_dict())
    values.update(models.Hyperparams.from_dict(training_section).to_dict() if training_section else {})
    for key in ("epochs", "seed", "batch", "lr", "dropout"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return models.Hyperparams.from_dict(values)


def cmd_train(args):
    _require(args.data)
    _require(args.dev)
    _require(args.config)
    _, training = load_config(args.config) if args.config else (None, {})
    hp = _hyperparams(args, training)
    train_ds = dataset.load(args.data)
    dev_ds = dataset.load(args.dev) if args.dev else None
    if dev_ds is not None and dev_ds.config != train_ds.config:
        raise InputError("train and dev files were generated with different configs", path=args.dev)
    log.info("resolved config: %s", train_ds.config.to_json())
    log.info("model=%s hyperparams=%s", args.model, json.dumps(hp.to_dict(), sort_keys=True))
    model, history = models.train(args.model, train_ds, dev_ds, hp)
    meta = {
        "train_data": {"file": Path(args.data).name, **train_ds.meta},
        "dev_data": {"file": Path(args.dev).name, **dev_ds.meta} if dev_ds else None,
        "best_epoch": model.best_epoch,
        "history": history,
    }
    models.save_checkpoint(model, args.out, meta)
    log.info("best epoch %d; checkpoint written to %s", model.best_epoch, args.out)
    return 0


def cmd_eval(args):
    _require(args.data)
    for c in args.checkpoint or []:
        _require(c)
    ds = dataset.load(args.data)
    log.info("resolved config: %s", ds.config.to_json())
    log.info("data seed=%s split=%s, baseline seed=%d", ds.meta.get("seed"), ds.meta.get("split"), args.seed)
    methods = {}
    checkpoints = {}
    for path in args.checkpoint or []:
        model, meta = models.load_checkpoint(path)
        if model.config != ds.config:
            raise InputError("checkpoint config differs from the dataset config", path=path)
        name = model.kind
        while name in methods:
            name += "'"
        ch, pw = evaluation.predict(model, ds)
        methods[name] = evaluation.method_metrics(ds, ch, pw, models.count_parameters(model))
        checkpoints[name] = {"file": Path(path).name, "hyperparams": meta["hyperparams"],
                             "best_epoch": meta.get("best_epoch")}
    for name in args.baselines or []:
        ch, pw = evaluation.baseline_predictions(name, ds, seed=args.seed)
        methods[name] = evaluation.method_metrics(ds, ch, pw)
    if not methods:
        raise InputError("nothing to evaluate: pass --checkpoint and/or --baselines")
    report = evaluation.build_report(ds, methods, {"checkpoints": checkpoints, "baseline_seed": args.seed})
    print(evaluation.format_table(report))
    if args.report:
        for p in evaluation.write_report(report, args.report):
            log.info("wrote %s", p)
    return 0


def cmd_bench(args):
    _require(args.data)
    _require(args.checkpoint)
    ds = dataset.load(args.data)
    log.info("resolved config: %s", ds.config.to_json())
    if args.exhaustive:
        seconds = evaluation.bench_exhaustive(ds, args.repeats)
        what = "exhaustive"
    else:
        model, _ = models.load_checkpoint(args.checkpoint)
        seconds = evaluation.bench_model(model, ds, args.repeats)
        what = model.kind
    result = {"method": what, "samples": len(ds), "seconds": seconds, "repeats": args.repeats,
              "environment": evaluation.environment()}
    print(json.dumps(result, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="fdd2d", description="Full-duplex D2D resource allocation toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--deterministic", action="store_true",
                   help="single worker, single BLAS thread; bit-reproducible outputs")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate and label one dataset split")
    g.add_argument("--config", help="INI file with a [scenario] section")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario key")
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--split", default="train", help="split name; selects an independent seed stream")
    g.add_argument("--stats-from", help="inherit normalization statistics from this train file")
    g.add_argument("--workers", type=int, default=dataset.default_workers())
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--model", required=True, choices=models.MODEL_KINDS)
    t.add_argument("--data", required=True)
    t.add_argument("--dev")
    t.add_argument("--config", help="INI file; its [training] section sets hyperparameters")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--dropout", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score checkpoints and baselines on a dataset")
    e.add_argument("--checkpoint", action="append")
    e.add_argument("--data", required=True)
    e.add_argument("--baselines", nargs="*", choices=["erp", "random", "optimal", "off"], default=[])
    e.add_argument("--seed", type=int, default=0, help="seed of the random baseline")
    e.add_argument("--report", help="metrics JSON path; table and CDF files are written beside it")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time inference or exhaustive labeling over a dataset")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--exhaustive", action="store_true")
    b.add_argument("--data", required=True)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def _fail(exc, code, path=None):
    line = {"error": type(exc).__name__, "message": str(exc), "path": path}
    print(json.dumps(line), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with _determinism(args.deterministic):
            return args.func(args)
    except InputError as exc:
        return _fail(exc, EXIT_INPUT, exc.path)
    except FileNotFoundError as exc:
        return _fail(exc, EXIT_INPUT, exc.filename or str(exc))
    except (ConfigError, dataset.DatasetFormatError, ValueError) as exc:
        return _fail(exc, EXIT_INPUT)
    except (allocators.InfeasibleSample, models.NonFiniteLoss, RuntimeError) as exc:
        return _fail(exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
