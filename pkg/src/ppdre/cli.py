"""Command-line entry point: ``ppdre bench | fit | eval``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, worlds
from .io import StandardizedModel, load_model, save_model
from .metrics import _fmt
from .selection import GridPoint, fit_point, validation_loss

logger = logging.getLogger("ppdre")

FIT_METHODS = ("ppdre", "ulsif", "kliep", "logistic")
# hyperparameters used by ``fit`` when none are given
FIT_DEFAULTS = {
    "ppdre": {"K": 2, "J": 100, "lam": 0.5, "lr": 0.1},
    "ulsif": {"lam": 0.1},
    "kliep": {},
    "logistic": {"lr": 0.5},
}


def _csv_list(text, cast=str):
    return [cast(t) for t in text.split(",") if t.strip()] if text else None


def _parse_param(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppdre", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress lines")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a benchmark from a JSON config")
    b.add_argument("--config", required=True, help="JSON run configuration")
    b.add_argument("--out", help="output directory (overrides config)")
    b.add_argument("--seeds", help="comma-separated seeds (overrides config)")
    b.add_argument("--methods", help="comma-separated methods (overrides config)")
    b.add_argument("--workers", type=int, help=f"worker processes (default: ${bench.WORKERS_ENV} or CPU count)")
    b.add_argument("--scenario", help="run only this scenario (overrides config)")

    f = sub.add_parser("fit", help="fit one ratio model and save it as JSON")
    src = f.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="synthetic scenario: toy2d, stabilized_weights or mi_gaussian")
    src.add_argument("--numerator", help="CSV sample from the numerator density p")
    f.add_argument("--denominator", help="CSV sample from the denominator density q")
    f.add_argument("--columns", help="comma-separated CSV columns to use (default: all)")
    f.add_argument("--scenario-param", action="append", default=[], type=_parse_param, metavar="KEY=VALUE",
                   help="scenario parameter, e.g. n=2000 (repeatable)")
    f.add_argument("--method", default="ppdre", choices=FIT_METHODS)
    f.add_argument("--param", action="append", default=[], type=_parse_param, metavar="KEY=VALUE",
                   help="hyperparameter, e.g. K=3 or lam=0.5 (repeatable)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--no-standardize", action="store_true", help="fit on the raw inputs")
    f.add_argument("--model", "--out", dest="model", required=True, help="output model path")

    e = sub.add_parser("eval", help="evaluate a saved model on a CSV of points")
    e.add_argument("--model", required=True)
    e.add_argument("--points", required=True, help="CSV with a header row and one point per row")
    e.add_argument("--out", help="output CSV (default: standard output)")
    return parser


def _load_samples(args):
    if args.scenario:
        if args.scenario not in ("toy2d", "stabilized_weights", "mi_gaussian"):
            raise bench.ConfigError(f"fit supports ratio scenarios toy2d, stabilized_weights, mi_gaussian; got {args.scenario!r}")
        params = dict(bench.SCENARIOS[args.scenario])
        extra = {k for k, _ in args.scenario_param} - set(params)
        if extra:
            raise bench.ConfigError(f"unknown scenario parameter(s): {', '.join(sorted(extra))}")
        params.update(dict(args.scenario_param))
        data = bench._scenario_data(args.scenario, params, args.seed)
        return data.X_p, data.X_q
    if not args.denominator:
        raise bench.ConfigError("--numerator needs --denominator")
    columns = _csv_list(args.columns)
    X_p, _, names_p = worlds.read_csv_table(args.numerator, columns)
    X_q, _, names_q = worlds.read_csv_table(args.denominator, columns)
    if names_p != names_q:
        raise bench.ConfigError(f"column mismatch: numerator has {names_p}, denominator has {names_q}")
    return X_p, X_q


def cmd_fit(args) -> int:
    X_p, X_q = _load_samples(args)
    params = dict(FIT_DEFAULTS[args.method])
    params.update(dict(args.param))
    model_inputs = (X_p, X_q)
    if not args.no_standardize:
        shift, scale = StandardizedModel.fit_transform(X_p, X_q)
        model_inputs = ((X_p - shift) / scale, (X_q - shift) / scale)
    if args.method in ("ulsif", "kliep") and "sigma" not in params:
        from .baselines import median_distance
        params["sigma"] = median_distance(*model_inputs)
    try:
        model = fit_point(GridPoint(args.method, params), *model_inputs, seed=args.seed)
    except TypeError as exc:
        raise bench.ConfigError(f"bad hyperparameter for {args.method}: {exc}") from exc
    if not args.no_standardize:
        model = StandardizedModel(model, shift, scale)
    save_model(model, args.model)
    inner = model.model if isinstance(model, StandardizedModel) else model
    size = f"K={inner.K}" if args.method == "ppdre" else f"b={inner.centers.shape[0]}" if args.method in ("ulsif", "kliep") else "b=0"
    loss = validation_loss(model, X_p, X_q)
    print(f"method={args.method} {size} train_loss={loss:.6g} model={args.model}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    d = model.d
    path = Path(args.points)
    if path.stat().st_size == 0:
        X = np.empty((0, d))
    else:
        X, _, names = worlds.read_csv_table(path)
        if X.shape[1] != d:
            raise bench.ConfigError(f"{path}: row 1 has {X.shape[1]} values but the model expects {d}")
    r = np.asarray(model(X), float).reshape(-1) if X.shape[0] else np.empty(0)
    text = "r_hat\n" + "".join(_fmt(v) + "\n" for v in r)
    if args.out:
        with open(args.out, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    overrides = {
        "out": args.out,
        "seeds": _csv_list(args.seeds, int),
        "methods": _csv_list(args.methods),
        "workers": args.workers,
    }
    cfg = bench.load_config(args.config, overrides)
    if args.scenario:
        chosen = [s for s in cfg.scenarios if s["name"] == args.scenario]
        if not chosen:
            if args.scenario not in bench.SCENARIOS:
                raise bench.ConfigError(f"unknown scenario {args.scenario!r}")
            chosen = bench.parse_config({"scenario": args.scenario, "methods": cfg.methods, "seeds": cfg.seeds}).scenarios
        cfg.scenarios = chosen
    return bench.run_bench(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"bench": cmd_bench, "fit": cmd_fit, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except (bench.ConfigError, worlds.CSVFormatError, FileNotFoundError, ValueError) as exc:
        print(f"ppdre {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
