"""Command-line entry point: ``polyml {generate,train,gridsearch,importance,plotdata}``.

Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline as pl
from . import serialize
from .errors import ConfigError, DataError, PolymlError, ShapeError

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v <= pl.SEED_MAX:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64 - 1]")
    return v


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _raw_config(args) -> dict:
    raw = pl.read_config(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set: expected key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        raw[k] = v
    return raw


def cmd_generate(args) -> int:
    d = pl.generate(args.source, args.n, args.seed if args.seed is not None else 0, args.noise_sd)
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out = out / f"{args.source}.csv"
    _write(out, d.to_csv_text())
    print("\n".join(pl.schema_lines(d)))
    print(f"# written: {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = pl.build_config(_raw_config(args), seed=args.seed, out=args.out)
    result = pl.run_training(cfg)
    out = Path(cfg.out)
    _write(out / "report.json", pl.report_json(result.report))
    _write(out / "model.json", serialize.dumps(result.model) + "\n")
    if result.predictions:
        _write(out / "predictions.csv", pl.predictions_csv(result.predictions))
    rep = result.report
    keys = [k for k in ("rmse", "r2", "nrmse", "accuracy", "precision", "recall", "f1",
                        "n_clusters", "silhouette", "token_accuracy") if rep.get(k) is not None]
    print(f"{cfg.model} ({cfg.task}) seed={cfg.seed} " + " ".join(f"{k}={rep[k]:.6g}" for k in keys))
    print(f"# written: {out}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    raw = _raw_config(args)
    for item in args.grid or []:
        if "=" not in item:
            raise ConfigError(f"--grid: expected name=v1,v2,..., got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        raw["grid." + k.removeprefix("model.")] = v
    if args.k_folds is not None:
        raw["cv.k_folds"] = str(args.k_folds)
    cfg = pl.build_config(raw, seed=args.seed, out=args.out)
    res = pl.grid_search(cfg)
    out = Path(cfg.out)
    _write(out / "cv_table.csv", res.table_csv())
    best = {"schema_version": pl.SCHEMA_VERSION, "model": cfg.model, "seed": cfg.seed,
            "k_folds": cfg.k_folds, "best": pl._plain(res.best),
            "best_mean_rmse": res.scores[res.best_index], "best_index": res.best_index}
    _write(out / "best.json", json.dumps(best, indent=2) + "\n")
    sys.stdout.write(res.table_csv())
    print("best: " + ", ".join(f"{k}={pl._grid_fmt(v)}" for k, v in res.best.items())
          + f" (mean CV RMSE {res.scores[res.best_index]:.6g})")
    return EXIT_OK


def _load_model(path) -> pl.FittedModel:
    p = Path(path)
    if p.is_dir():
        p = p / "model.json"
    if not p.is_file():
        raise FileNotFoundError(f"model file not found: {p}")
    obj = serialize.load(p)
    if not isinstance(obj, pl.FittedModel):
        raise DataError(f"{p} does not hold a fitted model")
    return obj


def cmd_importance(args) -> int:
    table = pl.importance_table(_load_model(args.model))
    width = max(len(n) for n, _ in table)
    for name, score in table:
        print(f"{name:<{width}}  {score:.6f}")
    if args.out:
        out = Path(args.out)
        if out.suffix.lower() != ".csv":
            out = out / "importance.csv"
        _write(out, pl.series_csv(["feature", "importance"], table))
    return EXIT_OK


def cmd_plotdata(args) -> int:
    src = Path(args.input)
    if src.is_dir():
        report_path, pred_path = src / "report.json", src / "predictions.csv"
    elif src.suffix == ".csv":
        report_path, pred_path = None, src
    else:
        report_path, pred_path = src, src.parent / "predictions.csv"
    if report_path is not None and not report_path.is_file():
        raise FileNotFoundError(f"report not found: {report_path}")
    if report_path is None and not pred_path.is_file():
        raise FileNotFoundError(f"predictions not found: {pred_path}")
    report = json.loads(report_path.read_text(encoding="utf-8")) if report_path else {}
    preds = pl.read_predictions(pred_path) if pred_path.is_file() else None
    files = pl.plot_series(report, preds)
    out = Path(args.out or (src if src.is_dir() else src.parent))
    for name, text in files.items():
        _write(out / name, text)
        print(f"{out / name}\t{text.count(chr(10)) - 1} rows")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyml", description="Polymer-process machine learning workshop pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="flat key = value config file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override one config key (repeatable)")
        sp.add_argument("--seed", type=_seed, help="random seed (overrides the config)")
        sp.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("--source", required=True, choices=[s for s in pl.SOURCES if s != "file"])
    g.add_argument("--n", type=int, required=True, help="number of rows")
    g.add_argument("--noise-sd", type=float, default=0.05, help="label noise standard deviation")
    common(g, config=False)
    g.set_defaults(func=cmd_generate, out="data")

    t = sub.add_parser("train", help="preprocess, split, train, evaluate and save")
    common(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("gridsearch", help="exhaustive grid with k-fold CV RMSE")
    common(s)
    s.add_argument("--grid", action="append", metavar="PARAM=V1,V2",
                   help="hyperparameter values (repeatable; use ';' between tuple values)")
    s.add_argument("--k-folds", type=int)
    s.set_defaults(func=cmd_gridsearch)

    i = sub.add_parser("importance", help="MDI feature importance of a saved forest/tree/boosting model")
    i.add_argument("model", help="model.json or run directory")
    i.add_argument("--out", help="CSV path or directory")
    i.set_defaults(func=cmd_importance)

    d = sub.add_parser("plotdata", help="two-column CSV series from a run report / predictions")
    d.add_argument("input", help="run directory, report.json or predictions.csv")
    d.add_argument("--out", help="output directory (default: next to the input)")
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigError, DataError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (PolymlError, OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
