"""Experiment driver: train / sweep / report / eval verbs.

Exit codes: 0 success, 2 configuration or format error, 3 numeric abort.
The data root for relative dataset paths comes from $CSSL_DATA_ROOT.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import (ExperimentConfig, METHODS, config_from_flat, load_config,
                     parse_flat_text)
from .errors import ConfigurationError, ContractError, FormatError, NumericError
from .evaluation import (downstream_eval, evaluate_run, read_metrics_csv,
                         write_metrics_csv, agnostic_accuracy)
from .models import load_checkpoint
from .reports import (aggregate_sweep, report_curves, report_frontier,
                      report_matrix)
from .training import (build_dataset, build_stream, run_id_for, run_sequence)

DATA_ROOT_ENV = "CSSL_DATA_ROOT"


def _data_root() -> str | None:
    return os.environ.get(DATA_ROOT_ENV)


def _train_single(cfg: ExperimentConfig, out_dir: Path, resume: bool = False) -> Path:
    stream = build_stream(cfg, _data_root())
    result = run_sequence(stream, cfg, out_dir, resume=resume)
    rows = evaluate_run(out_dir, stream, cfg, run_id_for(cfg))
    write_metrics_csv(out_dir / "metrics.csv", rows)
    return out_dir


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seeds is not None:
        cfg.set_all_seeds(int(args.seeds.split(",")[0]))
    if args.deterministic:
        cfg.deterministic = True
    out = Path(args.out)
    _train_single(cfg, out, resume=args.resume)
    print(f"run complete: {out}")
    return 0


def _sweep_worker(payload) -> str:
    flat, out_dir = payload
    cfg = config_from_flat(flat)
    _train_single(cfg, Path(out_dir))
    return out_dir


def _expand_sweep(pairs: dict[str, str]):
    methods = [m.strip() for m in pairs.get("sweep.methods", "ft").split(",")]
    lambdas = [float(x) for x in pairs.get("sweep.lambdas", "").split(",") if x]
    seeds = [int(x) for x in pairs.get("sweep.seeds", "0").split(",") if x]
    cap = int(pairs.get("sweep.cap", "64"))
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(
                f"unknown method '{m}' in sweep.methods; accepted: {', '.join(METHODS)}")
    base = {k: v for k, v in pairs.items() if not k.startswith("sweep.")}
    runs = []
    for m in methods:
        lam_axis = lambdas if (m in ("fd", "pfr", "ewc") and lambdas) else [None]
        for lam in lam_axis:
            for seed in seeds:
                flat = dict(base)
                flat["train.method"] = m
                if lam is not None:
                    flat[f"train.lambda_{m}"] = repr(lam)
                for key in ("seeds.data", "seeds.init", "seeds.augment", "seeds.probe"):
                    flat[key] = str(seed)
                lam_tag = "0" if lam is None else f"{lam:g}"
                runs.append((flat, f"{m}_lam{lam_tag}_s{seed}"))
    if len(runs) > cap:
        raise ConfigurationError(
            f"sweep expands to {len(runs)} runs, above the cap of {cap}")
    return runs


def cmd_sweep(args) -> int:
    pairs = parse_flat_text(Path(args.config).read_text())
    if args.seeds is not None:
        pairs["sweep.seeds"] = args.seeds
    runs = _expand_sweep(pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [(flat, str(out / name)) for flat, name in runs]
    for flat, _ in payloads:  # validate before spawning anything
        config_from_flat(flat)
    jobs = max(1, int(args.jobs))
    if jobs == 1:
        run_dirs = [_sweep_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            run_dirs = list(ex.map(_sweep_worker, payloads))
    rows = aggregate_sweep([Path(d) for d in sorted(run_dirs)], out / "aggregate.csv")
    write_metrics_csv(out / "all_runs.csv", _with_intransigence(rows))
    print(f"sweep complete: {len(run_dirs)} runs under {out}")
    return 0


def _with_intransigence(rows: list[dict]) -> list[dict]:
    """Append intransigence rows where a continual-joint referential exists."""
    ref: dict[tuple, float] = {}
    for row in rows:
        if (row["method"] == "cj" and row["metric"] == "acc_task"
                and row["session"] == row["task"]):
            ref[(row["seed"], row["session"])] = float(row["value"])
    if not ref:
        return rows
    extra = []
    for row in rows:
        if (row["metric"] == "acc_task" and row["session"] == row["task"]
                and row["method"] != "cj"):
            key = (row["seed"], row["session"])
            if key in ref:
                extra.append(dict(row, metric="intransigence",
                                  task="",
                                  value=repr(ref[key] - float(row["value"]))))
    return rows + extra


def _collect_rows(target: Path) -> list[dict]:
    if (target / "metrics.csv").exists():
        return read_metrics_csv(target / "metrics.csv")
    if (target / "all_runs.csv").exists():
        return read_metrics_csv(target / "all_runs.csv")
    sub = sorted(p for p in target.glob("*/metrics.csv"))
    if sub:
        rows = []
        for p in sub:
            rows.extend(read_metrics_csv(p))
        return _with_intransigence(rows)
    raise ConfigurationError(f"no metrics found under {target}")


def cmd_report(args) -> int:
    target = Path(args.run)
    rows = _collect_rows(target)
    out_dir = Path(args.out) if args.out else target
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "curves":
        path = report_curves(rows, out_dir, plot=not args.no_plots)
    elif args.kind == "matrix":
        path = report_matrix(rows, out_dir, plot=not args.no_plots)
    elif args.kind == "frontier":
        path = report_frontier(rows, out_dir, plot=not args.no_plots)
    else:
        raise ConfigurationError(f"unknown report kind '{args.kind}'")
    print(f"report written: {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    bundle, meta, _ = load_checkpoint(args.checkpoint)
    if args.downstream:
        dataset = build_dataset(cfg, _data_root())
        acc = downstream_eval(bundle, dataset, cfg.probe, cfg.seeds.probe,
                              resample=args.resample)
        print(f"downstream probe accuracy: {acc:.4f}")
    else:
        stream = build_stream(cfg, _data_root())
        acc = agnostic_accuracy(bundle, stream, cfg.probe, cfg.seeds.probe)
        print(f"task-agnostic probe accuracy: {acc:.4f}")
    if args.out:
        Path(args.out).write_text(f"accuracy={acc!r}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cssl",
        description="continual self-supervised learning experiment driver")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_train = sub.add_parser("train", help="run one training sequence")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seeds", default=None,
                         help="override all seed fields with one value")
    p_train.add_argument("--deterministic", action="store_true")
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the last session checkpoint")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="expand and run a sweep spec")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--jobs", default=1, type=int)
    p_sweep.add_argument("--seeds", default=None,
                         help="comma list overriding the sweep's seed axis")
    p_sweep.add_argument("--deterministic", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="emit CSV reports and plots")
    p_report.add_argument("--run", required=True,
                          help="run directory or sweep directory")
    p_report.add_argument("--kind", required=True,
                          choices=("matrix", "frontier", "curves"))
    p_report.add_argument("--out", default=None)
    p_report.add_argument("--no-plots", action="store_true")
    p_report.set_defaults(func=cmd_report)

    p_eval = sub.add_parser("eval", help="probe an existing checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True,
                        help="config describing the dataset to probe against")
    p_eval.add_argument("--downstream", action="store_true",
                        help="treat the dataset as a foreign downstream domain")
    p_eval.add_argument("--resample", default=None, choices=(None, "interp"))
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
