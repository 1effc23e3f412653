"""Report generation: CSV pivots and static vector plots from run metrics.

The metrics CSV is the source of truth; every plot is a pure function of its
rows.  Plots are optional (SVG via matplotlib's Agg backend); the CSV reports
are always written.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .evaluation import read_metrics_csv


def _to_float(row_value: str) -> float:
    return float(row_value)


def _label(method: str, lam: str) -> str:
    lam_f = float(lam)
    return method if lam_f == 0.0 else f"{method}({lam_f:g})"


def _group_rows(rows: list[dict], metric: str):
    """(method, lambda) -> {(session, task) -> [values across seeds]}"""
    grouped: dict[tuple, dict] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row["metric"] != metric:
            continue
        key = (row["method"], row["lambda"])
        cell = (row["session"], row["task"])
        grouped[key][cell].append(_to_float(row["value"]))
    return grouped


def report_curves(rows: list[dict], out_dir: Path, plot: bool = True) -> Path:
    """Task-agnostic accuracy per training session, one series per method."""
    grouped = _group_rows(rows, "acc_agnostic")
    if not grouped:
        raise ConfigurationError("no acc_agnostic rows in metrics CSV")
    out_path = out_dir / "curves.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "lambda", "session", "mean", "std", "n"])
        for (method, lam), cells in sorted(grouped.items()):
            for (session, _), vals in sorted(cells.items(), key=lambda kv: int(kv[0][0])):
                writer.writerow([method, lam, session,
                                 repr(float(np.mean(vals))),
                                 repr(float(np.std(vals))), len(vals)])
    if plot:
        _plot_curves(grouped, out_dir / "curves.svg")
    return out_path


def _plot_curves(grouped, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for (method, lam), cells in sorted(grouped.items()):
        items = sorted(cells.items(), key=lambda kv: int(kv[0][0]))
        xs = [int(s) for (s, _), _ in items]
        ys = [np.mean(v) for _, v in items]
        ax.plot(xs, ys, marker="o", label=_label(method, lam))
    ax.set_xlabel("training session")
    ax.set_ylabel("task-agnostic probe accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def report_matrix(rows: list[dict], out_dir: Path, plot: bool = True) -> Path:
    """Per-method session x task accuracy grids (task-aware probes)."""
    grouped = _group_rows(rows, "acc_task")
    if not grouped:
        raise ConfigurationError("no acc_task rows in metrics CSV")
    out_path = out_dir / "matrix.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "lambda", "session", "task", "mean", "std", "n"])
        for (method, lam), cells in sorted(grouped.items()):
            for (session, task), vals in sorted(
                    cells.items(), key=lambda kv: (int(kv[0][0]), int(kv[0][1]))):
                writer.writerow([method, lam, session, task,
                                 repr(float(np.mean(vals))),
                                 repr(float(np.std(vals))), len(vals)])
    if plot:
        _plot_matrix(grouped, out_dir)
    return out_path


def _plot_matrix(grouped, out_dir: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for (method, lam), cells in sorted(grouped.items()):
        sessions = sorted({int(s) for (s, _) in cells})
        tasks = sorted({int(t) for (_, t) in cells})
        grid = np.full((len(sessions), len(tasks)), np.nan)
        for (s, t), vals in cells.items():
            grid[sessions.index(int(s)), tasks.index(int(t))] = np.mean(vals)
        fig, ax = plt.subplots(figsize=(4, 3.5))
        im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis")
        for i in range(grid.shape[0]):
            for j in range(grid.shape[1]):
                if not np.isnan(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                            color="white", fontsize=7)
        ax.set_xlabel("evaluated task")
        ax.set_ylabel("after session")
        ax.set_xticks(range(len(tasks)), [str(t) for t in tasks])
        ax.set_yticks(range(len(sessions)), [str(s) for s in sessions])
        ax.set_title(_label(method, lam))
        fig.colorbar(im, shrink=0.8)
        fig.tight_layout()
        fig.savefig(out_dir / f"matrix_{method}_{float(lam):g}.svg")
        plt.close(fig)


def report_frontier(rows: list[dict], out_dir: Path, plot: bool = True) -> Path:
    """(intransigence, forgetting) at the final session per method and strength."""
    grouped_f = _group_rows(rows, "forgetting")
    grouped_i = _group_rows(rows, "intransigence")
    if not grouped_f or not grouped_i:
        raise ConfigurationError(
            "frontier needs forgetting and intransigence rows; "
            "run the evaluation with task-aware probes and a referential run")
    out_path = out_dir / "frontier.csv"
    points = []
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "lambda", "intransigence_mean", "forgetting_mean",
                         "intransigence_std", "forgetting_std", "n"])
        for key in sorted(grouped_f):
            fvals = [v for vals in grouped_f[key].values() for v in vals]
            ivals = [v for vals in grouped_i.get(key, {}).values() for v in vals]
            if not ivals:
                continue
            writer.writerow([key[0], key[1],
                             repr(float(np.mean(ivals))), repr(float(np.mean(fvals))),
                             repr(float(np.std(ivals))), repr(float(np.std(fvals))),
                             len(fvals)])
            points.append((key, float(np.mean(ivals)), float(np.mean(fvals))))
    if plot:
        _plot_frontier(points, out_dir / "frontier.svg")
    return out_path


def _plot_frontier(points, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    by_method = defaultdict(list)
    for (method, lam), x, y in points:
        by_method[method].append((x, y, lam))
    for method, pts in sorted(by_method.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
        for x, y, lam in pts:
            if float(lam) != 0.0:
                ax.annotate(f"{float(lam):g}", (x, y), fontsize=7,
                            xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("intransigence")
    ax.set_ylabel("forgetting")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def aggregate_sweep(run_dirs: list[Path], out_path: Path) -> list[dict]:
    """Merge per-run metrics CSVs and write per-cell mean/std over seeds."""
    rows: list[dict] = []
    for d in run_dirs:
        csv_path = Path(d) / "metrics.csv"
        if not csv_path.exists():
            raise ConfigurationError(f"missing metrics.csv under {d}")
        rows.extend(read_metrics_csv(csv_path))
    cells = defaultdict(list)
    for row in rows:
        key = (row["method"], row["lambda"], row["session"], row["task"],
               row["metric"])
        cells[key].append(float(row["value"]))
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "lambda", "session", "task", "metric",
                         "mean", "std", "n"])
        for key in sorted(cells):
            vals = cells[key]
            writer.writerow([*key, repr(float(np.mean(vals))),
                             repr(float(np.std(vals))), len(vals)])
    return rows
