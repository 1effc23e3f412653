"""Representation evaluation: probes, accuracy matrices, similarity, CL metrics.

Probes are single linear layers trained with cross-entropy on frozen backbone
features; validation accuracy drives a patience scheme that decays the rate
by 0.3 up to three times.  Accuracy matrices feed the forgetting and
intransigence measures; linear centered-kernel similarity compares feature
spaces across sessions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ExperimentConfig, ProbeSettings
from .data import Dataset, TaskStream
from .errors import ConfigurationError, ContractError, NumericError
from .models import ModelBundle, load_checkpoint, params_hash
from .optim import Adam, PatienceDecay

CSV_FIELDS = ("run_id", "method", "lambda", "seed", "session", "task",
              "metric", "value")


# -- feature extraction -----------------------------------------------------------


def extract_features(bundle: ModelBundle, inputs: np.ndarray,
                     batch: int = 1024) -> np.ndarray:
    """Eval-mode backbone features, never attached to the graph."""
    outs = []
    for start in range(0, inputs.shape[0], batch):
        x = Tensor(inputs[start:start + batch])
        outs.append(bundle.encoder.forward(x, train=False).data)
    return np.concatenate(outs) if outs else np.empty((0, bundle.arch.feature_dim))


# -- linear probe -----------------------------------------------------------------


@dataclass
class LinearProbe:
    weights: np.ndarray  # [F, K]
    bias: np.ndarray     # [K]

    def predict(self, feats: np.ndarray) -> np.ndarray:
        return (feats @ self.weights + self.bias).argmax(axis=1)

    def accuracy(self, feats: np.ndarray, labels: np.ndarray) -> float:
        if labels.size == 0:
            raise ConfigurationError("empty evaluation set")
        return float(np.mean(self.predict(feats) == labels))


def _cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    log_norm = ad.logsumexp(logits, axis=1)
    picked = ad.sum_(logits * Tensor(onehot), axis=1)
    return ad.mean(log_norm - picked)


def train_linear_probe(train_feats: np.ndarray, train_labels: np.ndarray,
                       val_feats: np.ndarray, val_labels: np.ndarray,
                       n_classes: int, cfg: ProbeSettings,
                       seed: int = 0) -> LinearProbe:
    """Cross-entropy probe on frozen features with patience-decayed Adam."""
    present = np.unique(train_labels)
    if present.size < n_classes:
        missing = sorted(set(range(n_classes)) - set(present.tolist()))
        raise ConfigurationError(f"train set has empty classes: {missing}")
    f_dim = train_feats.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9B0BE]))
    w = Tensor(rng.standard_normal((f_dim, n_classes)) * 0.01, requires_grad=True)
    b = Tensor(np.zeros(n_classes), requires_grad=True)
    opt = Adam([w, b], lr=cfg.lr, weight_decay=cfg.weight_decay)
    schedule = PatienceDecay(cfg.lr, cfg.decay_factor, cfg.patience, cfg.max_decays)

    best = LinearProbe(w.data.copy(), b.data.copy())
    best_acc = -1.0
    use_val = val_feats.shape[0] > 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_feats.shape[0])
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = ad.matmul(Tensor(train_feats[idx]), w) + b
            onehot = np.zeros((idx.size, n_classes))
            onehot[np.arange(idx.size), train_labels[idx]] = 1.0
            ad.backward(_cross_entropy(logits, onehot))
            opt.step(lr=schedule.rate)
        probe = LinearProbe(w.data.copy(), b.data.copy())
        score = probe.accuracy(val_feats, val_labels) if use_val \
            else -_train_loss(probe, train_feats, train_labels)
        if score > best_acc:
            best_acc = score
            best = probe
        if schedule.observe(score):
            break
    return best


def _train_loss(probe: LinearProbe, feats: np.ndarray, labels: np.ndarray) -> float:
    logits = feats @ probe.weights + probe.bias
    logits -= logits.max(axis=1, keepdims=True)
    log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(-log_p[np.arange(labels.size), labels].mean())


# -- accuracy matrices ---------------------------------------------------------------


@dataclass
class AccuracyMatrix:
    """aware[k, j]: probe accuracy on task j after session k (NaN = not run);
    agnostic[k]: all-class probe accuracy after session k."""

    aware: np.ndarray
    agnostic: np.ndarray


def _probe_seed(base: int, session: int, task: int) -> int:
    # task 0 = agnostic probe, 10_000 = downstream; real tasks are 1-based
    mixed = np.random.SeedSequence([int(base), 0x9E0B, int(session), int(task)])
    return int(mixed.generate_state(1, np.uint64)[0])


def agnostic_accuracy(bundle: ModelBundle, stream: TaskStream,
                      probe_cfg: ProbeSettings, seed: int,
                      features_of=None) -> float:
    """All-class probe on frozen features (train/val/test over every task)."""
    ds = stream.dataset
    feats = features_of if features_of is not None else (
        lambda x: extract_features(bundle, x))
    tr = stream.all_train_idx()
    va = stream.all_val_idx()
    te = stream.all_test_idx()
    probe = train_linear_probe(
        feats(ds.inputs[tr]), ds.labels[tr],
        feats(ds.inputs[va]) if va.size else np.empty((0, 1)),
        ds.labels[va] if va.size else np.empty(0, dtype=np.int64),
        ds.n_classes, probe_cfg, seed=_probe_seed(seed, 0, 0))
    return probe.accuracy(feats(ds.test_inputs[te]), ds.test_labels[te])


def task_accuracy(bundle: ModelBundle, stream: TaskStream, task_j: int,
                  probe_cfg: ProbeSettings, seed: int, session: int) -> float:
    """Probe trained on task j's classes only (labels remapped locally)."""
    ds = stream.dataset
    task = stream.tasks[task_j - 1]
    remap = {c: i for i, c in enumerate(task.classes)}

    def local(labels):
        return np.array([remap[int(c)] for c in labels], dtype=np.int64)

    tr, va, te = task.train_idx, task.val_idx, task.test_idx
    probe = train_linear_probe(
        extract_features(bundle, ds.inputs[tr]), local(ds.labels[tr]),
        extract_features(bundle, ds.inputs[va]) if va.size else np.empty((0, 1)),
        local(ds.labels[va]) if va.size else np.empty(0, dtype=np.int64),
        len(task.classes), probe_cfg, seed=_probe_seed(seed, session, task_j))
    return probe.accuracy(extract_features(bundle, ds.test_inputs[te]),
                          local(ds.test_labels[te]))


def eval_matrix(checkpoint_paths, stream: TaskStream, mode: str = "agnostic",
                future_data: bool = False, probe_cfg: ProbeSettings | None = None,
                seed: int = 0) -> AccuracyMatrix:
    """Probe every (session, task) cell over the given per-session checkpoints."""
    probe_cfg = probe_cfg or ProbeSettings()
    n_sessions = len(checkpoint_paths)
    n_tasks = len(stream)
    aware = np.full((n_sessions, n_tasks), np.nan)
    agnostic = np.full(n_sessions, np.nan)
    for k, path in enumerate(checkpoint_paths, start=1):
        if path is None or not Path(path).exists():
            raise ConfigurationError(f"missing checkpoint for session {k}")
        bundle, _, _ = load_checkpoint(path)
        if mode in ("agnostic", "both"):
            agnostic[k - 1] = agnostic_accuracy(bundle, stream, probe_cfg, seed)
        if mode in ("aware", "both"):
            last_task = n_tasks if future_data else k
            for j in range(1, last_task + 1):
                aware[k - 1, j - 1] = task_accuracy(
                    bundle, stream, j, probe_cfg, seed, session=k)
    return AccuracyMatrix(aware, agnostic)


# -- continual-learning measures ------------------------------------------------------


def forgetting(matrix: AccuracyMatrix, k: int) -> float:
    """Mean over earlier tasks of (best historical accuracy - current accuracy)."""
    if k < 2:
        raise ContractError("forgetting is defined for sessions k >= 2")
    a = matrix.aware
    drops = []
    for j in range(1, k):
        best = np.nanmax(a[:k - 1, j - 1])
        drops.append(best - a[k - 1, j - 1])
    return float(np.mean(drops))


def intransigence(matrix: AccuracyMatrix, k: int, referential_acc: float) -> float:
    """Referential (jointly trained) accuracy on task k minus the learner's."""
    if referential_acc is None or np.isnan(referential_acc):
        raise ConfigurationError(
            "missing referential accuracy: run the continual-joint baseline first")
    return float(referential_acc - matrix.aware[k - 1, k - 1])


# -- representation similarity ---------------------------------------------------------


def cka_linear(x: np.ndarray, y: np.ndarray) -> float:
    """Linear centered-kernel alignment between two row-aligned feature sets."""
    if x.shape[0] != y.shape[0]:
        raise ConfigurationError("feature sets must be row-aligned")
    if x.shape[0] < 2:
        raise ConfigurationError("similarity needs at least 2 rows")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    numerator = np.linalg.norm(yc.T @ xc, "fro") ** 2
    denom = (np.linalg.norm(xc.T @ xc, "fro") * np.linalg.norm(yc.T @ yc, "fro"))
    if denom == 0.0:
        raise NumericError("zero-variance features on both sides")
    return float(numerator / denom)


def session_cka(bundles: list[ModelBundle], inputs: np.ndarray,
                max_samples: int = 1024) -> list[float]:
    """CKA of each session's features against session 1, on shared inputs."""
    rows = inputs[:max_samples]
    feats = [extract_features(b, rows) for b in bundles]
    return [cka_linear(feats[0], f) for f in feats]


# -- downstream transfer ----------------------------------------------------------------


def downstream_eval(bundle: ModelBundle, foreign: Dataset,
                    probe_cfg: ProbeSettings | None = None, seed: int = 0,
                    split_seed: int = 0, val_fraction: float = 0.15,
                    resample: str | None = None) -> float:
    """Linear probe over a foreign dataset's classes on the frozen backbone.

    The foreign pool is split exactly like a one-task stream, so probing the
    source dataset itself reproduces the standard task-agnostic probe.
    """
    from .data import Dataset as _DS, split_tasks

    probe_cfg = probe_cfg or ProbeSettings()
    want = bundle.arch.input_dim
    train_x, test_x = foreign.inputs, foreign.test_inputs
    if foreign.dim != want:
        if resample != "interp":
            raise ConfigurationError(
                f"foreign dim {foreign.dim} != model dim {want}; "
                "set resample='interp' to adapt")
        train_x = _resample_rows(train_x, want)
        test_x = _resample_rows(test_x, want)
    resampled = _DS(train_x, foreign.labels, test_x, foreign.test_labels,
                    foreign.n_classes, kind="vector")
    stream = split_tasks(resampled, 1, split_seed, val_fraction=val_fraction)
    return agnostic_accuracy(bundle, stream, probe_cfg, seed)


def _resample_rows(x: np.ndarray, width: int) -> np.ndarray:
    src = np.linspace(0.0, 1.0, x.shape[1])
    dst = np.linspace(0.0, 1.0, width)
    return np.stack([np.interp(dst, src, row) for row in x])


# -- run-level evaluation and CSV schema ---------------------------------------------------


def metric_row(run_id: str, method: str, lam: float, seed: int, session,
               task, metric: str, value: float) -> dict:
    return {"run_id": run_id, "method": method, "lambda": repr(float(lam)),
            "seed": seed, "session": session, "task": task, "metric": metric,
            "value": repr(float(value))}


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_run(run_dir, stream: TaskStream, cfg: ExperimentConfig,
                 run_id: str) -> list[dict]:
    """Probe every session checkpoint of a finished run into metric rows."""
    run_dir = Path(run_dir)
    ckpts = sorted(run_dir.glob("session_*.ckpt"))
    if len(ckpts) != len(stream):
        raise ConfigurationError(
            f"expected {len(stream)} checkpoints in {run_dir}, found {len(ckpts)}")
    method = cfg.train.method
    lam = cfg.method_lambda()
    seed = cfg.seeds.data
    rows: list[dict] = []

    bundles = [load_checkpoint(p)[0] for p in ckpts]
    before = [params_hash(b.named_parameters()) for b in bundles]
    if cfg.eval.agnostic:
        for k, bundle in enumerate(bundles, start=1):
            acc = agnostic_accuracy(bundle, stream, cfg.probe, cfg.seeds.probe)
            rows.append(metric_row(run_id, method, lam, seed, k, "",
                                   "acc_agnostic", acc))
    if cfg.eval.aware:
        n_tasks = len(stream)
        aware = np.full((n_tasks, n_tasks), np.nan)
        for k, bundle in enumerate(bundles, start=1):
            last = n_tasks if cfg.eval.future_data else k
            for j in range(1, last + 1):
                acc = task_accuracy(bundle, stream, j, cfg.probe,
                                    cfg.seeds.probe, session=k)
                aware[k - 1, j - 1] = acc
                rows.append(metric_row(run_id, method, lam, seed, k, j,
                                       "acc_task", acc))
        matrix = AccuracyMatrix(aware, np.full(n_tasks, np.nan))
        for k in range(2, n_tasks + 1):
            rows.append(metric_row(run_id, method, lam, seed, k, "",
                                   "forgetting", forgetting(matrix, k)))
    if cfg.eval.cka:
        task1 = stream.tasks[0]
        inputs = stream.dataset.test_inputs[task1.test_idx]
        sims = session_cka(bundles, inputs, cfg.eval.cka_max_samples)
        for k, sim in enumerate(sims, start=1):
            rows.append(metric_row(run_id, method, lam, seed, k, 1,
                                   "cka_vs_session1", sim))
    after = [params_hash(b.named_parameters()) for b in bundles]
    if before != after:
        raise ContractError("probe training mutated backbone parameters")
    return rows
