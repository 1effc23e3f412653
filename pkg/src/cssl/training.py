"""The continual training loop and its baselines.

``run_sequence`` trains task after task with the configured regularizer
(none, feature distillation, projected distillation through the temporal
head, or Fisher-weighted anchoring) and checkpoints after every session.
``run_continual_joint`` retrains on the union of everything seen so far and
serves as the upper bound / referential model.  Both write a deterministic
manifest; wall-clock goes to a separate timings file so repeat runs stay
byte-identical.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import Tensor
from .config import ExperimentConfig, config_to_flat
from .data import (AugmentationPolicy, Dataset, TaskStream, gen_synthetic,
                   load_cifar_binary, load_tensor_file_dataset, make_views,
                   minibatches, split_tasks)
from .errors import ConfigurationError, ContractError, NumericError
from .losses import (FisherDiag, barlow_twins_loss, estimate_fisher, ewc_penalty,
                     fd_loss, ntxent_loss, pfr_loss, simsiam_loss)
from .models import (ModelArch, ModelBundle, Snapshot, build_model,
                     load_checkpoint, reset_temporal, save_checkpoint,
                     take_snapshot)
from .optim import SGD, LRSchedule, ParamGroup


@dataclass
class TrainState:
    """Mutable state carried across tasks within one run."""

    bundle: ModelBundle
    task_index: int = 1
    snapshot: Snapshot | None = None
    fisher: FisherDiag | None = None
    global_epoch: int = 0
    step_count: int = 0
    traces: list[dict] = field(default_factory=list)


def _dtype_of(cfg: ExperimentConfig):
    return np.float64 if cfg.train.precision == "float64" else np.float32


def build_dataset(cfg: ExperimentConfig, data_root: str | None = None) -> Dataset:
    d = cfg.data
    if d.kind == "synthetic":
        return gen_synthetic(d.n_classes, d.dim, d.per_class, cfg.seeds.data,
                             sigma=d.sigma, per_class_test=d.per_class_test)
    root = Path(data_root) if data_root else Path(".")
    if d.kind in ("cifar10", "cifar100"):
        train = [root / p for p in d.train_path.split(";") if p]
        test = [root / p for p in d.test_path.split(";") if p]
        return load_cifar_binary(train, d.kind, test)
    if d.kind == "tensor_file":
        return load_tensor_file_dataset(
            root / d.train_path, (root / d.test_path) if d.test_path else None)
    raise ConfigurationError(f"unknown data kind '{d.kind}'")


def build_stream(cfg: ExperimentConfig, data_root: str | None = None) -> TaskStream:
    dataset = build_dataset(cfg, data_root)
    return split_tasks(dataset, cfg.data.n_tasks, cfg.seeds.data,
                       val_fraction=cfg.data.val_fraction,
                       shuffle_classes=cfg.data.shuffle_classes)


def augmentation_policy(cfg: ExperimentConfig, dataset: Dataset) -> AugmentationPolicy:
    a = cfg.aug
    if dataset.kind == "image":
        return AugmentationPolicy(
            mode="image", crop_scale=(a.crop_lo, a.crop_hi), hflip_p=a.hflip_p,
            jitter_p=a.jitter_p, brightness=a.brightness, contrast=a.contrast,
            channel_jitter=a.channel_jitter, grayscale_p=a.grayscale_p,
            image_shape=dataset.image_shape)
    return AugmentationPolicy(
        mode="vector", noise_sigma=a.noise_sigma, dropout_frac=a.dropout_frac,
        scale_range=(a.scale_lo, a.scale_hi))


def _needs_temporal(cfg: ExperimentConfig) -> bool:
    return cfg.train.method == "pfr"


def _needs_predictor(cfg: ExperimentConfig) -> bool:
    return cfg.train.ssl_variant == "simsiam"


def make_bundle(cfg: ExperimentConfig, input_dim: int) -> ModelBundle:
    arch = ModelArch(
        input_dim=input_dim, hidden=tuple(cfg.arch.hidden),
        feature_dim=cfg.arch.feature_dim, proj_hidden=cfg.arch.proj_hidden,
        proj_dim=cfg.arch.proj_dim, temporal_hidden=cfg.arch.temporal_hidden,
        encoder_batchnorm=cfg.arch.encoder_batchnorm)
    return build_model(arch, cfg.seeds.init, with_temporal=_needs_temporal(cfg),
                       with_predictor=_needs_predictor(cfg), dtype=_dtype_of(cfg))


def ssl_loss_and_features(bundle: ModelBundle, view_batch, cfg: ExperimentConfig,
                          train: bool = True):
    """The variant's view-invariance loss plus both backbone feature maps."""
    t = cfg.train
    fa = bundle.encoder.forward(view_batch.x_a, train)
    fb = bundle.encoder.forward(view_batch.x_b, train)
    za = bundle.projector.forward(fa, train)
    zb = bundle.projector.forward(fb, train)
    if t.ssl_variant == "barlow":
        loss = barlow_twins_loss(za, zb, trade_off=t.lambda_bt)
    elif t.ssl_variant == "simclr":
        loss = ntxent_loss(za, zb, temperature=t.temperature)
    elif t.ssl_variant == "simsiam":
        pa = bundle.predictor.forward(za, train)
        pb = bundle.predictor.forward(zb, train)
        loss = simsiam_loss(pa, zb.detach(), pb, za.detach())
    else:
        raise ConfigurationError(f"unknown ssl_variant '{t.ssl_variant}'")
    return loss, fa, fb


def regularizer_term(state: TrainState, cfg: ExperimentConfig, view_batch,
                     fa: Tensor, fb: Tensor) -> Tensor | None:
    """Method-specific penalty, already scaled by its strength (None when off)."""
    t = cfg.train
    method = t.method
    if method in ("ft", "cj") or state.task_index == 1:
        return None
    if method == "fd":
        if t.lambda_fd == 0.0:
            return None
        if state.snapshot is None:
            raise ContractError("feature distillation needs a snapshot for t > 1")
        prev_a = state.snapshot(view_batch.x_a)
        prev_b = state.snapshot(view_batch.x_b)
        per_view = fd_loss(fa, prev_a, t.fd_squared) + fd_loss(fb, prev_b, t.fd_squared)
        return ad.scale(per_view, 0.5 * t.lambda_fd)
    if method == "pfr":
        if t.lambda_pfr == 0.0:
            return None
        if state.snapshot is None:
            raise ContractError("projected regularization needs a snapshot for t > 1")
        prev_a = state.snapshot(view_batch.x_a)
        prev_b = state.snapshot(view_batch.x_b)
        ma = state.bundle.temporal.forward(fa, train=True)
        mb = state.bundle.temporal.forward(fb, train=True)
        per_view = pfr_loss(ma, prev_a) + pfr_loss(mb, prev_b)
        return ad.scale(per_view, 0.5 * t.lambda_pfr)
    if method == "ewc":
        if t.lambda_ewc == 0.0 or state.fisher is None:
            return None
        penalty = ewc_penalty(_penalized_params(state.bundle), state.fisher)
        return ad.scale(penalty, t.lambda_ewc)
    raise ConfigurationError(f"unknown method '{method}'")


def _penalized_params(bundle: ModelBundle) -> dict[str, Tensor]:
    out = bundle.encoder.named_parameters("encoder.")
    out.update(bundle.projector.named_parameters("projector."))
    if bundle.predictor is not None:
        out.update(bundle.predictor.named_parameters("predictor."))
    return out


def _optimizer_for(state: TrainState, cfg: ExperimentConfig) -> SGD:
    groups = [
        ParamGroup("backbone", state.bundle.encoder.parameters()),
        ParamGroup("projector", state.bundle.projector.parameters()),
    ]
    if state.bundle.predictor is not None:
        groups.append(ParamGroup("predictor", state.bundle.predictor.parameters()))
    # the temporal head trains jointly, but only when its term is active
    if (cfg.train.method == "pfr" and state.task_index > 1
            and cfg.train.lambda_pfr > 0.0):
        groups.append(ParamGroup("temporal", state.bundle.temporal.parameters()))
    return SGD(groups, momentum=cfg.train.momentum,
               weight_decay=cfg.train.weight_decay)


def group_rates(cfg: ExperimentConfig, global_epoch: int) -> dict[str, float]:
    """Cosine rate for everything while annealing, then per-group constants."""
    t = cfg.train
    sched = LRSchedule("cosine", t.lr, t.anneal_epochs, t.lr_floor)
    if global_epoch < t.anneal_epochs:
        r = sched.rate(global_epoch)
        return {"backbone": r, "projector": r, "temporal": r, "predictor": r}
    annealed = t.lr_floor
    head_rate = t.projector_decay * annealed
    return {"backbone": t.backbone_decay * annealed, "projector": head_rate,
            "temporal": head_rate, "predictor": head_rate}


def _warmup_temporal(state: TrainState, dataset: Dataset, train_idx: np.ndarray,
                     cfg: ExperimentConfig, policy: AugmentationPolicy) -> None:
    """Fit the re-initialized temporal head to the boundary alignment before
    joint training, so its early random outputs never steer the backbone."""
    t = cfg.train
    opt = SGD([ParamGroup("temporal", state.bundle.temporal.parameters())],
              momentum=t.momentum, weight_decay=t.weight_decay)
    rate = {"temporal": t.projector_decay * t.lr_floor}
    for epoch in range(t.temporal_warmup_epochs):
        shuffle_seed = _derive_seed(cfg.seeds.data, 0xE70D, state.task_index, epoch)
        aug_seed = _derive_seed(cfg.seeds.augment, 0xA07, state.task_index, epoch)
        for batch_idx in minibatches(train_idx, t.batch_size, shuffle_seed):
            vb = make_views(dataset.inputs[batch_idx], batch_idx, policy,
                            rng_seed=aug_seed, dtype=_dtype_of(cfg))
            fa = state.bundle.encoder.forward(vb.x_a, train=False).detach()
            fb = state.bundle.encoder.forward(vb.x_b, train=False).detach()
            ma = state.bundle.temporal.forward(fa, train=True)
            mb = state.bundle.temporal.forward(fb, train=True)
            loss = pfr_loss(ma, state.snapshot(vb.x_a)) + \
                pfr_loss(mb, state.snapshot(vb.x_b))
            ad.backward(loss)
            opt.step(rate)


def train_task(state: TrainState, dataset: Dataset, train_idx: np.ndarray,
               cfg: ExperimentConfig, policy: AugmentationPolicy) -> dict:
    """One task's optimization; returns the session's loss trace."""
    t = cfg.train
    if (t.method == "pfr" and state.task_index > 1 and t.lambda_pfr > 0.0
            and t.temporal_warmup_epochs > 0):
        _warmup_temporal(state, dataset, train_idx, cfg, policy)
    opt = _optimizer_for(state, cfg)
    dtype = _dtype_of(cfg)
    task = state.task_index
    ssl_sum = reg_sum = 0.0
    n_steps_epoch = 0
    for epoch in range(t.epochs_per_task):
        rates = group_rates(cfg, state.global_epoch)
        shuffle_seed = _derive_seed(cfg.seeds.data, 0xE70C, task, epoch)
        aug_seed = _derive_seed(cfg.seeds.augment, 0xA06, task, epoch)
        ssl_sum = reg_sum = 0.0
        n_steps_epoch = 0
        for batch_idx in minibatches(train_idx, t.batch_size, shuffle_seed):
            vb = make_views(dataset.inputs[batch_idx], batch_idx, policy,
                            rng_seed=aug_seed, dtype=dtype)
            ssl, fa, fb = ssl_loss_and_features(state.bundle, vb, cfg, train=True)
            reg = regularizer_term(state, cfg, vb, fa, fb)
            total = ssl if reg is None else ssl + reg
            if not np.isfinite(total.data):
                raise NumericError(
                    f"non-finite loss at task {task}, step {state.step_count}")
            ad.backward(total)
            opt.step(rates)
            state.step_count += 1
            ssl_sum += float(ssl.data)
            reg_sum += 0.0 if reg is None else float(reg.data)
            n_steps_epoch += 1
        state.global_epoch += 1
    steps = max(1, n_steps_epoch)
    trace = {"session": task, "ssl_loss": ssl_sum / steps,
             "reg_loss": reg_sum / steps, "steps": state.step_count,
             "train_size": int(train_idx.size)}
    state.traces.append(trace)
    return trace


def _derive_seed(base: int, tag: int, *parts: int) -> int:
    mixed = np.random.SeedSequence([int(base), int(tag), *[int(p) for p in parts]])
    return int(mixed.generate_state(1, np.uint64)[0])


def _fisher_for_task(state: TrainState, dataset: Dataset, train_idx: np.ndarray,
                     cfg: ExperimentConfig, policy: AugmentationPolicy) -> FisherDiag:
    """Squared-gradient importances of the SSL loss on the ending task's data."""
    t = cfg.train
    params = _penalized_params(state.bundle)
    seed = _derive_seed(cfg.seeds.data, 0xF15E, state.task_index)

    def batches():
        produced = 0
        epoch = 0
        while produced < t.fisher_batches:
            for batch_idx in minibatches(train_idx, t.batch_size,
                                         _derive_seed(seed, 0xB, epoch)):
                vb = make_views(dataset.inputs[batch_idx], batch_idx, policy,
                                rng_seed=_derive_seed(seed, 0xA, epoch),
                                dtype=_dtype_of(cfg))
                loss, _, _ = ssl_loss_and_features(state.bundle, vb, cfg, train=True)
                yield loss
                produced += 1
                if produced >= t.fisher_batches:
                    return
            epoch += 1

    return estimate_fisher(params, batches(), t.fisher_batches)


@dataclass
class RunResult:
    out_dir: Path
    checkpoints: list[Path]
    manifest_path: Path
    state: TrainState


def _session_ckpt(out_dir: Path, session: int) -> Path:
    return out_dir / f"session_{session:02d}.ckpt"


def _fisher_blocks(fisher: FisherDiag | None) -> dict[str, np.ndarray]:
    if fisher is None:
        return {}
    blocks = {}
    for name, v in fisher.values.items():
        blocks[f"fisher.{name}"] = v
    for name, v in fisher.anchor.items():
        blocks[f"anchor.{name}"] = v
    return blocks


def _fisher_from_blocks(extras: dict[str, np.ndarray]) -> FisherDiag | None:
    values = {k[len("fisher."):]: v.copy() for k, v in extras.items()
              if k.startswith("fisher.")}
    anchor = {k[len("anchor."):]: v.copy() for k, v in extras.items()
              if k.startswith("anchor.")}
    if not values:
        return None
    return FisherDiag(values, anchor)


def write_manifest(out_dir: Path, cfg: ExperimentConfig, n_tasks: int) -> Path:
    path = out_dir / "manifest.txt"
    lines = [f"version={__version__}", f"n_tasks={n_tasks}"]
    lines += [f"{k}={v}" for k, v in config_to_flat(cfg).items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def finalize_manifest(manifest_path: Path, artifacts: dict[str, Path]) -> None:
    lines = []
    for name in sorted(artifacts):
        digest = hashlib.sha256(artifacts[name].read_bytes()).hexdigest()
        lines.append(f"hash.{name}={digest}")
    with open(manifest_path, "a") as fh:
        fh.write("\n".join(lines) + "\n")


def run_id_for(cfg: ExperimentConfig) -> str:
    canonical = "".join(f"{k}={v};" for k, v in config_to_flat(cfg).items())
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def run_sequence(stream: TaskStream, cfg: ExperimentConfig, out_dir,
                 resume: bool = False) -> RunResult:
    """Train the configured method task by task; continual-joint runs train on
    the union of all data seen so far instead."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = stream.dataset
    policy = augmentation_policy(cfg, dataset)
    joint = cfg.train.method == "cj"
    method = cfg.train.method

    state = TrainState(bundle=make_bundle(cfg, dataset.dim))
    start_task = 1
    if resume:
        done = sorted(out_dir.glob("session_*.ckpt"))
        if done:
            last = done[-1]
            bundle, meta, extras = load_checkpoint(last)
            state.bundle = bundle
            state.fisher = _fisher_from_blocks(extras)
            start_task = meta["session"] + 1
            state.global_epoch = meta["session"] * cfg.train.epochs_per_task
            state.step_count = meta.get("step_count", 0)

    manifest_path = write_manifest(out_dir, cfg, len(stream))
    timings_path = out_dir / "timings.txt"
    if not resume or not timings_path.exists():
        timings_path.write_text("")

    checkpoints = [_session_ckpt(out_dir, s) for s in range(1, start_task)]
    for t_idx in range(start_task, len(stream) + 1):
        state.task_index = t_idx
        if t_idx > 1 and method in ("fd", "pfr"):
            state.snapshot = take_snapshot(state.bundle)
        if t_idx > 1 and method == "pfr":
            reset_temporal(state.bundle, cfg.seeds.init, t_idx)

        train_idx = (stream.all_train_idx(upto=t_idx) if joint
                     else stream.tasks[t_idx - 1].train_idx)
        started = time.perf_counter()
        train_task(state, dataset, train_idx, cfg, policy)
        elapsed = time.perf_counter() - started

        if method == "ewc":
            task_fisher = _fisher_for_task(
                state, dataset, stream.tasks[t_idx - 1].train_idx, cfg, policy)
            if state.fisher is None:
                state.fisher = task_fisher
            else:
                state.fisher.accumulate(task_fisher)

        ckpt = _session_ckpt(out_dir, t_idx)
        save_checkpoint(ckpt, state.bundle,
                        extra_meta={"session": t_idx, "method": method,
                                    "step_count": state.step_count},
                        extra_blocks=_fisher_blocks(state.fisher))
        checkpoints.append(ckpt)
        with open(timings_path, "a") as fh:
            fh.write(f"task_{t_idx}_seconds={elapsed:.3f}\n")

    artifacts = {f"checkpoint_{i + 1:02d}": p for i, p in enumerate(checkpoints)}
    finalize_manifest(manifest_path, artifacts)
    return RunResult(out_dir, checkpoints, manifest_path, state)


def run_continual_joint(stream: TaskStream, cfg: ExperimentConfig, out_dir,
                        resume: bool = False) -> RunResult:
    if cfg.train.method != "cj":
        raise ConfigurationError("run_continual_joint requires method 'cj'")
    return run_sequence(stream, cfg, out_dir, resume=resume)
