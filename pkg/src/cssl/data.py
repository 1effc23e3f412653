"""Dataset ingestion, class-incremental task splitting, and two-view augmentation.

Datasets carry a training pool and a test pool of flattened float inputs in
[0, 1] (images) or raw feature vectors (synthetic / imported tensors).  Labels
are used only for splitting and evaluation, never by the self-supervised
objective.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ConfigurationError, FormatError

CIFAR10_RECORD = 3073   # 1 label byte + 3072 pixel bytes (R,G,B planes, row-major)
CIFAR100_RECORD = 3074  # coarse byte + fine byte + 3072 pixel bytes

_TENSOR_MAGIC = b"TSD1"
_DTYPE_CODES = {0: np.float32, 1: np.float64, 2: np.uint8}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


@dataclass
class Dataset:
    """Training pool plus a held-out test pool with shared class ids."""

    inputs: np.ndarray        # [N, D]
    labels: np.ndarray        # [N] int64
    test_inputs: np.ndarray   # [M, D]
    test_labels: np.ndarray   # [M] int64
    n_classes: int
    kind: str = "vector"      # "vector" | "image"
    image_shape: tuple[int, int, int] | None = None  # (C, H, W) when kind == image

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


# -- CIFAR binary ingestion ----------------------------------------------------


def _parse_cifar_blob(blob: bytes, variant: str):
    if variant == "cifar10":
        rec, n_labels, max_label = CIFAR10_RECORD, 1, 9
    elif variant == "cifar100":
        rec, n_labels, max_label = CIFAR100_RECORD, 2, 99
    else:
        raise ConfigurationError(f"unknown CIFAR variant '{variant}'")
    if len(blob) == 0 or len(blob) % rec != 0:
        raise FormatError(
            f"file length {len(blob)} is not a positive multiple of record size {rec}")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, rec)
    if variant == "cifar10":
        labels = raw[:, 0].astype(np.int64)
        bad = np.nonzero(labels > max_label)[0]
        if bad.size:
            raise FormatError(
                f"label byte {labels[bad[0]]} out of range at byte offset {bad[0] * rec}")
    else:
        coarse = raw[:, 0].astype(np.int64)
        fine = raw[:, 1].astype(np.int64)
        bad = np.nonzero(coarse > 19)[0]
        if bad.size:
            raise FormatError(
                f"coarse label byte {coarse[bad[0]]} out of range at byte offset {bad[0] * rec}")
        bad = np.nonzero(fine > max_label)[0]
        if bad.size:
            raise FormatError(
                f"fine label byte {fine[bad[0]]} out of range at byte offset {bad[0] * rec + 1}")
        labels = fine
    pixels = raw[:, n_labels:].astype(np.float32) / 255.0
    return pixels, labels


def load_cifar_binary(train_paths, variant: str, test_paths=()) -> Dataset:
    """Parse CIFAR-10/100 binary batch files into a Dataset.

    CIFAR-10 records are 3073 bytes (label + 3072 pixels); CIFAR-100 records
    are 3074 bytes (coarse, fine, 3072 pixels) and the fine label is used.
    """
    if isinstance(train_paths, (str, Path)):
        train_paths = [train_paths]
    if isinstance(test_paths, (str, Path)):
        test_paths = [test_paths]
    xs, ys = [], []
    for p in train_paths:
        x, y = _parse_cifar_blob(Path(p).read_bytes(), variant)
        xs.append(x)
        ys.append(y)
    inputs = np.concatenate(xs)
    labels = np.concatenate(ys)
    if test_paths:
        xs, ys = [], []
        for p in test_paths:
            x, y = _parse_cifar_blob(Path(p).read_bytes(), variant)
            xs.append(x)
            ys.append(y)
        test_inputs, test_labels = np.concatenate(xs), np.concatenate(ys)
    else:
        test_inputs = np.empty((0, inputs.shape[1]), dtype=inputs.dtype)
        test_labels = np.empty(0, dtype=np.int64)
    n_classes = 10 if variant == "cifar10" else 100
    return Dataset(inputs, labels, test_inputs, test_labels, n_classes,
                   kind="image", image_shape=(3, 32, 32))


def serialize_cifar_record(pixels_u8: np.ndarray, fine_label: int,
                           coarse_label: int | None = None) -> bytes:
    """Inverse of the parser for one record; pixels are 3072 uint8 values."""
    pixels_u8 = np.asarray(pixels_u8, dtype=np.uint8).reshape(-1)
    if pixels_u8.size != 3072:
        raise FormatError(f"expected 3072 pixel bytes, got {pixels_u8.size}")
    if coarse_label is None:
        return bytes([fine_label]) + pixels_u8.tobytes()
    return bytes([coarse_label, fine_label]) + pixels_u8.tobytes()


# -- generic tensor import (documented in README) --------------------------------


def save_tensor_dataset(path, inputs: np.ndarray, labels: np.ndarray) -> None:
    """Write the little-endian headered tensor file: magic 'TSD1', u8 dtype code
    (0=f32, 1=f64, 2=u8), u8 rank, u16 pad, u64 extents, u64 label count,
    i64 labels, then the row-major payload."""
    inputs = np.ascontiguousarray(inputs)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.dtype not in _DTYPE_TO_CODE:
        raise FormatError(f"unsupported dtype {inputs.dtype}")
    if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
        raise FormatError("labels must be 1-D with one entry per leading-extent row")
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(struct.pack("<BBH", _DTYPE_TO_CODE[inputs.dtype], inputs.ndim, 0))
        fh.write(struct.pack(f"<{inputs.ndim}Q", *inputs.shape))
        fh.write(struct.pack("<Q", labels.shape[0]))
        fh.write(labels.astype("<i8").tobytes())
        fh.write(inputs.astype(inputs.dtype.newbyteorder("<")).tobytes())


def load_tensor_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != _TENSOR_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_TENSOR_MAGIC!r}")
    dtype_code, rank, _ = struct.unpack_from("<BBH", blob, 4)
    if dtype_code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {dtype_code}")
    off = 8
    extents = struct.unpack_from(f"<{rank}Q", blob, off)
    off += 8 * rank
    (n_labels,) = struct.unpack_from("<Q", blob, off)
    off += 8
    labels = np.frombuffer(blob, dtype="<i8", count=n_labels, offset=off).astype(np.int64)
    off += 8 * n_labels
    dtype = np.dtype(_DTYPE_CODES[dtype_code]).newbyteorder("<")
    count = int(np.prod(extents))
    expected = off + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(f"payload length mismatch: file {len(blob)}, expected {expected}")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
    data = data.reshape(extents).astype(_DTYPE_CODES[dtype_code])
    if n_labels != extents[0]:
        raise FormatError("label count must equal the leading extent")
    return data, labels


def load_tensor_file_dataset(train_path, test_path=None) -> Dataset:
    """Build a vector Dataset from tensor files (rows flattened)."""
    x, y = load_tensor_dataset(train_path)
    x = x.reshape(x.shape[0], -1).astype(np.float64)
    if test_path is not None:
        tx, ty = load_tensor_dataset(test_path)
        tx = tx.reshape(tx.shape[0], -1).astype(np.float64)
    else:
        tx = np.empty((0, x.shape[1]))
        ty = np.empty(0, dtype=np.int64)
    n_classes = int(max(y.max(initial=-1), ty.max(initial=-1))) + 1
    return Dataset(x, y, tx, ty, n_classes, kind="vector")


# -- synthetic generator ----------------------------------------------------------


def gen_synthetic(n_classes: int, dim: int, per_class: int, seed: int,
                  sigma: float = 0.5, per_class_test: int | None = None) -> Dataset:
    """Class-conditional Gaussian clusters around unit-norm mean directions.

    Deterministic in all arguments.  The training pool holds
    ``n_classes * per_class`` samples; a disjoint test pool holds
    ``per_class_test`` per class (default: per_class // 4, at least 1).
    """
    if n_classes < 2 or dim < 2:
        raise ConfigurationError("gen_synthetic needs n_classes >= 2 and dim >= 2")
    if per_class_test is None:
        per_class_test = max(1, per_class // 4)
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_classes, dim]))
    means = rng.standard_normal((n_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    def draw(count):
        xs = np.empty((n_classes * count, dim))
        ys = np.empty(n_classes * count, dtype=np.int64)
        for c in range(n_classes):
            noise = rng.standard_normal((count, dim))
            xs[c * count:(c + 1) * count] = means[c] + sigma * noise
            ys[c * count:(c + 1) * count] = c
        return xs, ys

    x, y = draw(per_class)
    tx, ty = draw(per_class_test)
    return Dataset(x, y, tx, ty, n_classes, kind="vector")


def synthetic_class_means(n_classes: int, dim: int, seed: int) -> np.ndarray:
    """The exact mean directions gen_synthetic uses (for nearest-mean oracles)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_classes, dim]))
    means = rng.standard_normal((n_classes, dim))
    return means / np.linalg.norm(means, axis=1, keepdims=True)


# -- class-incremental task splitting ----------------------------------------------


@dataclass
class Task:
    classes: list[int]
    train_idx: np.ndarray  # indices into dataset.inputs
    val_idx: np.ndarray    # indices into dataset.inputs
    test_idx: np.ndarray   # indices into dataset.test_inputs


@dataclass
class TaskStream:
    dataset: Dataset
    tasks: list[Task]

    def __len__(self) -> int:
        return len(self.tasks)

    def all_train_idx(self, upto: int | None = None) -> np.ndarray:
        tasks = self.tasks if upto is None else self.tasks[:upto]
        return np.concatenate([t.train_idx for t in tasks])

    def all_val_idx(self, upto: int | None = None) -> np.ndarray:
        tasks = self.tasks if upto is None else self.tasks[:upto]
        return np.concatenate([t.val_idx for t in tasks])

    def all_test_idx(self, upto: int | None = None) -> np.ndarray:
        tasks = self.tasks if upto is None else self.tasks[:upto]
        return np.concatenate([t.test_idx for t in tasks])


def split_tasks(dataset: Dataset, n_tasks: int, seed: int,
                val_fraction: float = 0.05, shuffle_classes: bool = True) -> TaskStream:
    """Partition classes into ``n_tasks`` equal groups and stratify train/val.

    Classes are permuted by ``seed`` (or kept in canonical order), then split
    contiguously.  Rejects class counts not divisible by n_tasks.
    """
    k = dataset.n_classes
    if k % n_tasks != 0:
        raise ConfigurationError(
            f"{k} classes do not divide into {n_tasks} equal tasks")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A55]))
    order = rng.permutation(k) if shuffle_classes else np.arange(k)
    per_task = k // n_tasks

    tasks = []
    for t in range(n_tasks):
        classes = [int(c) for c in order[t * per_task:(t + 1) * per_task]]
        train_parts, val_parts, test_parts = [], [], []
        for c in classes:
            idx = np.nonzero(dataset.labels == c)[0]
            perm = np.random.default_rng(
                np.random.SeedSequence([seed, 0x5917, c])).permutation(idx.size)
            idx = idx[perm]
            n_val = int(idx.size * val_fraction)
            val_parts.append(idx[:n_val])
            train_parts.append(idx[n_val:])
            test_parts.append(np.nonzero(dataset.test_labels == c)[0])
        tasks.append(Task(
            classes=classes,
            train_idx=np.sort(np.concatenate(train_parts)),
            val_idx=np.sort(np.concatenate(val_parts)) if val_fraction > 0
            else np.empty(0, dtype=np.int64),
            test_idx=np.sort(np.concatenate(test_parts)),
        ))
    return TaskStream(dataset, tasks)


# -- two-view augmentation -----------------------------------------------------------


@dataclass
class AugmentationPolicy:
    """Stochastic transform parameters for the two-view pipeline.

    Vector mode: additive Gaussian noise, random coordinate dropout, random
    global scaling.  Image mode: random resized crop, horizontal flip,
    brightness/contrast/channel jitter, random grayscale.
    """

    mode: str = "vector"
    # vector mode
    noise_sigma: float = 0.1
    dropout_frac: float = 0.2
    scale_range: tuple[float, float] = (0.8, 1.2)
    # image mode
    crop_scale: tuple[float, float] = (0.6, 1.0)
    hflip_p: float = 0.5
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    channel_jitter: float = 0.2
    grayscale_p: float = 0.1
    image_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        for p in (self.hflip_p, self.jitter_p, self.grayscale_p):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError("augmentation probabilities must lie in [0, 1]")
        if not 0.0 <= self.dropout_frac <= 1.0:
            raise ConfigurationError("dropout fraction must lie in [0, 1]")


def identity_policy(mode: str = "vector") -> AugmentationPolicy:
    return AugmentationPolicy(
        mode=mode, noise_sigma=0.0, dropout_frac=0.0, scale_range=(1.0, 1.0),
        crop_scale=(1.0, 1.0), hflip_p=0.0, jitter_p=0.0, brightness=0.0,
        contrast=0.0, channel_jitter=0.0, grayscale_p=0.0)


@dataclass
class ViewBatch:
    """Two stochastic views of the same samples, row-aligned."""

    x_a: Tensor
    x_b: Tensor
    indices: np.ndarray


def _augment_vector(x: np.ndarray, policy: AugmentationPolicy,
                    rng: np.random.Generator) -> np.ndarray:
    out = x
    if policy.noise_sigma > 0:
        out = out + policy.noise_sigma * rng.standard_normal(x.shape)
    if policy.dropout_frac > 0:
        keep = rng.random(x.shape) >= policy.dropout_frac
        out = out * keep
    lo, hi = policy.scale_range
    if hi > lo:
        out = out * rng.uniform(lo, hi)
    elif lo != 1.0:
        out = out * lo
    return out


def _augment_image(x: np.ndarray, policy: AugmentationPolicy,
                   rng: np.random.Generator) -> np.ndarray:
    c, h, w = policy.image_shape
    img = x.reshape(c, h, w)
    lo, hi = policy.crop_scale
    if hi > lo or lo < 1.0:
        area = rng.uniform(lo, hi)
        side_h = max(1, int(round(h * np.sqrt(area))))
        side_w = max(1, int(round(w * np.sqrt(area))))
        top = rng.integers(0, h - side_h + 1)
        left = rng.integers(0, w - side_w + 1)
        patch = img[:, top:top + side_h, left:left + side_w]
        # bilinear resize back to (h, w)
        ys = np.linspace(0, side_h - 1, h)
        xs = np.linspace(0, side_w - 1, w)
        y0 = np.clip(ys.astype(int), 0, side_h - 2) if side_h > 1 else np.zeros(h, int)
        x0 = np.clip(xs.astype(int), 0, side_w - 2) if side_w > 1 else np.zeros(w, int)
        wy = (ys - y0) if side_h > 1 else np.zeros(h)
        wx = (xs - x0) if side_w > 1 else np.zeros(w)
        y1 = np.minimum(y0 + 1, side_h - 1)
        x1 = np.minimum(x0 + 1, side_w - 1)
        top_rows = (patch[:, y0][:, :, x0] * (1 - wx) + patch[:, y0][:, :, x1] * wx)
        bot_rows = (patch[:, y1][:, :, x0] * (1 - wx) + patch[:, y1][:, :, x1] * wx)
        img = top_rows * (1 - wy[None, :, None]) + bot_rows * wy[None, :, None]
    if policy.hflip_p > 0 and rng.random() < policy.hflip_p:
        img = img[:, :, ::-1]
    if policy.jitter_p > 0 and rng.random() < policy.jitter_p:
        if policy.brightness > 0:
            img = img + rng.uniform(-policy.brightness, policy.brightness)
        if policy.contrast > 0:
            factor = 1.0 + rng.uniform(-policy.contrast, policy.contrast)
            img = (img - img.mean()) * factor + img.mean()
        if policy.channel_jitter > 0:
            factors = 1.0 + rng.uniform(-policy.channel_jitter, policy.channel_jitter, size=(c, 1, 1))
            img = img * factors
    if policy.grayscale_p > 0 and rng.random() < policy.grayscale_p:
        img = np.broadcast_to(img.mean(axis=0, keepdims=True), img.shape)
    return np.clip(img, 0.0, 1.0).reshape(-1)


def make_views(inputs: np.ndarray, source_indices: np.ndarray,
               policy: AugmentationPolicy, rng_seed: int,
               dtype=np.float64) -> ViewBatch:
    """Draw two independent augmented views per sample.

    The per-sample generator is seeded by (rng_seed, source_index, view_id),
    so the result does not depend on batch composition or worker layout.
    """
    if inputs.shape[0] == 0:
        raise ConfigurationError("make_views needs a non-empty batch")
    augment = _augment_vector if policy.mode == "vector" else _augment_image
    views = []
    for view_id in (0, 1):
        rows = np.empty(inputs.shape, dtype=dtype)
        for i, src in enumerate(source_indices):
            rng = np.random.default_rng(
                np.random.SeedSequence([int(rng_seed), int(src), view_id]))
            rows[i] = augment(inputs[i], policy, rng)
        views.append(Tensor(rows, dtype=dtype))
    return ViewBatch(views[0], views[1], np.asarray(source_indices))


def minibatches(indices: np.ndarray, batch_size: int, epoch_seed: int):
    """Seeded shuffle of ``indices`` chunked into batches; tails < 2 are dropped."""
    if batch_size < 2:
        raise ConfigurationError("batch_size must be at least 2")
    rng = np.random.default_rng(np.random.SeedSequence([int(epoch_seed), 0xBA7C4]))
    order = rng.permutation(indices.size)
    shuffled = indices[order]
    for start in range(0, shuffled.size, batch_size):
        chunk = shuffled[start:start + batch_size]
        if chunk.size >= 2:
            yield chunk
