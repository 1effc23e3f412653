"""Model components: encoder, view projector, temporal projector, snapshots.

All networks are relu MLPs with optional batch normalization between hidden
layers, built on the autodiff core.  Snapshots are frozen deep copies of the
encoder used as regularization targets; they run in eval mode and never
receive gradients.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNorm1d, Tensor
from .errors import DimensionError, FormatError

_CKPT_MAGIC = b"CSCK"
_CKPT_VERSION = 1
_CKPT_DTYPES = {0: np.float32, 1: np.float64}
_CKPT_CODES = {np.dtype(v): k for k, v in _CKPT_DTYPES.items()}


class Linear:
    """Affine layer with Kaiming-uniform fan-in weights and zero bias."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float64):
        limit = np.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.W) + self.b

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


class MLP:
    """relu MLP over flattened inputs; batchnorm optional between hidden layers."""

    def __init__(self, dims: list[int], batchnorm: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.dims = list(dims)
        self.batchnorm = batchnorm
        self.dtype = np.dtype(dtype)
        self.layers = [Linear(dims[i], dims[i + 1], rng, dtype)
                       for i in range(len(dims) - 1)]
        self.bns = [BatchNorm1d(dims[i + 1], dtype=dtype) if batchnorm else None
                    for i in range(len(dims) - 2)]

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise DimensionError(
                f"expected input [B, {self.dims[0]}], got {x.shape}")
        h = x
        for i, layer in enumerate(self.layers[:-1]):
            h = layer(h)
            if self.bns[i] is not None:
                h = self.bns[i](h, train)
            h = ad.relu(h)
        return self.layers[-1](h)

    __call__ = forward

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}lin{i}.W"] = layer.W
            out[f"{prefix}lin{i}.b"] = layer.b
        for i, bn in enumerate(self.bns):
            if bn is not None:
                out[f"{prefix}bn{i}.gamma"] = bn.gamma
                out[f"{prefix}bn{i}.beta"] = bn.beta
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, bn in enumerate(self.bns):
            if bn is not None:
                out[f"{prefix}bn{i}.running_mean"] = bn.running_mean
                out[f"{prefix}bn{i}.running_var"] = bn.running_var
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_state(self, params: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, tensor in self.named_parameters(prefix).items():
            tensor.data = np.array(params[name], dtype=self.dtype)
        for i, bn in enumerate(self.bns):
            if bn is not None:
                bn.running_mean = np.array(params[f"{prefix}bn{i}.running_mean"],
                                           dtype=self.dtype)
                bn.running_var = np.array(params[f"{prefix}bn{i}.running_var"],
                                          dtype=self.dtype)

    def clone(self, requires_grad: bool = False) -> "MLP":
        twin = MLP(self.dims, self.batchnorm, np.random.default_rng(0), self.dtype)
        state = {}
        state.update({k: v.data for k, v in self.named_parameters().items()})
        state.update(self.named_buffers())
        twin.load_state(state)
        if not requires_grad:
            for p in twin.parameters():
                p.requires_grad = False
        return twin


@dataclass
class ModelArch:
    """Layer widths for every component of a model bundle."""

    input_dim: int
    hidden: tuple[int, ...] = (256, 256)
    feature_dim: int = 128
    proj_hidden: int = 256
    proj_dim: int = 128
    temporal_hidden: int = 256
    encoder_batchnorm: bool = True

    def encoder_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.feature_dim]

    def projector_dims(self) -> list[int]:
        return [self.feature_dim, self.proj_hidden, self.proj_dim]

    def temporal_dims(self) -> list[int]:
        return [self.feature_dim, self.temporal_hidden, self.feature_dim]

    def predictor_dims(self) -> list[int]:
        return [self.proj_dim, max(2, self.proj_dim // 2), self.proj_dim]


@dataclass
class ModelBundle:
    """Encoder plus projection heads; temporal/predictor heads are optional."""

    arch: ModelArch
    encoder: MLP
    projector: MLP
    temporal: MLP | None = None
    predictor: MLP | None = None

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.encoder.named_parameters("encoder.")
        out.update(self.projector.named_parameters("projector."))
        if self.temporal is not None:
            out.update(self.temporal.named_parameters("temporal."))
        if self.predictor is not None:
            out.update(self.predictor.named_parameters("predictor."))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = self.encoder.named_buffers("encoder.")
        out.update(self.projector.named_buffers("projector."))
        if self.temporal is not None:
            out.update(self.temporal.named_buffers("temporal."))
        if self.predictor is not None:
            out.update(self.predictor.named_buffers("predictor."))
        return out


def _component_rng(init_seed: int, component: str, task_index: int = 0):
    tag = int.from_bytes(hashlib.sha256(component.encode()).digest()[:4], "big")
    return np.random.default_rng(np.random.SeedSequence([init_seed, tag, task_index]))


def build_model(arch: ModelArch, init_seed: int, with_temporal: bool = False,
                with_predictor: bool = False, dtype=np.float64) -> ModelBundle:
    """Construct a bundle; each component owns an independent init stream."""
    encoder = MLP(arch.encoder_dims(), arch.encoder_batchnorm,
                  _component_rng(init_seed, "encoder"), dtype)
    projector = MLP(arch.projector_dims(), True,
                    _component_rng(init_seed, "projector"), dtype)
    temporal = None
    predictor = None
    if with_temporal:
        temporal = MLP(arch.temporal_dims(), True,
                       _component_rng(init_seed, "temporal", 1), dtype)
    if with_predictor:
        predictor = MLP(arch.predictor_dims(), True,
                        _component_rng(init_seed, "predictor"), dtype)
    return ModelBundle(arch, encoder, projector, temporal, predictor)


def reset_temporal(bundle: ModelBundle, init_seed: int, task_index: int) -> None:
    """Fresh temporal projector at a task boundary (seeded per task)."""
    bundle.temporal = MLP(bundle.arch.temporal_dims(), True,
                          _component_rng(init_seed, "temporal", task_index),
                          bundle.encoder.dtype)


# -- functional forward surface ---------------------------------------------------


def forward_encoder(bundle: ModelBundle, x: Tensor, train: bool = False) -> Tensor:
    return bundle.encoder.forward(x, train)


def forward_projector(bundle: ModelBundle, feats: Tensor, train: bool = False) -> Tensor:
    return bundle.projector.forward(feats, train)


def forward_temporal(bundle: ModelBundle, feats: Tensor, train: bool = False) -> Tensor:
    return bundle.temporal.forward(feats, train)


# -- snapshots ---------------------------------------------------------------------


class Snapshot:
    """Frozen copy of the encoder at a task boundary; eval-mode, gradient-exempt."""

    def __init__(self, encoder: MLP):
        self.encoder = encoder.clone(requires_grad=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.encoder.forward(x.detach(), train=False)

    __call__ = forward

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.encoder.named_parameters()):
            h.update(self.encoder.named_parameters()[name].data.tobytes())
        for name, buf in sorted(self.encoder.named_buffers().items()):
            h.update(buf.tobytes())
        return h.hexdigest()


def take_snapshot(bundle: ModelBundle) -> Snapshot:
    return Snapshot(bundle.encoder)


def forward_snapshot(snap: Snapshot, x: Tensor) -> Tensor:
    return snap.forward(x)


def params_hash(named: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(named):
        h.update(name.encode())
        h.update(named[name].data.tobytes())
    return h.hexdigest()


# -- checkpoint file format ---------------------------------------------------------


def save_checkpoint(path, bundle: ModelBundle, extra_meta: dict | None = None,
                    extra_blocks: dict[str, np.ndarray] | None = None) -> None:
    """Headered binary: magic, version, JSON meta, then named array blocks.

    Block layout: u16 name length, name bytes, u8 dtype code (0=f32, 1=f64),
    u8 rank, u64 extents, raw little-endian payload.
    """
    meta = {
        "arch": {
            "input_dim": bundle.arch.input_dim,
            "hidden": list(bundle.arch.hidden),
            "feature_dim": bundle.arch.feature_dim,
            "proj_hidden": bundle.arch.proj_hidden,
            "proj_dim": bundle.arch.proj_dim,
            "temporal_hidden": bundle.arch.temporal_hidden,
            "encoder_batchnorm": bundle.arch.encoder_batchnorm,
        },
        "has_temporal": bundle.temporal is not None,
        "has_predictor": bundle.predictor is not None,
        "dtype": str(bundle.encoder.dtype),
    }
    if extra_meta:
        meta.update(extra_meta)
    blocks: dict[str, np.ndarray] = {}
    blocks.update({k: v.data for k, v in bundle.named_parameters().items()})
    blocks.update(bundle.named_buffers())
    if extra_blocks:
        blocks.update(extra_blocks)

    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(blocks)))
        for name in sorted(blocks):
            arr = np.ascontiguousarray(blocks[name])
            code = _CKPT_CODES[arr.dtype]
            name_b = name.encode()
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> tuple[ModelBundle, dict, dict[str, np.ndarray]]:
    """Rebuild the bundle; returns (bundle, meta, non-model extra blocks)."""
    blob = Path(path).read_bytes()
    if blob[:4] != _CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(blob[off:off + meta_len].decode())
    off += meta_len
    (n_blocks,) = struct.unpack_from("<I", blob, off)
    off += 4
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode()
        off += name_len
        code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        dtype = np.dtype(_CKPT_DTYPES[code]).newbyteorder("<")
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        off += count * dtype.itemsize
        blocks[name] = arr.reshape(shape).astype(_CKPT_DTYPES[code])

    a = meta["arch"]
    arch = ModelArch(
        input_dim=a["input_dim"], hidden=tuple(a["hidden"]),
        feature_dim=a["feature_dim"], proj_hidden=a["proj_hidden"],
        proj_dim=a["proj_dim"], temporal_hidden=a["temporal_hidden"],
        encoder_batchnorm=a["encoder_batchnorm"])
    dtype = np.dtype(meta["dtype"])
    bundle = build_model(arch, 0, with_temporal=meta["has_temporal"],
                         with_predictor=meta["has_predictor"], dtype=dtype)
    model_state = {}
    extras = {}
    for name, arr in blocks.items():
        head = name.split(".", 1)[0]
        if head in ("encoder", "projector", "temporal", "predictor"):
            model_state[name] = arr
        else:
            extras[name] = arr
    bundle.encoder.load_state(model_state, "encoder.")
    bundle.projector.load_state(model_state, "projector.")
    if bundle.temporal is not None:
        bundle.temporal.load_state(model_state, "temporal.")
    if bundle.predictor is not None:
        bundle.predictor.load_state(model_state, "predictor.")
    return bundle, meta, extras
