"""Self-supervised objectives and continual-learning regularizers.

Covers the cross-correlation redundancy-reduction loss, the contrastive
NT-Xent loss, the predictor/stop-gradient cosine loss, plain feature
distillation, its projected variant, and the Fisher-weighted parameter
anchoring penalty.  All functions are pure maps over Tensors and fully
differentiable where the contract requires it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (ConfigurationError, DegenerateBatchError, DimensionError,
                     NumericError)

EPS = 1e-8


def cross_correlation(z_a: Tensor, z_b: Tensor, standardize: bool = True) -> Tensor:
    """Feature-by-feature cross-correlation matrix of two view embeddings.

    With ``standardize`` (the training default) columns are batch mean-centered
    and std-normalized first; without it the raw column products are used.
    Denominators are clamped at EPS so all-zero columns stay finite.
    """
    if z_a.shape != z_b.shape:
        raise DimensionError(f"view shapes differ: {z_a.shape} vs {z_b.shape}")
    if z_a.shape[0] < 2:
        raise DegenerateBatchError("cross-correlation needs a batch of at least 2")
    if standardize:
        z_a = _standardize_columns(z_a)
        z_b = _standardize_columns(z_b)
    num = ad.matmul(ad.transpose(z_a), z_b)                      # [Z, Z]
    norm_a = ad.clip_min(ad.sqrt(ad.sum_(z_a * z_a, axis=0)), EPS)  # [Z]
    norm_b = ad.clip_min(ad.sqrt(ad.sum_(z_b * z_b, axis=0)), EPS)
    z_dim = z_a.shape[1]
    denom = ad.reshape(norm_a, (z_dim, 1)) * ad.reshape(norm_b, (1, z_dim))
    return num / denom


def _standardize_columns(z: Tensor) -> Tensor:
    mu = ad.mean(z, axis=0)
    centered = z - mu
    std = ad.sqrt(ad.mean(centered * centered, axis=0))
    return centered / ad.clip_min(std, EPS)


def barlow_loss(c: Tensor, trade_off: float = 5e-3) -> Tensor:
    """Invariance term on the diagonal plus weighted redundancy off the diagonal."""
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"correlation matrix must be square, got {c.shape}")
    eye = np.eye(c.shape[0], dtype=c.dtype)
    diag_err = (Tensor(eye) - c * Tensor(eye)) ** 2
    invariance = ad.sum_(diag_err)
    off = (c * Tensor(1.0 - eye)) ** 2
    redundancy = ad.sum_(off)
    return invariance + ad.scale(redundancy, trade_off)


def barlow_twins_loss(z_a: Tensor, z_b: Tensor, trade_off: float = 5e-3,
                      standardize: bool = True) -> Tensor:
    return barlow_loss(cross_correlation(z_a, z_b, standardize), trade_off)


def ntxent_loss(z_a: Tensor, z_b: Tensor, temperature: float = 0.5) -> Tensor:
    """Normalized-temperature cross entropy over the 2B in-batch embeddings."""
    if temperature <= 0:
        raise ConfigurationError("temperature must be > 0")
    if z_a.shape[0] < 2:
        raise DegenerateBatchError("contrastive loss needs a batch of at least 2")
    b = z_a.shape[0]
    z = ad.concat([z_a, z_b], axis=0)                            # [2B, Z]
    norms = ad.clip_min(ad.l2norm(z, axis=1, keepdims=True), EPS)
    z = z / norms
    sim = ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / temperature)
    n = 2 * b
    mask = np.full((n, n), 0.0)
    np.fill_diagonal(mask, -1e9)                                 # self-pairs excluded
    logits = sim + Tensor(mask)
    pos = np.zeros((n, n))
    idx = np.arange(n)
    pos[idx, (idx + b) % n] = 1.0                                # paired view
    pos_logit = ad.sum_(logits * Tensor(pos), axis=1)
    return ad.mean(ad.logsumexp(logits, axis=1) - pos_logit)


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Batch mean of the negated row-wise cosine; zero rows are an error."""
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    norm_a = ad.l2norm(a, axis=1)
    norm_b = ad.l2norm(b, axis=1)
    if np.any(norm_a.data < EPS) or np.any(norm_b.data < EPS):
        raise NumericError("cosine similarity of a (near-)zero row")
    dots = ad.sum_(a * b, axis=1)
    return ad.mean(ad.neg(dots / (norm_a * norm_b)))


def simsiam_loss(p_a: Tensor, z_b_detached: Tensor,
                 p_b: Tensor, z_a_detached: Tensor) -> Tensor:
    """Symmetric predictor-to-stopgrad cosine loss; detached targets get no grads."""
    if z_b_detached.requires_grad or z_a_detached.requires_grad:
        raise ConfigurationError("target branches must be detached")
    half_a = cosine_sim(p_a, z_b_detached)
    half_b = cosine_sim(p_b, z_a_detached)
    return ad.scale(half_a + half_b, 0.5)


def fd_loss(f_t: Tensor, f_prev: Tensor, squared: bool = False) -> Tensor:
    """Mean over rows of the distance between current and snapshot features.

    The default is the unsquared L2 norm per row (a tiny eps inside the sqrt
    keeps the gradient finite at zero distance); ``squared`` switches to the
    squared norm.
    """
    if f_t.shape != f_prev.shape:
        raise DimensionError(f"shapes differ: {f_t.shape} vs {f_prev.shape}")
    d = f_t - f_prev
    if squared:
        return ad.mean(ad.sum_(d * d, axis=1))
    return ad.mean(ad.l2norm(d, axis=1, eps_sq=1e-24))


def pfr_loss(m_t: Tensor, f_prev: Tensor) -> Tensor:
    """Cosine alignment between projected current features and snapshot features."""
    return cosine_sim(m_t, f_prev)


@dataclass
class FisherDiag:
    """Per-parameter squared-gradient importances with their anchor values."""

    values: dict[str, np.ndarray]
    anchor: dict[str, np.ndarray]

    def accumulate(self, other: "FisherDiag") -> None:
        """Running-sum consolidation across task boundaries (anchor replaced)."""
        for name, v in other.values.items():
            if name in self.values:
                self.values[name] = self.values[name] + v
            else:
                self.values[name] = v.copy()
        self.anchor = {k: v.copy() for k, v in other.anchor.items()}


def estimate_fisher(named_params: dict[str, Tensor], loss_batches,
                    n_batches: int) -> FisherDiag:
    """Mean squared gradient of the self-supervised loss over ``n_batches``.

    ``loss_batches`` yields scalar loss Tensors built on the current graph;
    parameters missed by a batch's graph contribute zero for that batch.
    """
    if n_batches <= 0:
        raise ConfigurationError("fisher estimation needs n_batches >= 1")
    totals = {name: np.zeros_like(p.data) for name, p in named_params.items()}
    seen = 0
    for loss in loss_batches:
        if seen >= n_batches:
            break
        for p in named_params.values():
            p.grad = None
        ad.backward(loss)
        for name, p in named_params.items():
            if p.grad is not None:
                totals[name] += p.grad ** 2
        seen += 1
    if seen == 0:
        raise ConfigurationError("fisher estimation received no batches")
    values = {name: t / seen for name, t in totals.items()}
    anchor = {name: p.data.copy() for name, p in named_params.items()}
    for p in named_params.values():
        p.grad = None
    return FisherDiag(values, anchor)


def ewc_penalty(named_params: dict[str, Tensor], fisher: FisherDiag) -> Tensor:
    """0.5 * sum_i F_i (theta_i - anchor_i)^2 over all anchored parameters."""
    total: Tensor | None = None
    for name, p in named_params.items():
        if name not in fisher.values:
            continue
        f = fisher.values[name]
        anchor = fisher.anchor[name]
        if f.shape != p.data.shape:
            raise DimensionError(f"fisher shape mismatch for '{name}'")
        d = p - Tensor(anchor)
        term = ad.sum_(Tensor(f) * d * d)
        total = term if total is None else total + term
    if total is None:
        raise ConfigurationError("no overlapping parameters between model and fisher")
    return ad.scale(total, 0.5)
