"""Optimizers and learning-rate schedules for the autodiff core."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigurationError, ContractError, NumericError


@dataclass
class ParamGroup:
    """Named set of parameters sharing one effective learning rate."""

    name: str
    params: list[Tensor]


class SGD:
    """SGD with momentum and decoupled-from-schedule weight decay.

    ``step`` expects a per-group rate mapping, applies the update in place,
    verifies the result is finite, and zeroes the gradients.
    """

    def __init__(self, groups: list[ParamGroup], momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.groups = groups
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.step_count = 0
        self._buffers = {
            id(p): np.zeros_like(p.data) for g in groups for p in g.params
        }

    def step(self, rates: dict[str, float]) -> None:
        for group in self.groups:
            lr = rates[group.name]
            for p in group.params:
                if p.grad is None:
                    raise ContractError(
                        f"parameter in group '{group.name}' has no gradient")
                g = p.grad
                if self.weight_decay:
                    g = g + self.weight_decay * p.data
                if self.momentum:
                    buf = self._buffers[id(p)]
                    buf *= self.momentum
                    buf += g
                    g = buf
                p.data -= lr * g
                if not np.all(np.isfinite(p.data)):
                    raise NumericError(
                        f"non-finite parameter after SGD step {self.step_count}")
                p.grad = None
        self.step_count += 1

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.grad = None


class Adam:
    """Adam with bias correction; used by the linear probes."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {id(p): np.zeros_like(p.data) for p in params}
        self._v = {id(p): np.zeros_like(p.data) for p in params}

    def step(self, lr: float | None = None) -> None:
        rate = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        for p in self.params:
            if p.grad is None:
                raise ContractError("parameter has no gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p.data -= rate * mhat / (np.sqrt(vhat) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NumericError(f"non-finite parameter after Adam step {t}")
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class LRSchedule:
    """Rate as a function of the step (or epoch) index.

    kinds:
      cosine   -- anneal from ``initial`` to ``floor`` over ``anneal_steps``,
                  then hold ``floor``;
      constant -- always ``initial``.
    """

    kind: str
    initial: float
    anneal_steps: int = 0
    floor: float = 0.0

    def __post_init__(self):
        if self.initial <= 0:
            raise ConfigurationError("schedule initial rate must be > 0")
        if self.kind == "cosine":
            if self.anneal_steps <= 0:
                raise ConfigurationError("cosine schedule needs anneal_steps > 0")
            if not 0 < self.floor <= self.initial:
                raise ConfigurationError("cosine floor must satisfy 0 < floor <= initial")
        elif self.kind != "constant":
            raise ConfigurationError(
                f"unknown schedule kind '{self.kind}' (expected cosine|constant)")

    def rate(self, step: int) -> float:
        if self.kind == "constant":
            return self.initial
        if step >= self.anneal_steps:
            return self.floor
        span = self.initial - self.floor
        return self.floor + span * 0.5 * (1.0 + math.cos(math.pi * step / self.anneal_steps))


@dataclass
class PatienceDecay:
    """Decay the rate after ``patience`` non-improving observations.

    Used by probe training: the caller reports a validation metric per epoch;
    the rate drops by ``factor`` up to ``max_decays`` times, after which one
    more exhausted window signals stop.
    """

    initial: float
    factor: float = 0.3
    patience: int = 5
    max_decays: int = 3
    best: float = field(default=-math.inf, init=False)
    stale: int = field(default=0, init=False)
    decays: int = field(default=0, init=False)
    rate: float = field(init=False)

    def __post_init__(self):
        self.rate = self.initial

    def observe(self, metric: float) -> bool:
        """Record a validation metric; returns True when training should stop."""
        if metric > self.best:
            self.best = metric
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            if self.decays >= self.max_decays:
                return True
            self.decays += 1
            self.rate *= self.factor
            self.stale = 0
        return False
