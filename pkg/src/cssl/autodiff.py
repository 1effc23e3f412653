"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float64 by default, float32 optional).  Each
operation records its parents and a backward closure on the result, so the
computation graph doubles as the tape; ``backward`` runs one topologically
ordered reverse sweep and accumulates gradients into every tensor that
requires them.  Broadcasting follows numpy's size-1 rules and gradients are
summed back over broadcast axes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateBatchError, DimensionError, NumericError

FLOAT_DTYPES = (np.float32, np.float64)


def _coerce_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional real array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _coerce_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def detach(self) -> "Tensor":
        """View of the same values with no graph attachment."""
        return Tensor._result(self.data, (), None)

    def copy(self, requires_grad: bool | None = None) -> "Tensor":
        t = Tensor(self.data.copy())
        t.requires_grad = self.requires_grad if requires_grad is None else requires_grad
        return t

    # -- introspection --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=5)}{flag})"

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other, self))

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


def _acc(local: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    prev = local.get(key)
    local[key] = g if prev is None else prev + g


# -- elementwise and linear-algebra operations --------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def backward(g, local):
        _acc(local, a, _unbroadcast(g, a.shape))
        _acc(local, b, _unbroadcast(g, b.shape))

    return Tensor._result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def backward(g, local):
        _acc(local, a, _unbroadcast(g, a.shape))
        _acc(local, b, _unbroadcast(-g, b.shape))

    return Tensor._result(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def backward(g, local):
        _acc(local, a, _unbroadcast(g * b.data, a.shape))
        _acc(local, b, _unbroadcast(g * a.data, b.shape))

    return Tensor._result(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out = a.data / b.data

    def backward(g, local):
        _acc(local, a, _unbroadcast(g / b.data, a.shape))
        _acc(local, b, _unbroadcast(-g * out / b.data, b.shape))

    return Tensor._result(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g, local):
        _acc(local, a, -g)

    return Tensor._result(-a.data, (a,), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar (no graph node for the constant)."""
    factor = float(factor)

    def backward(g, local):
        _acc(local, a, g * factor)

    return Tensor._result(a.data * factor, (a,), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g, local):
        _acc(local, a, g * exponent * a.data ** (exponent - 1.0))

    return Tensor._result(a.data ** exponent, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g, local):
        _acc(local, a, g * mask)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g, local):
        _acc(local, a, g * out)

    return Tensor._result(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log requires strictly positive inputs")

    def backward(g, local):
        _acc(local, a, g / a.data)

    return Tensor._result(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("sqrt requires non-negative inputs")
    out = np.sqrt(a.data)

    def backward(g, local):
        _acc(local, a, g * 0.5 / out)

    return Tensor._result(out, (a,), backward)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    shifted = relu(a - float(floor))
    return shifted + float(floor)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents disagree: {a.shape} @ {b.shape}")

    def backward(g, local):
        _acc(local, a, g @ b.data.T)
        _acc(local, b, a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.shape}")

    def backward(g, local):
        _acc(local, a, g.T)

    return Tensor._result(a.data.T, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g, local):
        _acc(local, a, g.reshape(a.shape))

    return Tensor._result(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, local):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _acc(local, t, g[tuple(sl)])

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


# -- reductions ----------------------------------------------------------------


def _normalize_axes(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim for a in axis)
    if any(a >= ndim for a in axes):
        raise DimensionError(f"axis {axis} invalid for rank {ndim}")
    return axes


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if a.size == 0:
        raise NumericError("reduction over an empty tensor")
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g, local):
        g_arr = np.asarray(g)
        if not keepdims and axes is not None:
            g_arr = np.expand_dims(g_arr, axes)
        elif axes is None and not keepdims:
            g_arr = np.asarray(g)
        _acc(local, a, np.broadcast_to(g_arr, a.shape).copy())

    return Tensor._result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if a.size == 0:
        raise NumericError("reduction over an empty tensor")
    axes = _normalize_axes(axis, a.ndim)
    if axes is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def l2norm(a: Tensor, axis=None, keepdims: bool = False, eps_sq: float = 0.0) -> Tensor:
    """Euclidean norm over ``axis``; eps_sq > 0 keeps the gradient finite at 0."""
    total = sum_(a * a, axis=axis, keepdims=keepdims)
    if eps_sq:
        total = total + float(eps_sq)
    return sqrt(total)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """Row-stable log-sum-exp; the max shift is a detached constant."""
    shift = np.max(a.data, axis=axis, keepdims=True)
    summed = sum_(exp(a - Tensor(shift)), axis=axis)
    return log(summed) + Tensor(np.squeeze(shift, axis=axis))


# -- batch normalization --------------------------------------------------------


class BatchNorm1d:
    """Per-feature batch normalization with learned scale/shift and running stats."""

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float64):
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return batchnorm1d(x, self, train)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def batchnorm1d(x: Tensor, state: BatchNorm1d, train: bool) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"batchnorm1d expects [B, F], got {x.shape}")
    if x.shape[1] != state.gamma.size:
        raise DimensionError(
            f"feature extent {x.shape[1]} != batchnorm width {state.gamma.size}")
    if train:
        if x.shape[0] < 2:
            raise DegenerateBatchError("batchnorm train mode needs a batch of at least 2")
        mu = mean(x, axis=0)
        centered = x - mu
        var = mean(centered * centered, axis=0)
        xhat = centered / sqrt(var + state.eps)
        b = x.shape[0]
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.data
        unbiased = var.data * b / (b - 1)
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        xhat = (x - Tensor(state.running_mean)) / Tensor(
            np.sqrt(state.running_var + state.eps))
    return xhat * state.gamma + state.beta


# -- backward pass ---------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor requiring grad.

    Repeated calls without zeroing keep accumulating; the graph is left intact.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    local: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = local.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            node._backward(g, local)
        if node.grad is None:
            node.grad = np.array(g, copy=True)
        else:
            node.grad = node.grad + g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- finite-difference verification ----------------------------------------------


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    Inputs are perturbed in place and restored; f is re-evaluated per coordinate.
    """
    if eps <= 0:
        raise ContractError("grad_check needs eps > 0")
    inputs = list(inputs)
    zero_grads(inputs)
    out = f(*inputs)
    if out.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    backward(out)
    analytic = [
        np.zeros_like(t.data) if t.grad is None else np.array(t.grad, copy=True)
        for t in inputs
    ]

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(*inputs).data)
            flat[i] = orig - eps
            down = float(f(*inputs).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst
