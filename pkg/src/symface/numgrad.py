"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
result records its parents and a backward closure, forming a tape (a DAG).
:meth:`Tensor.backward` walks the tape once in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

ACOS_EPS = 1e-7
ACOS_DOMAIN_TOL = 1e-6


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of the op."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, _parents=parents, op=op)
        out._backward = backward
        return out
    return Tensor(data, op=op)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a row-vector bias of shape (d,) against (n, d)."""
    a, b = _wrap(a), _wrap(b)
    if a.shape == b.shape or b.data.ndim == 0:
        bias = False
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        bias = True
    else:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        if bias:
            gb = g.sum(axis=0)
        elif b.data.ndim == 0 and a.data.ndim != 0:
            gb = np.asarray(g.sum())
        else:
            gb = g
        return g, gb

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape and b.data.ndim != 0:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        gb = -g if a.shape == b.shape else np.asarray(-g.sum())
        return g, gb

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product (same shape), or scaling by a 0-d tensor / python number."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape and b.data.ndim != 0:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g * bd
        gb = g * ad if a.shape == b.shape else np.asarray((g * ad).sum())
        return ga, gb

    return _result(ad * bd, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log of a non-positive value")
    return _result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def cos(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.cos(xd), (x,), lambda g: (-g * np.sin(xd),), "cos")


def acos(x: Tensor) -> Tensor:
    """Arc-cosine. The value is exact on [-1, 1]; the derivative is taken on the
    clipped band [-1 + eps, 1 - eps] and is zero outside it, which keeps it bounded."""
    xd = x.data
    if np.any(np.abs(xd) > 1.0 + ACOS_DOMAIN_TOL) or not np.all(np.isfinite(xd)):
        raise DomainError("acos input outside [-1, 1]")
    lo, hi = -1.0 + ACOS_EPS, 1.0 - ACOS_EPS
    xc = np.clip(xd, lo, hi)
    inside = (xd >= lo) & (xd <= hi)

    def backward(g):
        return (np.where(inside, -g / np.sqrt(1.0 - xc * xc), 0.0),)

    return _result(np.arccos(np.clip(xd, -1.0, 1.0)), (x,), backward, "acos")


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    xd = x.data
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (xd >= lo_) & (xd <= hi_)
    return _result(np.clip(xd, lo_, hi_), (x,), lambda g: (g * inside,), "clamp")


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b`` (same shapes)."""
    a, b = _wrap(a), _wrap(b)
    mask = np.asarray(mask, dtype=bool)
    if not (a.shape == b.shape == mask.shape):
        raise DimensionError(f"where: shapes {mask.shape}, {a.shape}, {b.shape} differ")
    return _result(
        np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask), "where"
    )


# ---------------------------------------------------------------- reductions / linear algebra


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(x.data.sum(axis=axis), (x,), backward, "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError("transpose needs a matrix")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def take_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), backward, "take_rows")


def l2_norm(x: Tensor) -> Tensor:
    """Row-wise Euclidean norm of an (n, d) matrix, shape (n,)."""
    if x.data.ndim != 2:
        raise DimensionError("l2_norm expects an (n, d) matrix")
    xd = x.data
    norms = np.sqrt((xd * xd).sum(axis=1))

    def backward(g):
        safe = np.where(norms > 0, norms, 1.0)
        return ((g / safe)[:, None] * xd,)

    return _result(norms, (x,), backward, "l2_norm")


def normalize_rows(x: Tensor, eps: float = 0.0) -> Tensor:
    """Scale each row of ``x`` to unit L2 norm."""
    if x.data.ndim != 2:
        raise DimensionError("normalize_rows expects an (n, d) matrix")
    xd = x.data
    norms = np.sqrt((xd * xd).sum(axis=1, keepdims=True))
    if np.any(norms <= eps):
        raise DomainError("normalize_rows: zero-norm row")
    y = xd / norms

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _result(y, (x,), backward, "normalize_rows")


def softmax_cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Cross-entropy of softmax(logits) against integer labels.

    ``reduction`` is ``"mean"``, ``"sum"`` or ``"none"`` (per-row terms).
    """
    z = logits.data
    if z.ndim != 2:
        raise DimensionError("logits must be (n, C)")
    labels = np.asarray(labels, dtype=np.intp)
    n = z.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match {n} rows")
    if n and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ValueError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    terms = lse - shifted[np.arange(n), labels]
    probs = np.exp(shifted - lse[:, None])
    onehot = np.zeros_like(z)
    onehot[np.arange(n), labels] = 1.0
    dz = probs - onehot

    if reduction == "none":
        return _result(terms, (logits,), lambda g: (g[:, None] * dz,), "softmax_ce")
    if reduction == "sum":
        return _result(terms.sum(), (logits,), lambda g: (g * dz,), "softmax_ce")
    if reduction == "mean":
        return _result(terms.mean(), (logits,), lambda g: (g * dz / n,), "softmax_ce")
    raise ValueError(f"unknown reduction {reduction!r}")


# ---------------------------------------------------------------- finite differences


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` with respect to ``x.data`` (in place)."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between autodiff and central differences over ``inputs``.

    The relative error per input is ``|a - n| / max(|a|, |n|)`` in L2 norm; an input
    whose analytic and numeric gradients are both ~0 contributes the absolute error.
    """
    for x in inputs:
        x.zero_grad()
    fn().backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        numeric = numerical_grad(fn, x, h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        diff = np.linalg.norm(analytic - numeric)
        worst = max(worst, diff / denom if denom > 1e-8 else diff)
    return worst
