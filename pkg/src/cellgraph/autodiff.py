"""Minimal reverse-mode autodiff over dense numpy arrays plus fixed sparse operands.

The kernel set is exactly what the models need: matmul, sparse-dense product,
elementwise add/mul/div, ReLU, sigmoid, log, L2 row normalization, reductions,
concatenation and transpose. Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatch


class Tensor:
    """Node of the recorded expression graph."""

    __slots__ = ("data", "grad", "parents", "_backward")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Reverse-mode sweep from this scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t.parents:
                visit(p)
            order.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def back(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    out._backward = back
    return out


def spmm(s: sp.spmatrix, b: Tensor) -> Tensor:
    """Fixed sparse matrix times dense tensor; gradient flows only into b."""
    out = Tensor(s @ b.data, (b,))
    st = s.T.tocsr()
    out._backward = lambda g: b._accumulate(st @ g)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def back(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def back(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = back
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data, (a, b))

    def back(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / b.data**2, b.data.shape))

    out._backward = back
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, (a,))
    out._backward = lambda g: a._accumulate(g * c)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,))
    out._backward = lambda g: a._accumulate(g * (a.data > 0))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * y * (1.0 - y))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), (a,))
    out._backward = lambda g: a._accumulate(g / a.data)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with straight gradient pass-through inside the interval, zero outside."""
    out = Tensor(np.clip(a.data, lo, hi), (a,))
    inside = (a.data > lo) & (a.data < hi)
    out._backward = lambda g: a._accumulate(g * inside)
    return out


def row_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """L2-normalize each row, guarding zero-norm rows with eps."""
    norms = np.maximum(np.linalg.norm(a.data, axis=1, keepdims=True), eps)
    y = a.data / norms
    out = Tensor(y, (a,))

    def back(g):
        # d(x/||x||)/dx applied rowwise: (g - y (y.g)) / ||x||
        dot = (g * y).sum(axis=1, keepdims=True)
        a._accumulate((g - y * dot) / norms)

    out._backward = back
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def back(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    out._backward = back
    return out


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    out._backward = back
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, (a,))
    out._backward = lambda g: a._accumulate(g.T)
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    out = Tensor(a.data[idx], (a,))

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    out._backward = back
    return out


@dataclass
class AdamState:
    """Adam optimizer state for a named parameter set."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Standard Adam update with bias correction, in place on params."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: param {p.shape} vs grad {g.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1 - state.beta1) * (g - m)
        v += (1 - state.beta2) * (g * g - v)
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_param: str


def gradcheck(
    fn,
    params: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int = 10000,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar fn(params) against central differences.

    fn receives a dict of leaf Tensors and returns a scalar Tensor. Entries beyond
    max_entries per parameter are randomly subsampled.
    """
    leaves = {k: Tensor(v.copy()) for k, v in params.items()}
    out = fn(leaves)
    out.backward()
    analytic = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()
    }
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_param = ""
    for name, base in params.items():
        flat = base.ravel()
        n = flat.size
        idxs = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        ana = analytic[name].ravel()
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn({k: Tensor(v) for k, v in params.items()}).data)
            flat[i] = orig - h
            fm = float(fn({k: Tensor(v) for k, v in params.items()}).data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            denom = max(abs(num), abs(ana[i]), 1e-8)
            rel = abs(num - ana[i]) / denom
            if rel > worst:
                worst = rel
                worst_param = f"{name}[{i}]"
    return GradCheckReport(passed=worst <= tolerance, max_rel_error=worst, worst_param=worst_param)


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    """Serialize parameters as a {"name": {"shape": [...], "data": [...]}} JSON map."""
    import json

    doc = {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in params.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    import json

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc.items()}
