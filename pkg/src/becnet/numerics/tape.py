"""Small reverse-mode autodiff over numpy arrays.

A :class:`Tape` records primitive applications in execution order. Since a
node can only be recorded after its inputs exist, creation order is already a
topological order and :meth:`Tape.backward` simply walks it in reverse,
visiting every record exactly once.

Primitives are plain functions ``fn(*arrays, **kw) -> (out, vjp)`` registered
with :func:`primitive`. Calling a registered primitive on ordinary arrays
computes the value without recording anything, which is how inference code
reuses the training forward pass.
"""

from __future__ import annotations

import functools
from typing import Callable

import numpy as np

PRIMITIVES: dict[str, Callable] = {}


class UnregisteredPrimitiveError(KeyError):
    pass


class Var:
    __slots__ = ("value", "grad", "tape")

    def __init__(self, value: np.ndarray, tape: "Tape"):
        self.value = value
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    def __init__(self):
        self._records: list[tuple[str, Var, tuple, Callable]] = []

    def __len__(self):
        return len(self._records)

    def leaf(self, value) -> Var:
        return Var(np.asarray(value), self)

    def record(self, name: str, out, inputs: tuple, vjp: Callable) -> Var:
        if name not in PRIMITIVES:
            raise UnregisteredPrimitiveError(f"primitive {name!r} is not registered")
        node = Var(out, self)
        self._records.append((name, node, inputs, vjp))
        return node

    def backward(self, out: Var, seed=None) -> None:
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=out.value.dtype)
        for _name, node, inputs, vjp in reversed(self._records):
            g = node.grad
            if g is None:
                continue
            grads = vjp(g)
            for inp, gi in zip(inputs, grads):
                if gi is None or not isinstance(inp, Var):
                    continue
                if inp.grad is None:
                    inp.grad = gi
                else:
                    inp.grad = inp.grad + gi
            if node is not out:
                node.grad = None


def _value(x):
    return x.value if isinstance(x, Var) else x


def apply(name: str, *args, **kw):
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise UnregisteredPrimitiveError(f"primitive {name!r} is not registered") from None
    tape = None
    for a in args:
        if isinstance(a, Var):
            tape = a.tape
            break
    out, vjp = fn(*(_value(a) for a in args), **kw)
    if tape is None:
        return out
    return tape.record(name, out, args, vjp)


def primitive(name: str):
    def deco(fn):
        PRIMITIVES[name] = fn

        @functools.wraps(fn)
        def wrapper(*args, **kw):
            return apply(name, *args, **kw)

        return wrapper

    return deco


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _shape(x):
    return np.shape(x)


@primitive("add")
def add(a, b):
    sa, sb = _shape(a), _shape(b)
    return a + b, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


@primitive("sub")
def sub(a, b):
    sa, sb = _shape(a), _shape(b)
    return a - b, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))


@primitive("mul")
def mul(a, b):
    sa, sb = _shape(a), _shape(b)
    return a * b, lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb))


@primitive("scale")
def scale(a, c: float):
    return a * c, lambda g: (g * c,)


@primitive("apply_mask")
def apply_mask(x, mask):
    """Multiply by a constant 0/1 mask; the mask itself gets no gradient."""
    return x * mask, lambda g: (g * mask, None)


@primitive("sum")
def sum_all(a):
    shape = a.shape
    return np.sum(a), lambda g: (np.broadcast_to(g, shape).copy(),)


@primitive("matmul")
def matmul(a, b):
    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes into one GEMM
        flat = a.reshape(-1, a.shape[-1])

        def vjp2(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.T).reshape(a.shape), flat.T @ g2

        return (flat @ b).reshape(*a.shape[:-1], b.shape[-1]), vjp2

    def vjp(g):
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return a @ b, vjp


@primitive("relu")
def relu(a):
    pos = a > 0
    return np.where(pos, a, 0).astype(a.dtype, copy=False), lambda g: (g * pos,)


@primitive("reshape")
def reshape(a, shape):
    old = a.shape
    return a.reshape(shape), lambda g: (g.reshape(old),)


@primitive("transpose")
def transpose(a, axes):
    inv = np.argsort(axes)
    return np.transpose(a, axes), lambda g: (np.transpose(g, inv),)


@primitive("softmax")
def softmax(a, bias=None):
    """Softmax over the last axis of ``a + bias``; ``bias`` is a constant additive mask."""
    z = a if bias is None else a + bias
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)), None)

    return y, vjp


@primitive("layer_norm")
def layer_norm(x, gain, bias, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def vjp(g):
        gx_hat = g * gain
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return xhat * gain + bias, vjp


@primitive("embedding")
def embedding(table, ids):
    def vjp(g):
        gt = np.zeros_like(table)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return gt, None

    return table[ids], vjp


@primitive("l2_normalize_rows")
def l2_normalize_rows(x):
    """Scale each last-axis row to unit L2 norm; all-zero rows stay zero."""
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    nz = n > 0
    safe = np.where(nz, n, 1).astype(x.dtype, copy=False)
    y = np.where(nz, x / safe, 0).astype(x.dtype, copy=False)

    def vjp(g):
        gy = (g - y * (g * y).sum(axis=-1, keepdims=True)) / safe
        return (np.where(nz, gy, 0).astype(x.dtype, copy=False),)

    return y, vjp


@primitive("cross_entropy")
def cross_entropy(logits, targets, ignore_index: int = -1):
    """Mean token cross-entropy over positions whose target is not ``ignore_index``."""
    flat = logits.reshape(-1, logits.shape[-1])
    t = np.asarray(targets).reshape(-1)
    keep = t != ignore_index
    count = max(int(keep.sum()), 1)
    z = flat - flat.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    tt = np.where(keep, t, 0)
    picked = logp[np.arange(t.size), tt]
    loss = -(picked * keep).sum() / count

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(t.size), tt] -= 1.0
        p *= (keep / count)[:, None].astype(p.dtype)
        return ((g * p).reshape(logits.shape).astype(logits.dtype, copy=False), None)

    return np.asarray(loss, dtype=logits.dtype), vjp


def grad(f: Callable, params):
    """Gradient of the scalar ``f(params)`` with respect to ``params``.

    ``params`` is an array or a dict of arrays; the result mirrors it.
    """
    tape = Tape()
    if isinstance(params, dict):
        leaves = {k: tape.leaf(np.asarray(v)) for k, v in params.items()}
        out = f(leaves)
        tape.backward(out)
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
    leaf = tape.leaf(np.asarray(params))
    out = f(leaf)
    tape.backward(out)
    return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)


def finite_difference(f: Callable, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one float64 array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x))
        flat[i] = orig - step
        lo = float(f(x))
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * step)
    return g
