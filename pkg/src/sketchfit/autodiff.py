"""Minimal reverse-mode automatic differentiation over numpy arrays.

Plain ndarrays pass through every function untouched (zero overhead); wrapping
an array in :class:`Var` starts a tape, and :func:`value_and_grad` drives the
backward sweep.  Only the primitives this package actually uses are defined.
Custom fused kernels register themselves through :func:`custom`.
"""

from __future__ import annotations

import itertools

import numpy as np

_IDS = itertools.count()
_TINY = 1e-30


class Var:
    """A traced array: value plus links to the nodes it was computed from."""

    __slots__ = ("value", "parents", "vjps", "id")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value)
        self.parents = parents
        self.vjps = vjps
        self.id = next(_IDS)

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # comparisons detach (used to build where/selection masks)
    def __gt__(self, other):
        return self.value > value_of(other)

    def __ge__(self, other):
        return self.value >= value_of(other)

    def __lt__(self, other):
        return self.value < value_of(other)

    def __le__(self, other):
        return self.value <= value_of(other)

    # convenience methods mirroring ndarray
    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and not np.isscalar(shape[0]) else shape)

    def ravel(self):
        return reshape(self, (-1,))

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def value_of(x):
    """Underlying ndarray (or scalar) of ``x``, tracing or not."""
    return x.value if isinstance(x, Var) else x


def is_var(x):
    return isinstance(x, Var)


def detach(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def custom(value, inputs, vjps):
    """Register a custom primitive result.

    ``inputs`` and ``vjps`` are parallel sequences; vjps[i] maps the output
    cotangent to the cotangent of inputs[i].  Non-Var inputs are skipped.
    """
    parents, kept = [], []
    for x, vjp in zip(inputs, vjps):
        if isinstance(x, Var):
            parents.append(x)
            kept.append(vjp)
    if not parents:
        return value
    return Var(value, tuple(parents), tuple(kept))


# ---------------------------------------------------------------------------
# primitive builders
# ---------------------------------------------------------------------------

def _lift2(a, b, fwd, mk_vjp_a, mk_vjp_b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return fwd(a, b)
    av, bv = value_of(a), value_of(b)
    out = fwd(av, bv)
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a)
        vjps.append(mk_vjp_a(av, bv, out))
    if isinstance(b, Var):
        parents.append(b)
        vjps.append(mk_vjp_b(av, bv, out))
    return Var(out, tuple(parents), tuple(vjps))


def _lift1(x, fwd, mk_vjp):
    if not isinstance(x, Var):
        return fwd(x)
    out = fwd(x.value)
    return Var(out, (x,), (mk_vjp(x.value, out),))


# -- arithmetic -------------------------------------------------------------

def add(a, b):
    return _lift2(
        a, b, lambda x, y: x + y,
        lambda x, y, o: lambda g: _unbroadcast(g, np.shape(x)),
        lambda x, y, o: lambda g: _unbroadcast(g, np.shape(y)))


def subtract(a, b):
    return _lift2(
        a, b, lambda x, y: x - y,
        lambda x, y, o: lambda g: _unbroadcast(g, np.shape(x)),
        lambda x, y, o: lambda g: _unbroadcast(-g, np.shape(y)))


def multiply(a, b):
    return _lift2(
        a, b, lambda x, y: x * y,
        lambda x, y, o: lambda g: _unbroadcast(g * y, np.shape(x)),
        lambda x, y, o: lambda g: _unbroadcast(g * x, np.shape(y)))


def divide(a, b):
    return _lift2(
        a, b, lambda x, y: x / y,
        lambda x, y, o: lambda g: _unbroadcast(g / y, np.shape(x)),
        lambda x, y, o: lambda g: _unbroadcast(-g * x / (y * y), np.shape(y)))


def negative(x):
    return _lift1(x, lambda v: -v, lambda v, o: lambda g: -g)


def power(x, p):
    if isinstance(p, Var):
        raise TypeError("power exponent must be a constant")
    return _lift1(x, lambda v: v ** p,
                  lambda v, o: lambda g: g * p * v ** (p - 1))


def matmul(a, b):
    def mk_a(x, y, o):
        def vjp(g):
            if np.ndim(x) == 1 and np.ndim(y) == 2:   # (k,) @ (k,m)
                return np.asarray(y) @ np.asarray(g)
            if np.ndim(y) == 1:                        # (n,k) @ (k,)
                return np.outer(g, y)
            return np.asarray(g) @ np.asarray(y).T
        return vjp

    def mk_b(x, y, o):
        def vjp(g):
            if np.ndim(y) == 1 and np.ndim(x) == 2:   # (n,k) @ (k,)
                return np.asarray(x).T @ np.asarray(g)
            if np.ndim(x) == 1:                        # (k,) @ (k,m)
                return np.outer(x, g)
            return np.asarray(x).T @ np.asarray(g)
        return vjp

    return _lift2(a, b, lambda x, y: x @ y, mk_a, mk_b)


# -- elementwise transcendental ---------------------------------------------

def exp(x):
    return _lift1(x, np.exp, lambda v, o: lambda g: g * o)


def log(x):
    return _lift1(x, np.log, lambda v, o: lambda g: g / v)


def tanh(x):
    return _lift1(x, np.tanh, lambda v, o: lambda g: g * (1.0 - o * o))


def sin(x):
    return _lift1(x, np.sin, lambda v, o: lambda g: g * np.cos(v))


def cos(x):
    return _lift1(x, np.cos, lambda v, o: lambda g: -g * np.sin(v))


def sqrt(x):
    return _lift1(x, np.sqrt, lambda v, o: lambda g: g * 0.5 / o)


def safe_sqrt(x):
    """sqrt with exact value at 0 and a bounded subgradient there."""
    return _lift1(
        x, lambda v: np.sqrt(np.maximum(v, 0.0)),
        lambda v, o: lambda g: g * 0.5 / np.maximum(o, _TINY))


def absolute(x):
    return _lift1(x, np.abs, lambda v, o: lambda g: g * np.sign(v))


def sigmoid(x):
    def fwd(v):
        out = np.empty_like(np.asarray(v, dtype=float))
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    if not isinstance(x, Var) and np.ndim(x) == 0:
        v = float(x)
        return 1.0 / (1.0 + np.exp(-v)) if v >= 0 else np.exp(v) / (1.0 + np.exp(v))
    return _lift1(x, fwd, lambda v, o: lambda g: g * o * (1.0 - o))


# -- selection / clamping ----------------------------------------------------

def maximum(a, b):
    return _lift2(
        a, b, np.maximum,
        lambda x, y, o: lambda g: _unbroadcast(g * (x >= y), np.shape(x)),
        lambda x, y, o: lambda g: _unbroadcast(g * (np.asarray(y) > x), np.shape(y)))


def minimum(a, b):
    return _lift2(
        a, b, np.minimum,
        lambda x, y, o: lambda g: _unbroadcast(g * (x <= y), np.shape(x)),
        lambda x, y, o: lambda g: _unbroadcast(g * (np.asarray(y) < x), np.shape(y)))


def clip(x, lo, hi):
    return _lift1(
        x, lambda v: np.clip(v, lo, hi),
        lambda v, o: lambda g: g * ((v > lo) & (v < hi)))


def where(cond, a, b):
    cond = np.asarray(value_of(cond))
    return _lift2(
        a, b, lambda x, y: np.where(cond, x, y),
        lambda x, y, o: lambda g: _unbroadcast(g * cond, np.shape(x)),
        lambda x, y, o: lambda g: _unbroadcast(g * ~cond, np.shape(y)))


# -- reductions --------------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    def mk(v, o):
        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, v.shape).copy()
            gg = np.asarray(g)
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            return np.broadcast_to(gg, v.shape).copy()
        return vjp
    return _lift1(x, lambda v: np.sum(v, axis=axis, keepdims=keepdims), mk)


def mean(x, axis=None, keepdims=False):
    def mk(v, o):
        n = v.size if axis is None else v.shape[axis]
        def vjp(g):
            if axis is None:
                return np.broadcast_to(np.asarray(g) / n, v.shape).copy()
            gg = np.asarray(g) / n
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            return np.broadcast_to(gg, v.shape).copy()
        return vjp
    return _lift1(x, lambda v: np.mean(v, axis=axis, keepdims=keepdims), mk)


def l2norm(x):
    """Frobenius norm with a safe subgradient at the origin."""
    def mk(v, o):
        def vjp(g):
            return g * v / max(float(o), _TINY)
        return vjp
    return _lift1(x, lambda v: np.sqrt(np.sum(v * v)), mk)


def logsumexp(x, axis=None):
    """Numerically stable log-sum-exp (max detached; gradient is softmax)."""
    m = np.max(value_of(x), axis=axis, keepdims=True)
    shifted = subtract(x, m)
    s = sum(exp(shifted), axis=axis)
    out = add(log(s), np.squeeze(m, axis=axis) if axis is not None else np.squeeze(m))
    return out


# -- shape manipulation -------------------------------------------------------

def reshape(x, shape):
    return _lift1(x, lambda v: np.reshape(v, shape),
                  lambda v, o: lambda g: np.reshape(g, v.shape))


def transpose(x, axes=None):
    def mk(v, o):
        inv = None if axes is None else np.argsort(axes)
        return lambda g: np.transpose(g, inv)
    return _lift1(x, lambda v: np.transpose(v, axes), mk)


def moveaxis(x, src, dst):
    return _lift1(x, lambda v: np.moveaxis(v, src, dst),
                  lambda v, o: lambda g: np.moveaxis(g, dst, src))


def getitem(x, idx):
    def mk(v, o):
        fancy = isinstance(idx, (np.ndarray, list)) or (
            isinstance(idx, tuple) and any(isinstance(i, (np.ndarray, list)) for i in idx))
        def vjp(g):
            out = np.zeros(v.shape, dtype=np.result_type(v.dtype, np.asarray(g).dtype))
            if fancy:
                np.add.at(out, idx, g)
            else:
                out[idx] += g
            return out
        return vjp
    return _lift1(x, lambda v: v[idx], mk)


def concatenate(parts, axis=0):
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate(parts, axis=axis)
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    parents, vjps = [], []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            parents.append(p)
            vjps.append(lambda g, sl=tuple(sl): np.asarray(g)[sl])
    return Var(out, tuple(parents), tuple(vjps))


def stack(parts, axis=0):
    if not any(isinstance(p, Var) for p in parts):
        return np.stack(parts, axis=axis)
    vals = [np.asarray(value_of(p)) for p in parts]
    out = np.stack(vals, axis=axis)
    parents, vjps = [], []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            parents.append(p)
            vjps.append(lambda g, i=i: np.take(np.asarray(g), i, axis=axis))
    return Var(out, tuple(parents), tuple(vjps))


def pad_edge(x, width):
    """Edge-replicating pad of a 2-D array by ``width`` on every side."""
    def fwd(v):
        return np.pad(v, width, mode="edge")

    def mk(v, o):
        h, w = v.shape
        def vjp(g):
            g = np.asarray(g)
            core = g[width:width + h, width:width + w].copy()
            # fold replicated borders back onto the edge rows/cols
            core[0, :] += g[:width, width:width + w].sum(axis=0)
            core[-1, :] += g[width + h:, width:width + w].sum(axis=0)
            core[:, 0] += g[width:width + h, :width].sum(axis=1)
            core[:, -1] += g[width:width + h, width + w:].sum(axis=1)
            core[0, 0] += g[:width, :width].sum()
            core[0, -1] += g[:width, width + w:].sum()
            core[-1, 0] += g[width + h:, :width].sum()
            core[-1, -1] += g[width + h:, width + w:].sum()
            return core
        return vjp
    return _lift1(x, fwd, mk)


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def backward(out, seed=None):
    """Accumulate cotangents for every node reachable from ``out``.

    Returns a dict mapping node id to gradient array.  Traversal order is the
    reverse of creation order, which is a valid topological order because the
    graph is built functionally.
    """
    if not isinstance(out, Var):
        raise TypeError("backward() needs a traced Var output")
    # reachable set
    seen = {out.id: out}
    stack_ = [out]
    while stack_:
        node = stack_.pop()
        for p in node.parents:
            if p.id not in seen:
                seen[p.id] = p
                stack_.append(p)
    order = sorted(seen.values(), key=lambda n: n.id, reverse=True)
    grads = {out.id: np.ones_like(out.value) if seed is None else np.asarray(seed)}
    leaves_table = {}
    for node in order:
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if not node.parents:
            leaves_table[node.id] = g
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            pg = vjp(g)
            acc = grads.get(parent.id)
            grads[parent.id] = pg if acc is None else acc + pg
    return leaves_table


def value_and_grad(fn, params):
    """Evaluate ``fn`` on Var-wrapped ``params`` (a dict of arrays).

    ``fn`` may return a scalar Var or ``(scalar Var, aux)``.  Returns
    ``(value, grads_dict, aux)`` with grads matching the params' shapes.
    """
    leaves = {k: Var(np.asarray(v)) for k, v in params.items()}
    res = fn(leaves)
    aux = None
    if isinstance(res, tuple):
        out, aux = res
    else:
        out = res
    if not isinstance(out, Var):
        # objective did not touch any parameter
        zero = {k: np.zeros_like(np.asarray(v)) for k, v in params.items()}
        return float(out), zero, aux
    table = backward(out)
    grads = {}
    for k, leaf in leaves.items():
        g = table.get(leaf.id)
        grads[k] = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=leaf.value.dtype).reshape(leaf.value.shape)
    return float(out.value), grads, aux
