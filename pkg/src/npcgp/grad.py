"""Reverse-mode differentiation on a tape of array-valued nodes, plus Adam.

Every node holds a numpy value (0-d for scalars) and a list of
``(parent, vjp)`` pairs, where ``vjp`` maps the gradient flowing into the
node to the contribution for that parent.  Complex intermediates follow the
usual convention for real-valued losses: the stored gradient of a complex
node ``z = x + iy`` is ``dL/dx + i dL/dy``, so a holomorphic map ``w = f(z)``
propagates ``g_z = g_w * conj(f'(z))``.  Gradients reaching a real node keep
only their real part.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import NumericError, ParameterError, StructuralError

__all__ = [
    "Node",
    "const",
    "param",
    "backward",
    "grad",
    "AdamState",
    "adam_step",
    "Adam",
    "finite_diff_check",
]


class Node:
    __slots__ = ("value", "parents", "requires_grad", "name", "grad", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, value, parents=(), requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.parents = list(parents)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape}, dtype={self.value.dtype})"

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

    @property
    def real(self):
        return real(self)

    @property
    def imag(self):
        return imag(self)

    def item(self):
        return self.value.item()

    def __float__(self):
        return float(self.value)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def const(value, name=None) -> Node:
    return Node(value, name=name)


def param(value, name=None) -> Node:
    return Node(np.array(value, dtype=float), requires_grad=True, name=name)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _value(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def _make(value, parents) -> Node:
    live = [(p, f) for p, f in parents if p.requires_grad]
    if not live:
        return Node(value)
    return Node(value, live, requires_grad=True)


def _unbroadcast(g, shape, dtype):
    g = np.asarray(g)
    if g.shape != tuple(shape):
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        g = np.broadcast_to(g, shape)
    if not np.iscomplexobj(np.empty(0, dtype=dtype)) and np.iscomplexobj(g):
        g = g.real
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return _make(
        a.value + b.value,
        [
            (a, lambda g: _unbroadcast(g, a.shape, a.dtype)),
            (b, lambda g: _unbroadcast(g, b.shape, b.dtype)),
        ],
    )


def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return _make(
        a.value - b.value,
        [
            (a, lambda g: _unbroadcast(g, a.shape, a.dtype)),
            (b, lambda g: _unbroadcast(-g, b.shape, b.dtype)),
        ],
    )


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return _make(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(g * np.conj(b.value), a.shape, a.dtype)),
            (b, lambda g: _unbroadcast(g * np.conj(a.value), b.shape, b.dtype)),
        ],
    )


def div(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    out = a.value / b.value
    return _make(
        out,
        [
            (a, lambda g: _unbroadcast(g / np.conj(b.value), a.shape, a.dtype)),
            (b, lambda g: _unbroadcast(-g * np.conj(out / b.value), b.shape, b.dtype)),
        ],
    )


def neg(a) -> Node:
    a = _lift(a)
    return _make(-a.value, [(a, lambda g: -g)])


def power(a, k) -> Node:
    if isinstance(k, Node):
        raise StructuralError("power only supports constant exponents")
    a = _lift(a)
    out = a.value**k
    return _make(out, [(a, lambda g: g * np.conj(k * a.value ** (k - 1)))])


def square(a) -> Node:
    a = _lift(a)
    return _make(a.value * a.value, [(a, lambda g: g * np.conj(2.0 * a.value))])


def exp(a) -> Node:
    a = _lift(a)
    out = np.exp(a.value)
    return _make(out, [(a, lambda g: g * np.conj(out))])


def log(a) -> Node:
    a = _lift(a)
    return _make(np.log(a.value), [(a, lambda g: g / np.conj(a.value))])


def sqrt(a) -> Node:
    a = _lift(a)
    out = np.sqrt(a.value)
    return _make(out, [(a, lambda g: g / np.conj(2.0 * out))])


def sin(a) -> Node:
    a = _lift(a)
    return _make(np.sin(a.value), [(a, lambda g: g * np.conj(np.cos(a.value)))])


def cos(a) -> Node:
    a = _lift(a)
    return _make(np.cos(a.value), [(a, lambda g: -g * np.conj(np.sin(a.value)))])


def softplus(a) -> Node:
    a = _lift(a)
    out = np.logaddexp(0.0, a.value)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, [(a, lambda g: g * sig)])


def real(a) -> Node:
    a = _lift(a)
    return _make(np.real(a.value), [(a, lambda g: np.real(g))])


def imag(a) -> Node:
    a = _lift(a)
    return _make(np.imag(a.value), [(a, lambda g: 1j * np.real(g))])


def conj(a) -> Node:
    a = _lift(a)
    return _make(np.conj(a.value), [(a, lambda g: np.conj(g))])


def expi(a) -> Node:
    """``exp(i a)`` for real ``a``."""
    a = _lift(a)
    # cos/sin into a complex buffer is cheaper than a complex exp
    out = np.empty(np.shape(a.value), dtype=complex)
    np.cos(a.value, out=out.real)
    np.sin(a.value, out=out.imag)
    return _make(out, [(a, lambda g: np.real(g * np.conj(1j * out)))])


# ---------------------------------------------------------------- reductions / shape


def sum_(a, axis=None, keepdims=False) -> Node:
    a = _lift(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape)

    return _make(out, [(a, vjp)])


def mean(a, axis=None) -> Node:
    a = _lift(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis=axis) / float(n)


def reshape(a, shape) -> Node:
    a = _lift(a)
    return _make(a.value.reshape(shape), [(a, lambda g: np.reshape(g, a.shape))])


def transpose(a, axes=None) -> Node:
    a = _lift(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.value, axes), [(a, lambda g: np.transpose(g, inv))])


def expand_dims(a, axis) -> Node:
    a = _lift(a)
    return _make(np.expand_dims(a.value, axis), [(a, lambda g: np.reshape(g, a.shape))])


def getitem(a, idx) -> Node:
    a = _lift(a)

    def vjp(g):
        out = np.zeros(a.shape, dtype=np.result_type(g, a.dtype))
        np.add.at(out, idx, g)
        return out

    return _make(a.value[idx], [(a, vjp)])


def stack(nodes, axis=0) -> Node:
    nodes = [_lift(n) for n in nodes]
    out = np.stack([n.value for n in nodes], axis=axis)
    parents = []
    for i, n in enumerate(nodes):
        parents.append((n, lambda g, i=i, n=n: _unbroadcast(np.take(g, i, axis=axis), n.shape, n.dtype)))
    return _make(out, parents)


def concatenate(nodes, axis=0) -> Node:
    nodes = [_lift(n) for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])
    parents = []
    for i, n in enumerate(nodes):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        parents.append((n, lambda g, sl=tuple(sl), n=n: _unbroadcast(g[sl], n.shape, n.dtype)))
    return _make(out, parents)


def tril(a, k=0) -> Node:
    a = _lift(a)
    return _make(np.tril(a.value, k), [(a, lambda g: np.tril(g, k))])


def diag_part(a) -> Node:
    a = _lift(a)

    def vjp(g):
        out = np.zeros(a.shape, dtype=np.result_type(g, a.dtype))
        np.fill_diagonal(out, g)
        return out

    return _make(np.diagonal(a.value).copy(), [(a, vjp)])


def diag_matrix(v) -> Node:
    v = _lift(v)
    return _make(np.diag(v.value), [(v, lambda g: np.diagonal(g).copy())])


# ---------------------------------------------------------------- contractions


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise StructuralError("matmul supports 1-D and 2-D operands only; use einsum")
    out = a.value @ b.value

    def va(g):
        if b.ndim == 1:
            r = np.multiply.outer(g, np.conj(b.value)) if a.ndim == 2 else g * np.conj(b.value)
        else:
            r = g @ np.conj(b.value).T
        return _unbroadcast(r, a.shape, a.dtype)

    def vb(g):
        if a.ndim == 1:
            r = np.multiply.outer(np.conj(a.value), g) if b.ndim == 2 else np.conj(a.value) * g
        else:
            r = np.conj(a.value).T @ g
        return _unbroadcast(r, b.shape, b.dtype)

    return _make(out, [(a, va), (b, vb)])


def einsum(subscripts, *operands) -> Node:
    """Differentiable ``np.einsum`` (explicit ``->`` form, no repeated indices
    within a single operand)."""
    nodes = [_lift(o) for o in operands]
    ins, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = ins.split(",")
    if len(in_subs) != len(nodes):
        raise StructuralError(f"einsum expects {len(in_subs)} operands, got {len(nodes)}")
    for s in in_subs:
        if len(set(s)) != len(s):
            raise StructuralError(f"repeated index in einsum operand {s!r}")
    vals = [n.value for n in nodes]
    out = np.einsum(subscripts, *vals, optimize=len(nodes) > 2)
    sizes = {}
    for s, v in zip(in_subs, vals):
        sizes.update(zip(s, v.shape))

    parents = []
    for k, node in enumerate(nodes):

        def vjp(g, k=k, node=node):
            target = in_subs[k]
            others = [i for i in range(len(nodes)) if i != k]
            avail = set(out_sub).union(*(in_subs[i] for i in others))
            kept = "".join(c for c in target if c in avail)
            spec = ",".join([out_sub] + [in_subs[i] for i in others]) + "->" + kept
            r = np.einsum(spec, g, *[np.conj(vals[i]) for i in others], optimize=len(others) > 1)
            if kept != target:
                shape = [sizes[c] if c in kept else 1 for c in target]
                perm = [kept.index(c) for c in target if c in kept]
                r = np.transpose(r, perm).reshape(shape)
                r = np.broadcast_to(r, node.shape)
            return _unbroadcast(r, node.shape, node.dtype)

        parents.append((node, vjp))
    return _make(out, parents)


# ---------------------------------------------------------------- linear algebra


def cholesky(a) -> Node:
    """Lower Cholesky factor with the analytic (Murray-style) adjoint."""
    a = _lift(a)
    try:
        L = np.linalg.cholesky(a.value)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cholesky factorisation failed: {exc}") from exc

    def vjp(g):
        phi = np.tril(L.T @ g)
        phi[np.diag_indices_from(phi)] *= 0.5
        tmp = sla.solve_triangular(L, phi.T, lower=True, trans="T")
        abar = sla.solve_triangular(L, tmp.T, lower=True, trans="T")
        return 0.5 * (abar + abar.T)

    return _make(L, [(a, vjp)])


def solve_triangular(L, b, lower=True, trans=False) -> Node:
    """Solve ``L x = b`` (or ``L^T x = b`` when ``trans``) for lower ``L``."""
    if not lower:
        raise StructuralError("only lower-triangular factors are supported")
    L, b = _lift(L), _lift(b)
    t = "T" if trans else "N"
    x = sla.solve_triangular(L.value, b.value, lower=True, trans=t)

    def vb(g):
        return sla.solve_triangular(L.value, g, lower=True, trans="N" if trans else "T")

    def vL(g):
        bbar = vb(g)
        xm = x if x.ndim == 2 else x[:, None]
        bm = bbar if bbar.ndim == 2 else bbar[:, None]
        if trans:
            return -np.tril(xm @ bm.T)
        return -np.tril(bm @ xm.T)

    return _make(x, [(L, vL), (b, vb)])


def cho_solve(L, b) -> Node:
    """``(L L^T)^{-1} b``."""
    return solve_triangular(L, solve_triangular(L, b), trans=True)


def logdet_chol(L) -> Node:
    """``log det(L L^T)`` from a lower factor with positive diagonal."""
    return 2.0 * sum_(log(diag_part(L)))


# ---------------------------------------------------------------- backward


def _toposort(root):
    order = []
    state = {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise StructuralError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for parent, _ in node.parents:
            ps = state.get(id(parent))
            if ps == 1:
                raise StructuralError("cycle detected in computation graph")
            if ps is None:
                stack.append((parent, False))
    return order


def backward(root: Node, params=None, check_finite=True) -> dict:
    """Accumulate d(root)/d(node) into every reachable ``requires_grad`` leaf.

    Returns a map from leaf node to gradient array and also stores it in
    ``leaf.grad`` (overwriting any earlier pass).  Leaves listed in
    ``params`` that the root does not depend on get zero gradients.
    """
    if not isinstance(root, Node):
        raise StructuralError("backward expects a Node")
    if root.value.size != 1:
        raise StructuralError(f"backward root must be scalar, got shape {root.shape}")
    if not np.isrealobj(root.value):
        raise StructuralError("backward root must be real-valued")
    order = _toposort(root)
    if check_finite:
        for node in order:
            if node.value.dtype.kind in "fc" and not np.all(np.isfinite(node.value)):
                raise NumericError(f"non-finite value in graph at {node!r}")
    grads = {id(root): np.ones_like(root.value, dtype=float)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if node.requires_grad:
                node.grad = g
                leaves[id(node)] = node
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            if not np.iscomplexobj(parent.value) and np.iscomplexobj(contrib):
                contrib = contrib.real
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    out = {}
    for node in leaves.values():
        out[node] = np.asarray(node.grad).reshape(node.shape)
    if params is not None:
        for p in params:
            if p not in out:
                out[p] = np.zeros(p.shape)
    return out


def grad(f, params):
    """Evaluate ``f()`` and return ``(value, [gradients aligned with params])``."""
    for p in params:
        p.grad = None
    root = f()
    g = backward(root, params)
    return float(root.value), [g[p] for p in params]


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        shapes = [np.shape(p) for p in params]
        return cls(
            [np.zeros(s) for s in shapes],
            [np.zeros(s) for s in shapes],
            0,
            lr,
            beta1,
            beta2,
            eps,
        )


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    Gradients are for a quantity being *minimised*.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise StructuralError("params, grads and optimizer state differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=float)
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        new.append(np.asarray(p, dtype=float) - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return new, state


class Adam:
    """Stateful wrapper updating leaf ``Node`` values in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.init([p.value for p in self.params], lr, beta1, beta2, eps)

    def step(self, grads):
        new, self.state = adam_step([p.value for p in self.params], grads, self.state)
        for p, v in zip(self.params, new):
            p.value = v.reshape(p.shape)


# ---------------------------------------------------------------- verification


def finite_diff_check(f, x, h=1e-5, floor=1e-12, return_details=False):
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a parameter ``Node`` (1-D) to a scalar ``Node``.
    """
    if h <= 0:
        raise ParameterError("finite-difference step must be positive")
    x = np.array(x, dtype=float).ravel()
    p = param(x)
    out = f(p)
    ad = backward(_lift(out), [p])[p].ravel()
    fd = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(_value(f(const(xp))))
        fm = float(_value(f(const(xm))))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"function non-finite at perturbation of coordinate {i}")
        fd[i] = (fp - fm) / (2.0 * h)
    err = np.abs(ad - fd) / (np.abs(fd) + floor)
    worst = float(err.max()) if err.size else 0.0
    if return_details:
        return worst, ad, fd
    return worst
