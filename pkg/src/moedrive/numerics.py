"""Small reverse-mode autodiff over a fixed set of batched float64 ops.

Every op takes and returns :class:`Node` objects whose ``value`` is a numpy
array.  Rows are batch samples.  Leaves bound to a :class:`Param` accumulate
their gradient into ``Param.grad`` when :func:`backward` runs, so parameters
that never enter a graph keep a gradient of exactly zero.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
PROB_FLOOR = 1e-12

_grad_enabled = True


@contextmanager
def no_grad():
    """Skip graph bookkeeping for inference."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape


class ParamSet:
    """Named parameters with gradients, Adam moments and a seeded initializer."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self.params: dict[str, Param] = {}
        self.step = 0

    def add(self, name: str, value) -> Param:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Param(value)
        self.params[name] = p
        return p

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Param:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0.0

    def size(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def flat_values(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params.values()])


class Node:
    __slots__ = ("value", "parents", "backward_fn", "param")

    def __init__(self, value, parents: tuple = (), backward_fn: Callable | None = None,
                 param: Param | None = None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def const(x) -> Node:
    return Node(np.asarray(x, dtype=DTYPE))


def leaf(p: Param) -> Node:
    return Node(p.value, param=p)


def _node(value, parents, fn) -> Node:
    if not _grad_enabled:
        return Node(value)
    return Node(value, parents, fn)


def backward(root: Node, seed: np.ndarray | float = 1.0):
    """Accumulate d(root)/d(param) into every reachable ``Param.grad``."""
    order: list[Node] = []
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.broadcast_to(np.asarray(seed, dtype=DTYPE), root.value.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.param is not None:
            node.param.grad += g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- primitives

def linear(x: Node, W: Node, b: Node) -> Node:
    """y = x W^T + b for a batch of row vectors."""
    xv, Wv = x.value, W.value
    if xv.shape[-1] != Wv.shape[1]:
        raise ShapeError(f"linear: input width {xv.shape[-1]} != weight fan-in {Wv.shape[1]}")
    y = xv @ Wv.T + b.value

    x_needs_grad = bool(x.parents) or x.param is not None

    def fn(g):
        return (g @ Wv if x_needs_grad else None), g.T @ xv, g.sum(axis=0)

    return _node(y, (x, W, b), fn)


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub: {a.value.shape} vs {b.value.shape}")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul_col(a: Node, s: Node) -> Node:
    """Scale each row of ``a`` (B, d) by the matching entry of ``s`` (B,)."""
    av, sv = a.value, s.value
    if sv.shape != av.shape[:1]:
        raise ShapeError(f"mul_col: {av.shape} vs {sv.shape}")

    def fn(g):
        return g * sv[:, None], (g * av).sum(axis=1)

    return _node(av * sv[:, None], (a, s), fn)


def scale(a: Node, c: float) -> Node:
    return _node(a.value * c, (a,), lambda g: (g * c,))


def concat(parts: Sequence[Node]) -> Node:
    values = [p.value for p in parts]
    rows = {v.shape[0] for v in values}
    if len(rows) != 1:
        raise ShapeError(f"concat: row counts differ {rows}")
    widths = np.cumsum([0] + [v.shape[1] for v in values])

    def fn(g):
        return tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(values)))

    return _node(np.concatenate(values, axis=1), tuple(parts), fn)


def slice_cols(x: Node, start: int, stop: int) -> Node:
    xv = x.value
    if not 0 <= start < stop <= xv.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of width {xv.shape[1]}")

    def fn(g):
        out = np.zeros_like(xv)
        out[:, start:stop] = g
        return (out,)

    return _node(xv[:, start:stop], (x,), fn)


def take_rows(x: Node, idx) -> Node:
    idx = np.asarray(idx, dtype=np.intp)
    xv = x.value

    def fn(g):
        out = np.zeros_like(xv)
        np.add.at(out, idx, g)
        return (out,)

    return _node(xv[idx], (x,), fn)


def softmax_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    if z.size == 0 or z.shape[-1] == 0:
        raise ShapeError("softmax of empty input")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Node) -> Node:
    p = softmax_np(x.value)

    def fn(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _node(p, (x,), fn)


def nll(p: Node, target) -> Node:
    """-ln p[i, target_i] with the probability floored at ``PROB_FLOOR``."""
    pv = p.value
    target = np.asarray(target, dtype=np.intp)
    rows = np.arange(pv.shape[0])
    picked = pv[rows, target]
    clamped = picked < PROB_FLOOR
    y = -np.log(np.maximum(picked, PROB_FLOOR))

    def fn(g):
        out = np.zeros_like(pv)
        out[rows, target] = np.where(clamped, 0.0, -g / np.where(clamped, 1.0, picked))
        return (out,)

    return _node(y, (p,), fn)


def l1_rows(a: Node, b: Node) -> Node:
    """Per-row sum of absolute differences."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"l1_rows: {a.value.shape} vs {b.value.shape}")
    d = a.value - b.value
    s = np.sign(d)
    return _node(np.abs(d).sum(axis=1), (a, b), lambda g: (g[:, None] * s, -g[:, None] * s))


def l2_rows(a: Node, b: Node) -> Node:
    """Per-row Euclidean distance (not squared)."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"l2_rows: {a.value.shape} vs {b.value.shape}")
    d = a.value - b.value
    n = np.sqrt((d * d).sum(axis=1))
    safe = np.where(n > 0, n, 1.0)

    def fn(g):
        gd = np.where(n[:, None] > 0, d / safe[:, None], 0.0) * g[:, None]
        return gd, -gd

    return _node(n, (a, b), fn)


def sq_rows(a: Node, b: Node) -> Node:
    """Per-row squared Euclidean distance."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sq_rows: {a.value.shape} vs {b.value.shape}")
    d = a.value - b.value
    return _node((d * d).sum(axis=1), (a, b), lambda g: (2 * d * g[:, None], -2 * d * g[:, None]))


def total(x: Node) -> Node:
    xv = x.value
    return _node(np.asarray(xv.sum()), (x,), lambda g: (np.broadcast_to(g, xv.shape).copy(),))


def mean_cols(x: Node) -> Node:
    """Column means of a (B, d) node, giving shape (d,)."""
    xv = x.value
    n = xv.shape[0]
    return _node(xv.mean(axis=0), (x,), lambda g: (np.broadcast_to(g / n, xv.shape).copy(),))


def weighted_sum(terms: Iterable[tuple[float, Node]]) -> Node:
    terms = [(float(c), t) for c, t in terms]
    shape = terms[0][1].value.shape
    value = np.zeros(shape, dtype=DTYPE)
    for c, t in terms:
        value = value + c * t.value
    coefs = [c for c, _ in terms]
    return _node(value, tuple(t for _, t in terms), lambda g: tuple(c * g for c in coefs))


# ---------------------------------------------------------------- GRU

class GruParams:
    """Stacked gate weights, rows ordered (update, reset, candidate)."""

    def __init__(self, ps: ParamSet, prefix: str, input_size: int, hidden_size: int):
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.Wx = ps.uniform(f"{prefix}.Wx", (3 * H, input_size), input_size)
        self.Wh = ps.uniform(f"{prefix}.Wh", (3 * H, H), H)
        self.b = ps.uniform(f"{prefix}.b", (3 * H,), H)


def gru_cell(h: Node, x: Node, Wx: Node, Wh: Node, b: Node) -> Node:
    """One GRU step.

    z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
    n = tanh(Wn x + r * (Un h) + bn), h' = (1 - z) * n + z * h
    """
    hv, xv, Wxv, Whv, bv = h.value, x.value, Wx.value, Wh.value, b.value
    H = Whv.shape[1]
    if hv.shape[1] != H or xv.shape[1] != Wxv.shape[1] or hv.shape[0] != xv.shape[0]:
        raise ShapeError(f"gru_cell: h {hv.shape}, x {xv.shape}, hidden {H}, input {Wxv.shape[1]}")
    gx = xv @ Wxv.T + bv
    gh = hv @ Whv.T
    z = sigmoid_np(gx[:, :H] + gh[:, :H])
    r = sigmoid_np(gx[:, H:2 * H] + gh[:, H:2 * H])
    uh = gh[:, 2 * H:]
    n = np.tanh(gx[:, 2 * H:] + r * uh)
    h_new = (1.0 - z) * n + z * hv

    def fn(g):
        dn = g * (1.0 - z)
        dz = g * (hv - n)
        dh = g * z
        dan = dn * (1.0 - n * n)
        dr = dan * uh
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dgx = np.concatenate([daz, dar, dan], axis=1)
        dgh = np.concatenate([daz, dar, dan * r], axis=1)
        dh = dh + dgh @ Whv
        dx = dgx @ Wxv
        return dh, dx, dgx.T @ xv, dgh.T @ hv, dgx.sum(axis=0)

    return _node(h_new, (h, x, Wx, Wh, b), fn)


def gru_cell_step(params: GruParams, h, x) -> np.ndarray:
    """Single-vector GRU step without graph bookkeeping."""
    h = np.asarray(h, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if h.shape != (params.hidden_size,) or x.shape != (params.input_size,):
        raise ShapeError(f"gru_cell_step: h {h.shape}, x {x.shape}")
    with no_grad():
        out = gru_cell(const(h[None]), const(x[None]), leaf(params.Wx), leaf(params.Wh), leaf(params.b))
    return out.value[0]


def linear_forward(W, b, x) -> np.ndarray:
    """y = W x + b on plain vectors; hard error on width mismatch."""
    W = np.asarray(W, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if W.ndim != 2 or x.shape != (W.shape[1],):
        raise ShapeError(f"linear_forward: W {W.shape}, x {x.shape}")
    return W @ x + np.asarray(b, dtype=DTYPE)


def softmax_vec(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    if z.ndim != 1:
        raise ShapeError("softmax_vec expects a 1-d vector")
    if not np.all(np.isfinite(z)):
        raise FloatingPointError(f"non-finite logits {z.tolist()}")
    return softmax_np(z)


# ---------------------------------------------------------------- optimizer

def adam_step(params: ParamSet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0) -> ParamSet:
    """Adam with L2 weight decay folded into the gradient (torch.optim.Adam semantics).

    Gradients are used as scratch space and hold garbage afterwards; call
    ``zero_grad`` before the next backward pass.
    """
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params.params.values():
        g = p.grad
        if weight_decay:
            g += weight_decay * p.value    # grad is scratch space after the step
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        np.multiply(g, g, out=g)
        p.v += (1.0 - beta2) * g
        # reuse g as the step buffer: lr * m_hat / (sqrt(v_hat) + eps)
        np.divide(p.v, c2, out=g)
        np.sqrt(g, out=g)
        g += eps
        np.divide(p.m, g, out=g)
        g *= lr / c1
        p.value -= g
    return params


# ---------------------------------------------------------------- checking

def finite_diff_grad(f: Callable[[], float], params: ParamSet, eps: float = 1e-5,
                     coords: dict[str, Sequence[int]] | None = None) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` (a closure over ``params``).

    ``coords`` optionally restricts each parameter to a list of flat indices;
    the result then holds one entry per listed index in that order.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps={eps} outside [1e-6, 1e-4]")
    out = {}
    names = list(coords) if coords is not None else list(params.params)
    for name in names:
        p = params[name]
        flat = p.value.reshape(-1)
        idx = range(flat.size) if coords is None else coords[name]
        g = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError(f"non-finite objective while probing {name}[{i}]")
            g[k] = (fp - fm) / (2.0 * eps)
        out[name] = g if coords is not None else g.reshape(p.value.shape)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.abs(analytic)
    n = np.abs(numeric)
    keep = (a >= floor) | (n >= floor)
    if not keep.any():
        return 0.0
    err = np.abs(analytic - numeric)[keep] / np.maximum(a, n)[keep]
    return float(err.max())
