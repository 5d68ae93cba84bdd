"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A :class:`Tape` records every primitive applied to its variables in execution
order, which is already a topological order.  ``Tape.backward`` walks the
record once in reverse and returns exact gradients for every named leaf.

Only the primitives needed for attention layers and cross-entropy training are
provided; all of them accept arrays of rank <= 2.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import kernels
from .segments import as_segments

__all__ = [
    "Tape",
    "Var",
    "add",
    "aggregate",
    "edge_scores",
    "finite_difference_grad",
    "gather_rows",
    "leaky_relu",
    "linear",
    "matmul",
    "mul",
    "relu",
    "scale",
    "scatter_weighted_sum",
    "segment_softmax",
    "softmax_cross_entropy",
    "sum_all",
    "where",
]


class Var:
    """A value living on a tape."""

    __slots__ = ("value", "tape", "index", "requires_grad", "name")

    def __init__(self, value, tape, index, requires_grad, name=None):
        self.value = value
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.shape}, grad={self.requires_grad})"


class Tape:
    def __init__(self):
        self._vars: list[Var] = []
        self._parents: list[tuple[Var, ...]] = []
        self._vjps: list[Callable | None] = []
        self._params: dict[str, Var] = {}

    def __len__(self):
        return len(self._vars)

    def _push(self, value, parents, vjp, requires_grad, name=None) -> Var:
        var = Var(value, self, len(self._vars), requires_grad, name)
        self._vars.append(var)
        self._parents.append(parents)
        self._vjps.append(vjp)
        return var

    def parameter(self, value, name: str) -> Var:
        """A differentiable leaf.  Registering the same name twice is an error."""
        if name in self._params:
            raise KeyError(f"parameter {name!r} already on tape")
        var = self._push(np.asarray(value, dtype=np.float64), (), None, True, name)
        self._params[name] = var
        return var

    def constant(self, value) -> Var:
        return self._push(np.asarray(value, dtype=np.float64), (), None, False)

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("variable belongs to a different tape")
            return x
        return self.constant(x)

    def record(self, value, parents: tuple[Var, ...], vjp: Callable) -> Var:
        needs = any(p.requires_grad for p in parents)
        return self._push(value, parents, vjp if needs else None, needs)

    @property
    def parameters(self) -> dict[str, Var]:
        return dict(self._params)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradients of the scalar ``loss`` w.r.t. every named parameter.

        Parameters with no path to ``loss`` get zero arrays.
        """
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.value.size != 1 or loss.value.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._vars)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            vjp = self._vjps[i]
            if g is None or vjp is None:
                continue
            for parent, pg in zip(self._parents[i], vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                j = parent.index
                grads[j] = pg if grads[j] is None else grads[j] + pg
            if i != loss.index and i not in self._param_indices():
                grads[i] = None  # intermediate gradients are not needed again
        return {
            name: (grads[v.index] if grads[v.index] is not None else np.zeros_like(v.value))
            for name, v in self._params.items()
        }

    def _param_indices(self):
        cached = getattr(self, "_pidx", None)
        if cached is None or len(cached) != len(self._params):
            cached = {v.index for v in self._params.values()}
            self._pidx = cached
        return cached


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


# elementwise --------------------------------------------------------------


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def add_row(x, b) -> Var:
    """``x + b`` with the vector ``b`` broadcast over the rows of ``x``."""
    tape = _tape_of(x, b)
    x, b = tape.lift(x), tape.lift(b)
    if b.value.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"add_row: cannot broadcast {b.shape} over rows of {x.shape}")
    return tape.record(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return tape.record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: Var, c: float) -> Var:
    return x.tape.record(x.value * c, (x,), lambda g: (g * c,))


def where(mask, a, b) -> Var:
    """Elementwise select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    mask = np.asarray(mask, dtype=bool)
    if not (mask.shape == a.shape == b.shape):
        raise ValueError("where: shape mismatch")
    return tape.record(
        np.where(mask, a.value, b.value),
        (a, b),
        lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)),
    )


def leaky_relu(x: Var, slope: float) -> Var:
    """``max(x, 0) + slope * min(x, 0)``; the derivative at 0 is taken as 1."""
    if slope < 0:
        raise ValueError("slope must be non-negative")
    xv = x.value
    d = slope + (1.0 - slope) * (xv >= 0)
    return x.tape.record(xv * d, (x,), lambda g: (g * d,))


def relu(x: Var) -> Var:
    return leaky_relu(x, 0.0)


def sum_all(x: Var) -> Var:
    shape = x.shape
    return x.tape.record(np.asarray(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))


# linear algebra -------------------------------------------------------------


def matmul(a, b) -> Var:
    """``a @ b`` for ``a`` of rank 2 and ``b`` of rank 1 or 2."""
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.outer(g, bv) if bv.ndim == 1 else g @ bv.T
        if b.requires_grad:
            gb = av.T @ g
        return ga, gb

    return tape.record(av @ bv, (a, b), vjp)


def linear(h, w) -> Var:
    """Row-wise transform ``h @ w.T``: applies ``w`` (``d_out x d_in``) to every row of ``h``."""
    tape = _tape_of(h, w)
    h, w = tape.lift(h), tape.lift(w)
    hv, wv = h.value, w.value
    if hv.ndim != 2 or wv.ndim != 2 or hv.shape[1] != wv.shape[1]:
        raise ValueError(f"linear: input width {hv.shape} incompatible with weight {wv.shape}")

    def vjp(g):
        return (g @ wv if h.requires_grad else None, g.T @ hv if w.requires_grad else None)

    return tape.record(hv @ wv.T, (h, w), vjp)


# gather / scatter / segments ----------------------------------------------


def gather_rows(x: Var, idx) -> Var:
    """Rows ``x[idx[e]]`` for every entry ``e``; the backward pass scatter-adds."""
    seg = as_segments(idx, x.shape[0])
    return x.tape.record(x.value[seg.ids], (x,), lambda g: (seg.sum(g),))


def scatter_weighted_sum(m, w, segments, n: int) -> Var:
    """Output row ``v`` is ``sum_{e: segments[e] == v} w[e] * m[e, :]``."""
    tape = _tape_of(m, w)
    m, w = tape.lift(m), tape.lift(w)
    seg = as_segments(segments, n)
    mv, wv = m.value, w.value
    if mv.ndim != 2 or wv.shape != (mv.shape[0],) or len(seg) != mv.shape[0]:
        raise ValueError("scatter_weighted_sum: shape mismatch")

    def vjp(g):
        ge = g[seg.ids]
        gm = wv[:, None] * ge if m.requires_grad else None
        gw = np.einsum("ij,ij->i", mv, ge) if w.requires_grad else None
        return gm, gw

    return tape.record(seg.sum(wv[:, None] * mv), (m, w), vjp)


def aggregate(weights, x, sources, targets) -> Var:
    """Fused ``scatter_weighted_sum(gather_rows(x, sources), weights, targets)``.

    Output row ``v`` is ``sum_e weights[e] * x[sources[e]]`` over the edges
    ``e`` whose target is ``v``.  ``targets`` must be sorted (CSR order).
    """
    tape = _tape_of(weights, x)
    weights, x = tape.lift(weights), tape.lift(x)
    src = as_segments(sources, x.shape[0])
    tgt = as_segments(targets)
    if not tgt.is_sorted:
        raise ValueError("aggregate requires targets grouped in CSR order")
    if weights.shape != (len(src),) or len(tgt) != len(src):
        raise ValueError("aggregate: weights, sources and targets differ in length")
    wv, xv = weights.value, np.ascontiguousarray(x.value)
    offsets = np.zeros(tgt.num_segments + 1, dtype=np.int64)
    np.cumsum(tgt.counts, out=offsets[1:])
    out = np.zeros((tgt.num_segments, xv.shape[1]))
    kernels.aggregate_fwd(wv, xv, src.ids, offsets, out)

    def vjp(g):
        gw = np.zeros_like(wv) if weights.requires_grad else None
        gx = np.zeros_like(xv) if x.requires_grad else None
        kernels.aggregate_bwd(
            wv, xv, src.ids, offsets, np.ascontiguousarray(g),
            gw if gw is not None else wv, gx if gx is not None else xv,
            gw is not None, gx is not None,
        )
        return gw, gx

    return tape.record(out, (weights, x), vjp)


def edge_scores(p, q, a_src, a_self, sources, targets, is_self, slope: float) -> Var:
    """Fused attention scores ``a . leaky_relu(p[u] + q[v], slope)`` for each edge ``u -> v``.

    ``a_self`` is used on self-loops (``is_self[e]``) and ``a_src`` elsewhere;
    pass the same variable twice for a single attention vector.  Equivalent to
    ``where(is_self, matmul(s, a_self), matmul(s, a_src))`` with
    ``s = leaky_relu(add(gather_rows(p, sources), gather_rows(q, targets)))``.
    """
    tape = _tape_of(p, q, a_src, a_self)
    p, q, a_src, a_self = (tape.lift(v) for v in (p, q, a_src, a_self))
    src, tgt = as_segments(sources, p.shape[0]), as_segments(targets, q.shape[0])
    is_self = np.ascontiguousarray(is_self, dtype=np.bool_)
    if slope < 0:
        raise ValueError("slope must be non-negative")
    if p.shape[1] != q.shape[1] or a_src.shape != (p.shape[1],) or a_self.shape != a_src.shape:
        raise ValueError("edge_scores: width mismatch")
    if len(src) != len(tgt) or is_self.shape != (len(src),):
        raise ValueError("edge_scores: edge arrays differ in length")
    pv, qv = np.ascontiguousarray(p.value), np.ascontiguousarray(q.value)
    asv, atv = a_src.value, a_self.value
    out = np.empty(len(src))
    kernels.edge_scores_fwd(pv, qv, asv, atv, src.ids, tgt.ids, is_self, float(slope), out)

    def vjp(g):
        gp, gq = np.zeros_like(pv), np.zeros_like(qv)
        gas, gat = np.zeros_like(asv), np.zeros_like(atv)
        kernels.edge_scores_bwd(
            pv, qv, asv, atv, src.ids, tgt.ids, is_self, float(slope),
            np.ascontiguousarray(g), gp, gq, gas, gat,
        )
        return gp, gq, gas, gat

    return tape.record(out, (p, q, a_src, a_self), vjp)


def segment_softmax(
    scores: Var, segments, num_segments: int | None = None, allow_empty: bool = False
) -> Var:
    """Softmax of ``scores`` within each segment, with per-segment max subtraction.

    Every segment in ``range(num_segments)`` must be non-empty unless
    ``allow_empty`` is set (empty segments then simply own no entries).
    """
    seg = as_segments(segments, num_segments)
    sv = scores.value
    if sv.shape != (len(seg),):
        raise ValueError("segment_softmax: scores and segments differ in length")
    empty = np.flatnonzero(seg.counts == 0)
    if empty.size and not allow_empty:
        raise ValueError(
            f"segment_softmax: {empty.size} empty segment(s), first is {int(empty[0])}; "
            "a node without neighbors needs a self-loop"
        )
    ex = np.exp(sv - seg.max(sv)[seg.ids])
    alpha = ex / seg.sum(ex)[seg.ids]

    def vjp(g):
        ag = alpha * g
        return (ag - alpha * seg.sum(ag)[seg.ids],)

    return scores.tape.record(alpha, (scores,), vjp)


def softmax_cross_entropy(logits: Var, labels, mask) -> Var:
    """Mean over the masked rows of ``-log softmax(logits)[label]``."""
    lv = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if lv.ndim != 2 or labels.shape != (lv.shape[0],) or mask.shape != labels.shape:
        raise ValueError("softmax_cross_entropy: shape mismatch")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("softmax_cross_entropy: empty mask")
    y = labels[rows]
    if y.min() < 0 or y.max() >= lv.shape[1]:
        raise ValueError("label out of range for the number of logits")
    z = lv[rows]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(rows.size), y].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(rows.size), y] -= 1.0
        out = np.zeros_like(lv)
        out[rows] = p * (float(g) / rows.size)
        return (out,)

    return logits.tape.record(np.asarray(loss), (logits,), vjp)


# verification oracle ----------------------------------------------------------


def finite_difference_grad(f: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(theta + h e_i) - f(theta - h e_i)) / 2h`` per coordinate."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(theta))
        flat[i] = orig - h
        down = float(f(theta))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad
