"""Fused per-edge loops for attention scores and neighborhood aggregation.

These avoid materialising ``E x d`` temporaries.  They are used by the
``edge_scores`` and ``aggregate`` primitives in :mod:`gatelab.autodiff`; the
unfused composition of gather / add / leaky_relu / matmul is kept as the
reference path and the two are compared in the test-suite.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap(args[0]) if args and callable(args[0]) else wrap

else:
    HAVE_NUMBA = True


@njit(cache=True)
def edge_scores_fwd(P, Q, a_s, a_t, src, tgt, is_self, slope, out):
    d = P.shape[1]
    for e in range(src.shape[0]):
        u = src[e]
        v = tgt[e]
        a = a_t if is_self[e] else a_s
        acc = 0.0
        for f in range(d):
            x = P[u, f] + Q[v, f]
            if x < 0.0:
                x *= slope
            acc += a[f] * x
        out[e] = acc


@njit(cache=True)
def edge_scores_bwd(P, Q, a_s, a_t, src, tgt, is_self, slope, g, gP, gQ, ga_s, ga_t):
    d = P.shape[1]
    for e in range(src.shape[0]):
        u = src[e]
        v = tgt[e]
        ge = g[e]
        own = is_self[e]
        a = a_t if own else a_s
        ga = ga_t if own else ga_s
        for f in range(d):
            x = P[u, f] + Q[v, f]
            if x >= 0.0:
                s = x
                ds = 1.0
            else:
                s = slope * x
                ds = slope
            ga[f] += ge * s
            t = ge * a[f] * ds
            gP[u, f] += t
            gQ[v, f] += t


@njit(cache=True)
def aggregate_fwd(w, X, src, offsets, out):
    d = X.shape[1]
    for v in range(offsets.shape[0] - 1):
        for e in range(offsets[v], offsets[v + 1]):
            u = src[e]
            we = w[e]
            for f in range(d):
                out[v, f] += we * X[u, f]


@njit(cache=True)
def aggregate_bwd(w, X, src, offsets, G, gw, gX, need_w, need_x):
    d = X.shape[1]
    for v in range(offsets.shape[0] - 1):
        for e in range(offsets[v], offsets[v + 1]):
            u = src[e]
            if need_w:
                acc = 0.0
                for f in range(d):
                    acc += X[u, f] * G[v, f]
                gw[e] = acc
            if need_x:
                we = w[e]
                for f in range(d):
                    gX[u, f] += we * G[v, f]


def warmup() -> None:
    """Compile (or load cached) kernels up front."""
    P = np.zeros((2, 1))
    idx = np.array([0, 1], dtype=np.int64)
    off = np.array([0, 1, 2], dtype=np.int64)
    mask = np.array([True, False])
    a = np.zeros(1)
    out = np.zeros(2)
    edge_scores_fwd(P, P, a, a, idx, idx, mask, 0.2, out)
    edge_scores_bwd(P, P, a, a, idx, idx, mask, 0.2, out, P.copy(), P.copy(), a.copy(), a.copy())
    aggregate_fwd(out, P, idx, off, P.copy())
    aggregate_bwd(out, P, idx, off, P, out.copy(), P.copy(), True, True)
