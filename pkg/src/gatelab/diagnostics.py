"""α_vv traces, smoothness energies and edge homophily."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graph import Graph


@dataclass(frozen=True)
class AlphaRecord:
    epoch: int
    layer: int
    alpha_vv: np.ndarray


def extract_alpha_vv(alphas: list[np.ndarray | None], g: Graph, epoch: int = 0) -> list[AlphaRecord]:
    """Self-coefficients per layer from per-edge attention arrays (``None`` = perceptron layer).

    Accepts the ``alphas`` list of a forward pass.  Perceptron layers report 1.
    """
    if not g.has_self_loops:
        raise ValueError("alpha_vv is only defined when every node has a self-loop")
    pos = g.self_loop_positions
    return [
        AlphaRecord(epoch, l, np.ones(g.num_nodes) if a is None else np.asarray(a)[pos])
        for l, a in enumerate(alphas)
    ]


def alpha_histogram(values, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Counts over ``bins`` equal-width bins on [0, 1]; the last bin includes 1.

    Returns ``(counts, edges)`` with ``len(edges) == bins + 1``.
    """
    values = np.asarray(values, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.floor(values * bins).astype(np.int64), 0, bins - 1)
    return np.bincount(idx, minlength=bins), edges


def alpha_histogram_rows(epochs, alpha_vv_per_epoch, bins: int = 20):
    """``(epoch, layer, bin_lo, bin_hi, count)`` rows for a whole trace."""
    rows = []
    for epoch, layers in zip(epochs, alpha_vv_per_epoch):
        for l, vals in enumerate(layers):
            counts, edges = alpha_histogram(vals, bins)
            rows.extend((int(epoch), l, float(edges[b]), float(edges[b + 1]), int(counts[b]))
                        for b in range(bins))
    return rows


SMOOTHNESS_MODES = ("all_pairs", "adjacent_pairs")


def smoothness_energy(H, g: Graph | None = None, mode: str = "all_pairs") -> float:
    """Sum of ``||h_u - h_v||^2`` over unordered pairs ``u < v``.

    ``all_pairs`` uses every pair of nodes, ``adjacent_pairs`` the undirected
    non-self-loop edges of ``g``.
    """
    H = np.asarray(H, dtype=np.float64)
    if mode == "all_pairs":
        centered = H - H.mean(axis=0)
        # sum_{u<v} ||h_u - h_v||^2 = n * sum_v ||h_v - mean||^2
        return float(H.shape[0] * (centered**2).sum())
    if mode == "adjacent_pairs":
        if g is None:
            raise ValueError("adjacent_pairs mode needs a graph")
        e = g.undirected_edges(include_self_loops=False)
        return float(((H[e[:, 0]] - H[e[:, 1]]) ** 2).sum())
    raise ValueError(f"mode must be one of {SMOOTHNESS_MODES}")


def edge_homophily(labels, g: Graph) -> float:
    """Fraction of non-self-loop edges joining equally labelled nodes."""
    labels = np.asarray(labels)
    e = g.undirected_edges(include_self_loops=False)
    if e.shape[0] == 0:
        warnings.warn("graph has no non-self-loop edges; homophily defined as 1.0", stacklevel=2)
        return 1.0
    return float(np.mean(labels[e[:, 0]] == labels[e[:, 1]]))
