"""Undirected graphs in CSR form, random graph generation and edge-list IO.

Row ``v`` of the CSR structure lists the neighborhood N(v), i.e. the sources
``u`` of all edges ``u -> v``.  Both directions of an undirected edge are
stored, and rows are sorted ascending so that iteration order (and therefore
floating point summation order) is reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .segments import SegmentIndex

__all__ = [
    "Graph",
    "add_self_loops",
    "erdos_renyi",
    "neighborhood",
    "read_edge_list",
    "write_edge_list",
]


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    offsets: np.ndarray
    neighbors: np.ndarray
    has_self_loops: bool = field(default=False)

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        neighbors = np.ascontiguousarray(self.neighbors, dtype=np.int64)
        offsets.setflags(write=False)
        neighbors.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "neighbors", neighbors)

    # construction -----------------------------------------------------

    @classmethod
    def from_edges(cls, num_nodes: int, edges, self_loops: bool = False) -> "Graph":
        """Build a symmetric graph from an iterable / array of ``(u, v)`` pairs.

        Duplicates (in either orientation) are merged.  Explicit ``(v, v)``
        pairs are kept as self-edges; ``self_loops=True`` adds one to every row.
        """
        if num_nodes < 1:
            raise ValueError(f"num_nodes must be >= 1, got {num_nodes}")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        both = np.concatenate([e, e[:, ::-1]], axis=0)
        if self_loops:
            loops = np.arange(num_nodes, dtype=np.int64)
            both = np.concatenate([both, np.stack([loops, loops], axis=1)], axis=0)
        # row = target v, column = source u
        key = np.unique(both[:, 1] * num_nodes + both[:, 0])
        rows, cols = np.divmod(key, num_nodes)
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
        full = bool(np.count_nonzero(rows == cols) == num_nodes)
        return cls(num_nodes, offsets, cols, has_self_loops=full)

    def validate(self) -> None:
        """Raise ``ValueError`` if any structural invariant is violated."""
        n, off, nb = self.num_nodes, self.offsets, self.neighbors
        if off.shape != (n + 1,) or off[0] != 0 or off[-1] != nb.size:
            raise ValueError("offsets do not describe the neighbor array")
        if np.any(np.diff(off) < 0):
            raise ValueError("offsets must be non-decreasing")
        if nb.size and (nb.min() < 0 or nb.max() >= n):
            raise ValueError("neighbor index out of range")
        tgt = self.targets.ids
        same_row = tgt[1:] == tgt[:-1]
        if np.any(same_row & (nb[1:] <= nb[:-1])):
            raise ValueError("rows must be strictly increasing (sorted, no duplicates)")
        fwd = tgt * n + nb
        rev = np.sort(nb * n + tgt)
        if not np.array_equal(fwd, rev):
            raise ValueError("graph is not symmetric")
        if self.has_self_loops and np.count_nonzero(nb == tgt) != n:
            raise ValueError("has_self_loops set but some node lacks a self-loop")

    # derived structure ------------------------------------------------

    @property
    def num_edges(self) -> int:
        """Number of stored directed edges, self-loops included."""
        return int(self.neighbors.size)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def targets(self) -> SegmentIndex:
        ids = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)
        return SegmentIndex(ids, self.num_nodes)

    @cached_property
    def sources(self) -> SegmentIndex:
        return SegmentIndex(self.neighbors, self.num_nodes)

    @cached_property
    def is_self_edge(self) -> np.ndarray:
        mask = self.neighbors == self.targets.ids
        mask.setflags(write=False)
        return mask

    @cached_property
    def self_loop_positions(self) -> np.ndarray:
        """Edge position of ``(v, v)`` for each node, ``-1`` where absent."""
        pos = np.full(self.num_nodes, -1, dtype=np.int64)
        idx = np.flatnonzero(self.is_self_edge)
        pos[self.neighbors[idx]] = idx
        return pos

    def undirected_edges(self, include_self_loops: bool = False) -> np.ndarray:
        """Each undirected edge once as a ``(u, v)`` row with ``u <= v``."""
        u, v = self.neighbors, self.targets.ids
        keep = u < v
        if include_self_loops:
            keep |= u == v
        return np.stack([u[keep], v[keep]], axis=1)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.undirected_edges(True)}

    def structurally_equal(self, other: "Graph") -> bool:
        return (
            self.num_nodes == other.num_nodes
            and self.has_self_loops == other.has_self_loops
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.neighbors, other.neighbors)
        )

    def without_self_loops(self) -> "Graph":
        return Graph.from_edges(self.num_nodes, self.undirected_edges(False))

    def to_dense(self) -> np.ndarray:
        """Dense 0/1 adjacency ``A[v, u] = 1`` iff ``u in N(v)``."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        a[self.targets.ids, self.neighbors] = 1.0
        return a


def add_self_loops(g: Graph) -> Graph:
    if g.has_self_loops:
        return g
    return Graph.from_edges(g.num_nodes, g.undirected_edges(True), self_loops=True)


def neighborhood(g: Graph, v: int) -> tuple[int, ...]:
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range for graph with {g.num_nodes} nodes")
    return tuple(int(u) for u in g.neighbors[g.offsets[v] : g.offsets[v + 1]])


def erdos_renyi(n: int, p: float, seed) -> Graph:
    """G(n, p): every unordered pair ``{u, v}``, ``u != v``, independently with prob. ``p``.

    ``seed`` is anything accepted by ``numpy.random.default_rng`` (PCG64).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    chunks = []
    for u in range(n - 1):
        hit = np.flatnonzero(rng.random(n - u - 1) < p)
        if hit.size:
            chunks.append(np.stack([np.full(hit.size, u), hit + u + 1], axis=1))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    return Graph.from_edges(n, edges)


def write_edge_list(g: Graph, path) -> None:
    """Write ``nodes <n>`` then one ``u v`` line per undirected edge (self-loops explicit)."""
    lines = [f"nodes {g.num_nodes}"]
    lines += [f"{u} {v}" for u, v in g.undirected_edges(include_self_loops=True)]
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_edge_list(path) -> Graph:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "nodes":
            raise ValueError(f"{path}: expected header 'nodes <n>', got {' '.join(header)!r}")
        n = int(header[1])
        edges = [tuple(map(int, line.split())) for line in fh if line.strip()]
    for e in edges:
        if len(e) != 2:
            raise ValueError(f"{path}: malformed edge line {e}")
    return Graph.from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
