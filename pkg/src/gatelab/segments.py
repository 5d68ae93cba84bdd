"""Segment bookkeeping for gather / scatter over edge arrays."""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp


class SegmentIndex:
    """An index array ``ids[e]`` assigning each of ``E`` entries to one of ``n`` segments.

    Holds the cached sparse incidence matrix (``n x E``) that turns row
    scatter-adds into a single sparse product.
    """

    def __init__(self, ids, num_segments: int | None = None):
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ValueError("segment ids must be one-dimensional")
        if num_segments is None:
            num_segments = int(ids.max()) + 1 if ids.size else 0
        if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
            raise IndexError("segment id out of range")
        ids.setflags(write=False)
        self.ids = ids
        self.num_segments = int(num_segments)

    def __len__(self):
        return self.ids.size

    @cached_property
    def counts(self) -> np.ndarray:
        return np.bincount(self.ids, minlength=self.num_segments)

    @cached_property
    def is_sorted(self) -> bool:
        return bool(np.all(self.ids[1:] >= self.ids[:-1]))

    @cached_property
    def order(self) -> np.ndarray:
        return np.arange(self.ids.size) if self.is_sorted else np.argsort(self.ids, kind="stable")

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        e = self.ids.size
        indptr = np.zeros(self.num_segments + 1, dtype=np.int64)
        np.cumsum(self.counts, out=indptr[1:])
        return sp.csr_matrix(
            (np.ones(e), self.order, indptr), shape=(self.num_segments, e)
        )

    def sum(self, x: np.ndarray) -> np.ndarray:
        """Per-segment sums of a length-E vector or the rows of an ``E x d`` array."""
        if x.ndim == 1:
            return np.bincount(self.ids, weights=x, minlength=self.num_segments)
        return np.asarray(self.incidence @ x)

    def max(self, x: np.ndarray) -> np.ndarray:
        """Per-segment maxima of a length-E vector; ``-inf`` for empty segments."""
        out = np.full(self.num_segments, -np.inf)
        nonempty = np.flatnonzero(self.counts)
        if nonempty.size:
            starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])[nonempty]
            out[nonempty] = np.maximum.reduceat(x[self.order], starts)
        return out


def as_segments(ids, num_segments: int | None = None) -> SegmentIndex:
    if isinstance(ids, SegmentIndex):
        if num_segments is not None and num_segments != ids.num_segments:
            raise ValueError("segment count mismatch")
        return ids
    return SegmentIndex(ids, num_segments)
