"""Parameter initialization: looks-linear orthogonal, Xavier uniform and zero attention."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    GateLayerParams,
    GatLayerParams,
    LayerParams,
    MlpLayerParams,
    NetworkSpec,
)

MATRIX_SCHEMES = ("looks_linear_orthogonal", "xavier_uniform")
ATTENTION_SCHEMES = ("zero", "xavier_uniform")


@dataclass
class InitPolicy:
    matrix_scheme: str = "looks_linear_orthogonal"
    # None picks the per-architecture default: Xavier for GAT, zero for GATE
    attention_scheme: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.matrix_scheme not in MATRIX_SCHEMES:
            raise ValueError(f"matrix_scheme must be one of {MATRIX_SCHEMES}")
        if self.attention_scheme is not None and self.attention_scheme not in ATTENTION_SCHEMES:
            raise ValueError(f"attention_scheme must be one of {ATTENTION_SCHEMES} or null")

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _random_orthogonal(m: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``m x k`` matrix with orthonormal rows (m <= k) or columns (m >= k)."""
    big, small = max(m, k), min(m, k)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    # sign correction makes the draw Haar distributed
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return q if m >= k else q.T


def _orthogonal_fill(basis: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unit Gaussian direction orthogonal to the span of the rows of ``basis``."""
    v = rng.standard_normal(basis.shape[1])
    if basis.shape[0]:
        _, s, vt = np.linalg.svd(basis, full_matrices=False)
        span = vt[s > 1e-12 * max(s.max(), 1.0)]
        v = v - span.T @ (span @ v)
    return v / np.linalg.norm(v)


def looks_linear_orthogonal(rows: int, cols: int, seed) -> np.ndarray:
    """Mirrored orthogonal block ``[[O, -O], [-O, O]] / sqrt(2)``.

    For a mirrored input ``(x, -x)`` a ReLU layer with this matrix behaves
    linearly.  An odd column count adds a unit column orthogonal to the block's
    columns; an odd row count then adds a unit row orthogonal to every row
    above it.  Both keep the spectral norm at most ``sqrt(2)``.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = _rng(seed)
    if rows == 1 or cols == 1:
        v = rng.standard_normal(rows * cols)
        return (v / np.linalg.norm(v)).reshape(rows, cols)
    m, k = rows // 2, cols // 2
    out = np.zeros((rows, cols))
    o = _random_orthogonal(m, k, rng)
    out[: 2 * m, : 2 * k] = np.block([[o, -o], [-o, o]]) / np.sqrt(2.0)
    if cols % 2:
        out[: 2 * m, -1] = _orthogonal_fill(out[: 2 * m, : 2 * k].T, rng)
    if rows % 2:
        out[-1, :] = _orthogonal_fill(out[:-1, :], rng)
    return out


def xavier_uniform(rows: int, cols: int, seed) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return _rng(seed).uniform(-bound, bound, size=(rows, cols))


def xavier_uniform_vector(dim: int, seed) -> np.ndarray:
    """Attention vectors are treated as ``1 x dim`` matrices."""
    return xavier_uniform(1, dim, seed)[0]


def zero_attention(dim: int) -> np.ndarray:
    return np.zeros(dim)


def init_network(spec: NetworkSpec, in_dim: int, policy: InitPolicy) -> list[LayerParams]:
    """Draw every parameter of ``spec``; a pure function of ``(spec, in_dim, policy)``."""
    params: list[LayerParams] = []
    d_in = in_dim
    for l, ls in enumerate(spec.layers):
        counter = iter(range(16))

        def matrix():
            seed = np.random.SeedSequence([policy.seed, l, next(counter)])
            if policy.matrix_scheme == "looks_linear_orthogonal":
                return looks_linear_orthogonal(ls.width, d_in, seed)
            return xavier_uniform(ls.width, d_in, seed)

        def attention(default: str):
            scheme = policy.attention_scheme or default
            seed = np.random.SeedSequence([policy.seed, l, next(counter)])
            if scheme == "zero":
                return zero_attention(ls.width)
            return xavier_uniform_vector(ls.width, seed)

        if ls.kind == "gat":
            params.append(GatLayerParams(matrix(), matrix(), attention("xavier_uniform")))
        elif ls.kind == "gat_s":
            params.append(GatLayerParams.shared_weights(matrix(), attention("xavier_uniform")))
        elif ls.kind == "gate":
            params.append(
                GateLayerParams(matrix(), matrix(), matrix(), attention("zero"), attention("zero"))
            )
        elif ls.kind == "gate_s":
            params.append(
                GateLayerParams.shared_weights(matrix(), attention("zero"), attention("zero"))
            )
        else:
            params.append(MlpLayerParams(matrix()))
        if ls.bias:
            params[-1].b = np.zeros(ls.width)
        d_in = ls.width
    return params
