"""GAT / GATE layers, perceptron layers and network assembly.

Layer weights follow the ``d_out x d_in`` convention, so ``W[i, :]`` holds the
incoming weights of unit ``i`` and ``W[:, i]`` its outgoing weights into the
next layer.  All forward functions record on a :class:`~gatelab.autodiff.Tape`
and return :class:`~gatelab.autodiff.Var` objects; plain numpy inputs are
lifted onto a fresh tape as constants.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .graph import Graph

KINDS = ("gat", "gat_s", "gate", "gate_s", "mlp")
ATTENTION_KINDS = ("gat", "gat_s", "gate", "gate_s")
ACTIVATIONS = ("relu", "leaky_relu")


# specs ------------------------------------------------------------------------


@dataclass
class LayerSpec:
    kind: str
    width: int
    activation: str | None = None
    slope: float = 0.2
    score_slope: float | None = None
    bias: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.width < 1:
            raise ValueError("layer width must be positive")
        if self.activation is None:
            # LeakyReLU for GAT variants, ReLU for GATE and perceptron layers
            self.activation = "leaky_relu" if self.kind in ("gat", "gat_s") else "relu"
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.score_slope is None:
            self.score_slope = 0.2 if self.kind in ("gat", "gat_s") else 0.0
        if self.slope < 0 or self.score_slope < 0:
            raise ValueError("activation slopes must be non-negative")

    @property
    def is_attention(self) -> bool:
        return self.kind in ATTENTION_KINDS

    @property
    def hidden_slope(self) -> float:
        return self.slope if self.activation == "leaky_relu" else 0.0


@dataclass
class NetworkSpec:
    layers: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        if not self.layers:
            raise ValueError("a network needs at least one layer")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].width

    @classmethod
    def uniform(
        cls, kind: str, depth: int, num_classes: int, hidden: int = 64, bias: bool = False
    ) -> "NetworkSpec":
        """``depth`` layers of one kind; hidden widths ``hidden``, output ``num_classes``."""
        if depth < 1:
            raise ValueError("depth must be >= 1")
        widths = [hidden] * (depth - 1) + [num_classes]
        return cls([LayerSpec(kind, w, bias=bias) for w in widths])

    @classmethod
    def alternating(
        cls,
        depth: int,
        num_classes: int,
        hidden: int = 64,
        first: str = "gat",
        second: str = "mlp",
        bias: bool = False,
    ) -> "NetworkSpec":
        """Alternate two layer kinds (the MLP+GAT pattern), starting with ``first``."""
        widths = [hidden] * (depth - 1) + [num_classes]
        kinds = [first if i % 2 == 0 else second for i in range(depth)]
        # MLP+GAT uses ReLU after every hidden layer
        return cls([LayerSpec(k, w, activation="relu", bias=bias) for k, w in zip(kinds, widths)])

    def to_dict(self) -> dict:
        return {"layers": [asdict(l) for l in self.layers]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        known = {f.name for f in fields(LayerSpec)}
        layers = []
        for i, raw in enumerate(d["layers"]):
            extra = set(raw) - known
            if extra:
                raise ValueError(f"layers[{i}]: unknown field(s) {sorted(extra)}")
            layers.append(LayerSpec(**raw))
        return cls(layers)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))


# parameters ---------------------------------------------------------------------


def _with_bias(named: dict[str, Any], b) -> dict[str, Any]:
    if b is not None:
        named["b"] = b
    return named


@dataclass
class GatLayerParams:
    W_s: Any
    W_t: Any
    a: Any
    shared: bool = False
    b: Any = None

    @classmethod
    def shared_weights(cls, W, a, b=None) -> "GatLayerParams":
        return cls(W, W, a, shared=True, b=b)

    def named(self) -> dict[str, Any]:
        if self.shared:
            out = {"W_s": self.W_s, "a": self.a}
        else:
            out = {"W_s": self.W_s, "W_t": self.W_t, "a": self.a}
        return _with_bias(out, self.b)

    def rebuild(self, named: dict) -> "GatLayerParams":
        W_t = named["W_s"] if self.shared else named["W_t"]
        return GatLayerParams(named["W_s"], W_t, named["a"], self.shared, named.get("b"))

    @property
    def message_weight(self):
        return self.W_s


@dataclass
class GateLayerParams:
    W: Any
    U: Any
    V: Any
    a_s: Any
    a_t: Any
    shared: bool = False
    b: Any = None

    @classmethod
    def shared_weights(cls, W, a_s, a_t, b=None) -> "GateLayerParams":
        return cls(W, W, W, a_s, a_t, shared=True, b=b)

    def named(self) -> dict[str, Any]:
        if self.shared:
            out = {"W": self.W, "a_s": self.a_s, "a_t": self.a_t}
        else:
            out = {"W": self.W, "U": self.U, "V": self.V, "a_s": self.a_s, "a_t": self.a_t}
        return _with_bias(out, self.b)

    def rebuild(self, named: dict) -> "GateLayerParams":
        W = named["W"]
        U, V = (W, W) if self.shared else (named["U"], named["V"])
        return GateLayerParams(W, U, V, named["a_s"], named["a_t"], self.shared, named.get("b"))

    @property
    def message_weight(self):
        return self.W


@dataclass
class MlpLayerParams:
    W: Any
    b: Any = None

    def named(self) -> dict[str, Any]:
        return _with_bias({"W": self.W}, self.b)

    def rebuild(self, named: dict) -> "MlpLayerParams":
        return MlpLayerParams(named["W"], named.get("b"))

    @property
    def message_weight(self):
        return self.W


LayerParams = GatLayerParams | GateLayerParams | MlpLayerParams


def flatten_params(params: list[LayerParams]) -> dict[str, np.ndarray]:
    """``{"<layer>.<name>": array}``; shared matrices appear once."""
    return {f"{l}.{k}": v for l, p in enumerate(params) for k, v in p.named().items()}


def unflatten_params(template: list[LayerParams], flat: dict[str, Any]) -> list[LayerParams]:
    return [
        p.rebuild({k: flat[f"{l}.{k}"] for k in p.named()}) for l, p in enumerate(template)
    ]


def bind(tape: Tape, params: list[LayerParams]) -> list[LayerParams]:
    """Register every parameter on ``tape`` and return the same structure holding Vars."""
    return [
        p.rebuild({k: tape.parameter(v, f"{l}.{k}") for k, v in p.named().items()})
        for l, p in enumerate(params)
    ]


def copy_params(params: list[LayerParams]) -> list[LayerParams]:
    return unflatten_params(params, {k: v.copy() for k, v in flatten_params(params).items()})


# layer primitives ------------------------------------------------------------------


def _tape_for(*objs) -> Tape:
    for o in objs:
        if isinstance(o, Var):
            return o.tape
        if isinstance(o, (GatLayerParams, GateLayerParams, MlpLayerParams)):
            for v in o.named().values():
                if isinstance(v, Var):
                    return v.tape
    return Tape()


def _lift_params(tape: Tape, p):
    return p.rebuild({k: tape.lift(v) for k, v in p.named().items()})


def activate(x: Var, activation: str | None, slope: float = 0.2) -> Var:
    if activation is None:
        return x
    if activation == "relu":
        return ad.relu(x)
    if activation == "leaky_relu":
        return ad.leaky_relu(x, slope)
    raise ValueError(f"unknown activation {activation!r}")


def _check_graph(g: Graph, require_self_loops: bool):
    if require_self_loops and not g.has_self_loops:
        raise ValueError(
            "attention layers need self-loops on every node (alpha_vv is undefined otherwise); "
            "call add_self_loops first"
        )


# Set to False to build scores from the unfused gather / add / leaky_relu /
# matmul primitives (slower; used as a cross-check in tests).
FUSED_SCORES = True


def _scores(H: Var, src_w: Var, tgt_w: Var, a_src: Var, a_self: Var, g: Graph, slope: float):
    """Edge scores ``a . phi(src_w h_u + tgt_w h_v)``, plus the source transform ``src_w H``."""
    P = ad.linear(H, src_w)
    Q = P if tgt_w is src_w else ad.linear(H, tgt_w)
    if FUSED_SCORES:
        e = ad.edge_scores(P, Q, a_src, a_self, g.sources, g.targets, g.is_self_edge, slope)
        return e, P
    s = ad.leaky_relu(ad.add(ad.gather_rows(P, g.sources), ad.gather_rows(Q, g.targets)), slope)
    if a_self is a_src:
        return ad.matmul(s, a_src), P
    return ad.where(g.is_self_edge, ad.matmul(s, a_self), ad.matmul(s, a_src)), P


def _gat_parts(p: GatLayerParams, H, g, score_slope, require_self_loops=True):
    _check_graph(g, require_self_loops)
    tape = _tape_for(p, H)
    p, H = _lift_params(tape, p), tape.lift(H)
    e, P = _scores(H, p.W_s, p.W_t, p.a, p.a, g, score_slope)
    return e, P, p, H


def _gate_parts(p: GateLayerParams, H, g, score_slope, require_self_loops=True):
    _check_graph(g, require_self_loops)
    tape = _tape_for(p, H)
    p, H = _lift_params(tape, p), tape.lift(H)
    e, P = _scores(H, p.U, p.V, p.a_s, p.a_t, g, score_slope)
    return e, P, p, H


def gat_scores(p: GatLayerParams, H, g: Graph, score_slope: float = 0.2) -> Var:
    """``e_uv = a . phi(W_s h_u + W_t h_v)`` for every stored edge ``u -> v`` (CSR order)."""
    return _gat_parts(p, H, g, score_slope)[0]


def gate_scores(p: GateLayerParams, H, g: Graph, score_slope: float = 0.0) -> Var:
    """``e_uv = a_s . phi(U h_u + V h_v)`` for ``u != v`` and ``a_t . phi(...)`` on self-loops."""
    return _gate_parts(p, H, g, score_slope)[0]


def attention_coefficients(e, g: Graph, allow_empty: bool = False) -> Var:
    """Softmax of edge scores over each incoming neighborhood."""
    tape = _tape_for(e)
    return ad.segment_softmax(tape.lift(e), g.targets, g.num_nodes, allow_empty=allow_empty)


def layer_forward(
    p: GatLayerParams | GateLayerParams,
    H,
    g: Graph,
    activation: str | None = "relu",
    slope: float = 0.2,
    score_slope: float | None = None,
    *,
    return_alpha: bool = False,
    require_self_loops: bool = True,
):
    """``h'_v = phi(sum_u alpha_uv M h_u + b)`` with ``M = W_s`` (GAT) or ``W`` (GATE).

    ``b`` is only added when the layer carries one.  ``activation=None`` gives
    the raw (output layer) aggregation.
    """
    if isinstance(p, GatLayerParams):
        ss = 0.2 if score_slope is None else score_slope
        e, P, p, H = _gat_parts(p, H, g, ss, require_self_loops)
        M = P  # messages use W_s, which is also the source-side score transform
    elif isinstance(p, GateLayerParams):
        ss = 0.0 if score_slope is None else score_slope
        e, P, p, H = _gate_parts(p, H, g, ss, require_self_loops)
        M = P if p.W is p.U else ad.linear(H, p.W)
    else:
        raise TypeError(f"not an attention layer: {type(p).__name__}")
    if H.shape[1] != p.message_weight.shape[1]:
        raise ValueError("layer input width does not match its weights")
    alpha = attention_coefficients(e, g, allow_empty=not require_self_loops)
    z = ad.aggregate(alpha, M, g.sources, g.targets)
    if p.b is not None:
        z = ad.add_row(z, p.b)
    out = activate(z, activation, slope)
    return (out, alpha) if return_alpha else out


def mlp_layer_forward(W, H, activation: str | None = "relu", slope: float = 0.2, b=None) -> Var:
    """``h'_v = phi(W h_v + b)``; the graph is not touched."""
    tape = _tape_for(W, H, b)
    z = ad.linear(tape.lift(H), tape.lift(W))
    if b is not None:
        z = ad.add_row(z, tape.lift(b))
    return activate(z, activation, slope)


# networks ------------------------------------------------------------------------------


@dataclass
class ForwardPass:
    logits: Var
    tape: Tape
    params: list[LayerParams]
    alphas: list[np.ndarray | None]
    hidden: list[np.ndarray]

    def alpha_vv(self, g: Graph) -> list[np.ndarray]:
        """Self-attention per node and layer; perceptron layers report exactly 1."""
        pos = g.self_loop_positions
        return [np.ones(g.num_nodes) if a is None else a[pos] for a in self.alphas]


def check_params(spec: NetworkSpec, params: list[LayerParams], in_dim: int) -> None:
    if len(params) != spec.depth:
        raise ValueError(f"spec has {spec.depth} layers but {len(params)} parameter bundles given")
    d_in = in_dim
    for l, (ls, p) in enumerate(zip(spec.layers, params)):
        expected = {
            "gat": (GatLayerParams, False),
            "gat_s": (GatLayerParams, True),
            "gate": (GateLayerParams, False),
            "gate_s": (GateLayerParams, True),
            "mlp": (MlpLayerParams, None),
        }[ls.kind]
        if not isinstance(p, expected[0]) or (
            expected[1] is not None and p.shared != expected[1]
        ):
            raise ValueError(f"layer {l}: parameters do not match kind {ls.kind!r}")
        if (p.b is not None) != ls.bias:
            raise ValueError(f"layer {l}: bias {'missing' if ls.bias else 'not expected'}")
        for name, v in p.named().items():
            shape = np.shape(v.value if isinstance(v, Var) else v)
            want = (ls.width,) if name[0] in "ab" else (ls.width, d_in)
            if shape != want:
                raise ValueError(f"layer {l}: {name} has shape {shape}, expected {want}")
        d_in = ls.width


def network_forward(
    spec: NetworkSpec,
    params: list[LayerParams],
    H0,
    g: Graph,
    tape: Tape | None = None,
) -> ForwardPass:
    """Apply the layers in order; the last one returns raw logits.

    Parameters given as arrays are registered on the tape as ``"<layer>.<name>"``.
    """
    H0 = np.asarray(H0, dtype=np.float64) if not isinstance(H0, Var) else H0
    check_params(spec, params, H0.shape[1])
    if tape is None:
        tape = _tape_for(*params, H0)
    already_bound = any(isinstance(v, Var) for p in params for v in p.named().values())
    bound = params if already_bound else bind(tape, params)
    H = tape.lift(H0)
    alphas, hidden = [], []
    for l, (ls, p) in enumerate(zip(spec.layers, bound)):
        final = l == spec.depth - 1
        act = None if final else ls.activation
        if ls.kind == "mlp":
            H = mlp_layer_forward(p.W, H, act, ls.hidden_slope, p.b)
            alphas.append(None)
        else:
            H, alpha = layer_forward(
                p, H, g, act, ls.hidden_slope, ls.score_slope, return_alpha=True
            )
            alphas.append(alpha.value)
        hidden.append(H.value)
    return ForwardPass(H, tape, bound, alphas, hidden)
