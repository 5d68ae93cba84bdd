"""Parameter/gradient balance laws that follow from rescale invariance.

Write ``Θ(x) = <x, ∂L/∂x>``.  Scaling the incoming weights of a hidden unit
by ``λ > 0`` and everything that reads that unit (or the attention entries
that see it) by ``1/λ`` leaves the logits unchanged for positively
homogeneous activations.  Differentiating at ``λ = 1`` gives one exact
identity per hidden unit:

``gat_eq5``           GAT_S   Θ(W[i,:]) = Θ(a[i]) + Θ(next[:, i])
``gat_eq5_extended``  GAT     Θ(W_s[i,:]) + Θ(W_t[i,:]) = Θ(a[i]) + Θ(next[:, i])
``gate_eq7``          GATE_S  Θ(W[i,:]) = Θ(a_s[i]) + Θ(a_t[i]) + Θ(next[:, i])
                      GATE    Θ(W[i,:]) = Θ(next[:, i])
``gate_eq8``          GATE    Θ(U[i,:]) + Θ(V[i,:]) = Θ(a_s[i]) + Θ(a_t[i])
``mlp``               MLP     Θ(W[i,:]) = Θ(next[:, i])

``next[:, i]`` collects column ``i`` of every matrix of layer ``l + 1`` that
consumes ``h^l`` (``W_s, W_t`` for GAT, ``W, U, V`` for GATE).  A layer bias
``b`` scales with the unit it feeds, so ``Θ(b[i])`` joins the left-hand side
of every law except ``gate_eq8``.  The output layer has no
successor, so only ``gate_eq8`` applies there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import GateLayerParams, GatLayerParams, LayerParams, MlpLayerParams

LAWS = ("gat_eq5", "gat_eq5_extended", "gate_eq7", "gate_eq8", "mlp")


@dataclass
class ConservationReport:
    law: str
    layer: int
    lhs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rhs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    applicable: bool = True
    reason: str = ""

    @classmethod
    def not_applicable(cls, law: str, layer: int, reason: str) -> "ConservationReport":
        return cls(law, layer, applicable=False, reason=reason)

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def scale(self) -> np.ndarray:
        return np.abs(self.lhs) + np.abs(self.rhs)

    @property
    def rel_residual(self) -> np.ndarray:
        return np.abs(self.residual) / np.maximum(self.scale, 1e-30)

    @property
    def max_rel_residual(self) -> float:
        r = self.rel_residual
        return float(r.max()) if r.size else 0.0

    def rows(self):
        """``(unit, lhs, rhs, rel_residual)`` tuples; empty when not applicable."""
        rel = self.rel_residual
        return [(i, float(self.lhs[i]), float(self.rhs[i]), float(rel[i])) for i in range(rel.size)]


def row_theta(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x, g)


def col_theta(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", x, g)


def _incoming(p: LayerParams, gp: LayerParams, lhs: np.ndarray) -> np.ndarray:
    return lhs if p.b is None else lhs + p.b * gp.b


def _consumer_mats(p: LayerParams, gp: LayerParams) -> list[tuple[np.ndarray, np.ndarray]]:
    """Distinct (matrix, grad) pairs of a layer that multiply its input."""
    if isinstance(p, GatLayerParams):
        names = ["W_s"] if p.shared else ["W_s", "W_t"]
    elif isinstance(p, GateLayerParams):
        names = ["W"] if p.shared else ["W", "U", "V"]
    else:
        names = ["W"]
    return [(getattr(p, n), getattr(gp, n)) for n in names]


def next_layer_theta(params, grads, l: int) -> np.ndarray:
    """Θ of column ``i`` summed over all consumers of ``h^l`` in layer ``l + 1``."""
    return sum(col_theta(x, g) for x, g in _consumer_mats(params[l + 1], grads[l + 1]))


def _check_layer(params, l: int):
    if not 0 <= l < len(params):
        raise IndexError(f"layer {l} out of range for a {len(params)}-layer network")


def conservation_residual_gat(params, grads, l: int) -> ConservationReport:
    """Balance law at GAT layer ``l``; ``params``/``grads`` share one structure."""
    _check_layer(params, l)
    p, gp = params[l], grads[l]
    if not isinstance(p, GatLayerParams):
        raise TypeError(f"layer {l} is not a GAT layer")
    law = "gat_eq5" if p.shared else "gat_eq5_extended"
    if l == len(params) - 1:
        return ConservationReport.not_applicable(law, l, "output layer has no successor")
    lhs = row_theta(p.W_s, gp.W_s)
    if not p.shared:
        lhs = lhs + row_theta(p.W_t, gp.W_t)
    rhs = next_layer_theta(params, grads, l) + p.a * gp.a
    return ConservationReport(law, l, _incoming(p, gp, lhs), rhs)


def conservation_residual_gate(params, grads, l: int) -> tuple[ConservationReport, ConservationReport]:
    """``(gate_eq7, gate_eq8)`` reports at GATE layer ``l``."""
    _check_layer(params, l)
    p, gp = params[l], grads[l]
    if not isinstance(p, GateLayerParams):
        raise TypeError(f"layer {l} is not a GATE layer")
    att = p.a_s * gp.a_s + p.a_t * gp.a_t
    if l == len(params) - 1:
        eq7 = ConservationReport.not_applicable("gate_eq7", l, "output layer has no successor")
    else:
        rhs = next_layer_theta(params, grads, l)
        if p.shared:
            rhs = rhs + att
        eq7 = ConservationReport("gate_eq7", l, _incoming(p, gp, row_theta(p.W, gp.W)), rhs)
    if p.shared:
        eq8 = ConservationReport.not_applicable("gate_eq8", l, "U and V are shared with W")
    else:
        eq8 = ConservationReport(
            "gate_eq8", l, row_theta(p.U, gp.U) + row_theta(p.V, gp.V), att
        )
    return eq7, eq8


def conservation_residual_mlp(params, grads, l: int) -> ConservationReport:
    _check_layer(params, l)
    p, gp = params[l], grads[l]
    if not isinstance(p, MlpLayerParams):
        raise TypeError(f"layer {l} is not a perceptron layer")
    if l == len(params) - 1:
        return ConservationReport.not_applicable("mlp", l, "output layer has no successor")
    lhs = _incoming(p, gp, row_theta(p.W, gp.W))
    return ConservationReport("mlp", l, lhs, next_layer_theta(params, grads, l))


def conservation_reports(params, grads, include_not_applicable: bool = False) -> list[ConservationReport]:
    """Every balance law of the network, layer by layer."""
    out: list[ConservationReport] = []
    for l, p in enumerate(params):
        if isinstance(p, GatLayerParams):
            reps = [conservation_residual_gat(params, grads, l)]
        elif isinstance(p, GateLayerParams):
            reps = list(conservation_residual_gate(params, grads, l))
        else:
            reps = [conservation_residual_mlp(params, grads, l)]
        out.extend(r for r in reps if include_not_applicable or r.applicable)
    return out
