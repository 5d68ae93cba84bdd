"""Full-batch Adam training with accuracy, α_vv, balance-law and relative-change traces."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .conservation import conservation_reports
from .initialization import InitPolicy, init_network
from .layers import LayerParams, NetworkSpec, flatten_params, network_forward, unflatten_params


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    max_epochs: int = 10000
    eval_every: int = 1
    # cadences below: 0 disables; otherwise the last epoch is always included
    trace_alpha_every: int = 100
    conservation_check_every: int = 0
    relative_change_every: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if isinstance(self.adam, dict):
            self.adam = AdamConfig(**self.adam)
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        for name in ("trace_alpha_every", "conservation_check_every", "relative_change_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# Adam ------------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
    cfg: AdamConfig = AdamConfig(),
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r} at step {state.step}")
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, theta in params.items():
        g = grads[name]
        m = cfg.beta1 * state.m.get(name, 0.0) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(name, 0.0) + (1.0 - cfg.beta2) * g * g
        m_new[name], v_new[name] = m, v
        new_params[name] = theta - learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return new_params, AdamState(m_new, v_new, t)


# relative change ---------------------------------------------------------------------


def relative_change(params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """``grad / theta`` elementwise, defined as 0 where ``theta == 0``."""
    out = {}
    for name, theta in params.items():
        theta = np.asarray(theta, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        nz = theta != 0
        d = np.zeros_like(theta)
        d[nz] = g[nz] / theta[nz]
        out[name] = d
    return out


def summarize_relative_change(delta: dict[str, np.ndarray]) -> dict[str, tuple[float, float]]:
    """``{name: (max |Δ|, mean |Δ|)}``."""
    return {k: (float(np.abs(d).max()), float(np.abs(d).mean())) for k, d in delta.items()}


# trace -----------------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    test_acc: float


@dataclass
class ConservationRow:
    epoch: int
    layer: int
    unit: int
    law: str
    lhs: float
    rhs: float
    rel_residual: float


@dataclass
class RelativeChangeRow:
    epoch: int
    param: str
    max_abs: float
    mean_abs: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    alpha_epochs: list[int] = field(default_factory=list)
    alpha_vv: list[list[np.ndarray]] = field(default_factory=list)
    conservation: list[ConservationRow] = field(default_factory=list)
    relative_change: list[RelativeChangeRow] = field(default_factory=list)
    status: str = "completed"
    message: str = ""
    final_params: list[LayerParams] | None = None
    final_logits: np.ndarray | None = None
    final_hidden: list[np.ndarray] = field(default_factory=list)

    @property
    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.records], dtype=np.int64)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def _at(self, idx: int, selector: str) -> dict:
        r = self.records[idx]
        return {"selector": selector, "epoch": r.epoch, "train_acc": r.train_acc,
                "val_acc": r.val_acc, "test_acc": r.test_acc, "loss": r.loss}

    def at_min_train_loss(self) -> dict:
        """Metrics at the first epoch attaining the minimum training loss."""
        return self._at(int(np.argmin(self.column("loss"))), "min_train_loss")

    def at_max_val_acc(self) -> dict:
        """Metrics at the first epoch attaining the maximum validation accuracy."""
        return self._at(int(np.argmax(self.column("val_acc"))), "max_val_acc")

    def at_max_train_acc(self) -> dict:
        return self._at(int(np.argmax(self.column("train_acc"))), "max_train_acc")

    def final(self) -> dict:
        return self._at(len(self.records) - 1, "final")

    def max_conservation_residual(self, laws=None) -> float:
        vals = [r.rel_residual for r in self.conservation if laws is None or r.law in laws]
        return max(vals) if vals else 0.0


# training loop ------------------------------------------------------------------------------


def _accuracy(pred: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    return float(np.mean(pred[mask] == labels[mask])) if mask.any() else float("nan")


def _due(epoch: int, every: int, last: int) -> bool:
    return every > 0 and (epoch % every == 0 or epoch == last)


def train(
    spec: NetworkSpec,
    init_policy: InitPolicy | list[LayerParams],
    dataset,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainTrace:
    """Train ``spec`` on ``dataset`` (graph, features, labels and three masks).

    ``init_policy`` may also be a ready list of layer parameters.  A
    non-finite loss or gradient stops training; the trace then has
    ``status == "diverged"`` and keeps everything recorded so far.
    ``on_epoch`` receives one JSON-serializable dict per recorded epoch.
    """
    g, X, y = dataset.graph, np.asarray(dataset.features, dtype=np.float64), np.asarray(dataset.labels)
    tr, va, te = dataset.train_mask, dataset.val_mask, dataset.test_mask
    if isinstance(init_policy, InitPolicy):
        template = init_network(spec, X.shape[1], init_policy)
    else:
        template = init_policy
    flat = {k: np.array(v, dtype=np.float64) for k, v in flatten_params(template).items()}
    state = AdamState()
    trace = TrainTrace()
    last = cfg.max_epochs - 1
    fp = None
    for epoch in range(cfg.max_epochs):
        params = unflatten_params(template, flat)
        fp = network_forward(spec, params, X, g)
        loss = ad.softmax_cross_entropy(fp.logits, y, tr)
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            trace.status, trace.message = "diverged", f"non-finite loss at epoch {epoch}"
            break
        grads = fp.tape.backward(loss)

        if epoch % cfg.eval_every == 0 or epoch == last:
            pred = np.argmax(fp.logits.value, axis=1)
            rec = EpochRecord(epoch, loss_val, _accuracy(pred, y, tr), _accuracy(pred, y, va), _accuracy(pred, y, te))
            trace.records.append(rec)
            if on_epoch is not None:
                on_epoch(asdict(rec))
        if _due(epoch, cfg.trace_alpha_every, last):
            trace.alpha_epochs.append(epoch)
            trace.alpha_vv.append(fp.alpha_vv(g))
        if _due(epoch, cfg.conservation_check_every, last):
            gparams = unflatten_params(template, grads)
            for rep in conservation_reports(params, gparams):
                trace.conservation.extend(
                    ConservationRow(epoch, rep.layer, i, rep.law, lhs, rhs, rel)
                    for i, lhs, rhs, rel in rep.rows()
                )
        if _due(epoch, cfg.relative_change_every, last):
            for name, (mx, mean) in summarize_relative_change(relative_change(flat, grads)).items():
                trace.relative_change.append(RelativeChangeRow(epoch, name, mx, mean))

        try:
            flat, state = adam_step(flat, grads, state, cfg.learning_rate, cfg.adam)
        except FloatingPointError as exc:
            trace.status, trace.message = "diverged", str(exc)
            break
    trace.final_params = unflatten_params(template, flat)
    if fp is not None:
        trace.final_logits = fp.logits.value
        trace.final_hidden = fp.hidden
    return trace
