"""JSON-configured experiment sweeps: validation, run matrix, per-run artifacts and aggregation."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .diagnostics import alpha_histogram_rows, smoothness_energy
from .initialization import ATTENTION_SCHEMES, MATRIX_SCHEMES, InitPolicy
from .layers import KINDS, NetworkSpec
from .synth import (
    NeighborDependentRecipe,
    gen_neighbor_dependent,
    gen_self_sufficient_er,
    gen_self_sufficient_on_structure,
    load_dataset,
)
from .training import AdamConfig, TrainConfig, train

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GATELAB_OUTPUT_ROOT"
ARCHITECTURES = KINDS + ("mlp_gat",)
DATASET_KINDS = ("self_sufficient_er", "neighbor_dependent", "self_sufficient_on_structure", "files")
SELECTORS = ("min_train_loss", "max_val_acc", "max_train_acc", "final")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# configuration -----------------------------------------------------------------------------------


_DATASET_FIELDS = {
    "self_sufficient_er": {"n": int, "p": float, "num_classes": int, "seed": int},
    "neighbor_dependent": {"n": int, "p": float, "d": int, "k": int, "C": int, "seed": int,
                           "graph_seed": int, "feature_seed": int, "gat_seed": int,
                           "kmeans_seed": int, "split_seed": int},
    "self_sufficient_on_structure": {"edge_list": str, "labels": str, "label_path": str,
                                     "num_classes": int, "seed": int},
    "files": {"path": str},
}
_REQUIRED = {"self_sufficient_on_structure": ("edge_list",), "files": ("path",)}


def _typed(path: str, value, typ):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(path, f"expected {typ.__name__}, got {type(value).__name__}")
    return value


def _block(cfg: dict, key: str, path: str) -> dict:
    if key not in cfg:
        raise ConfigError(f"{path}{key}", "missing block")
    if not isinstance(cfg[key], dict):
        raise ConfigError(f"{path}{key}", "expected an object")
    return cfg[key]


def _reject_unknown(d: dict, allowed, path: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", "unknown field")


def _int_list(d: dict, key: str, path: str, minimum: int | None = None) -> list[int]:
    p = f"{path}.{key}"
    if key not in d:
        raise ConfigError(p, "missing field")
    vals = d[key]
    if not isinstance(vals, list) or not vals:
        raise ConfigError(p, "expected a non-empty list")
    for i, v in enumerate(vals):
        _typed(f"{p}[{i}]", v, int)
        if minimum is not None and v < minimum:
            raise ConfigError(f"{p}[{i}]", f"must be >= {minimum}")
    if len(set(vals)) != len(vals):
        raise ConfigError(p, "duplicate entries")
    return vals


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    hidden: int
    bias: bool
    init: dict
    network: dict | None
    training: TrainConfig
    architectures: list[str]
    depths: list[int]
    seeds: list[int]
    output_dir: str
    raw: dict = field(default_factory=dict, repr=False)

    def resolved_output_dir(self) -> Path:
        out = Path(self.output_dir)
        if not out.is_absolute():
            out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / out
        return out

    def run_matrix(self) -> list["RunSpec"]:
        runs = []
        for arch in self.architectures:
            for depth in self.depths:
                for seed in self.seeds:
                    runs.append(RunSpec(arch, depth, seed))
        return runs


def validate_config(cfg) -> ExperimentConfig:
    """Check every field up front; raise :class:`ConfigError` naming the offending path."""
    if not isinstance(cfg, dict):
        raise ConfigError("$", "config must be a JSON object")
    _reject_unknown(cfg, ("name", "dataset", "model", "training", "sweep", "output_dir"), "$")
    name = _typed("$.name", cfg.get("name", "experiment"), str)

    ds = _block(cfg, "dataset", "$.")
    kind = ds.get("kind")
    if kind not in DATASET_KINDS:
        raise ConfigError("$.dataset.kind", f"must be one of {DATASET_KINDS}")
    schema = _DATASET_FIELDS[kind]
    _reject_unknown(ds, ("kind",) + tuple(schema), "$.dataset")
    dataset = {"kind": kind}
    for key, typ in schema.items():
        if key in ds and ds[key] is not None:
            dataset[key] = _typed(f"$.dataset.{key}", ds[key], typ)
    for key in _REQUIRED.get(kind, ()):
        if key not in dataset:
            raise ConfigError(f"$.dataset.{key}", "missing field")
    if "p" in dataset and not 0.0 <= dataset["p"] <= 1.0:
        raise ConfigError("$.dataset.p", "must lie in [0, 1]")
    for key in ("n", "num_classes", "C", "d", "k"):
        if key in dataset and dataset[key] < 1:
            raise ConfigError(f"$.dataset.{key}", "must be >= 1")
    if dataset.get("labels", "randomized") not in ("original", "randomized"):
        raise ConfigError("$.dataset.labels", "must be 'original' or 'randomized'")

    model = cfg.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("$.model", "expected an object")
    _reject_unknown(model, ("hidden", "bias", "init", "network"), "$.model")
    hidden = _typed("$.model.hidden", model.get("hidden", 64), int)
    if hidden < 1:
        raise ConfigError("$.model.hidden", "must be >= 1")
    bias = _typed("$.model.bias", model.get("bias", False), bool)
    init = model.get("init", {})
    if not isinstance(init, dict):
        raise ConfigError("$.model.init", "expected an object")
    _reject_unknown(init, ("matrix_scheme", "attention_scheme"), "$.model.init")
    if init.get("matrix_scheme", MATRIX_SCHEMES[0]) not in MATRIX_SCHEMES:
        raise ConfigError("$.model.init.matrix_scheme", f"must be one of {MATRIX_SCHEMES}")
    if init.get("attention_scheme") not in (None,) + ATTENTION_SCHEMES:
        raise ConfigError("$.model.init.attention_scheme", f"must be one of {ATTENTION_SCHEMES} or null")
    network = model.get("network")
    if network is not None:
        try:
            NetworkSpec.from_dict(network)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("$.model.network", str(exc)) from None

    tr = cfg.get("training", {})
    if not isinstance(tr, dict):
        raise ConfigError("$.training", "expected an object")
    known = {f.name for f in fields(TrainConfig)}
    _reject_unknown(tr, known, "$.training")
    tr = dict(tr)
    if "adam" in tr:
        if not isinstance(tr["adam"], dict):
            raise ConfigError("$.training.adam", "expected an object")
        _reject_unknown(tr["adam"], {f.name for f in fields(AdamConfig)}, "$.training.adam")
        tr["adam"] = AdamConfig(**{k: _typed(f"$.training.adam.{k}", v, float) for k, v in tr["adam"].items()})
    for key, val in tr.items():
        if key != "adam":
            tr[key] = _typed(f"$.training.{key}", val, float if key == "learning_rate" else int)
    try:
        training = TrainConfig(**tr)
    except ValueError as exc:
        raise ConfigError("$.training", str(exc)) from None

    sw = _block(cfg, "sweep", "$.")
    _reject_unknown(sw, ("architectures", "depths", "seeds"), "$.sweep")
    if network is not None:
        architectures, depths = ["custom"], [len(network["layers"])]
    else:
        archs = sw.get("architectures")
        if not isinstance(archs, list) or not archs:
            raise ConfigError("$.sweep.architectures", "expected a non-empty list")
        for i, a in enumerate(archs):
            if a not in ARCHITECTURES:
                raise ConfigError(f"$.sweep.architectures[{i}]", f"must be one of {ARCHITECTURES}")
        if len(set(archs)) != len(archs):
            raise ConfigError("$.sweep.architectures", "duplicate entries")
        architectures, depths = archs, _int_list(sw, "depths", "$.sweep", minimum=1)
    seeds = _int_list(sw, "seeds", "$.sweep", minimum=0)

    if "output_dir" not in cfg:
        raise ConfigError("$.output_dir", "missing field")
    output_dir = _typed("$.output_dir", cfg["output_dir"], str)
    return ExperimentConfig(name, dataset, hidden, bias, init, network, training, architectures,
                            depths, seeds, output_dir, raw=copy.deepcopy(cfg))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON: {exc}") from None
    return validate_config(raw)


# runs -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSpec:
    architecture: str
    depth: int
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.architecture}_L{self.depth}_s{self.seed}"


def init_seed(run: RunSpec) -> int:
    """Initialization seed derived from (seed, architecture, depth)."""
    ss = np.random.SeedSequence([run.seed, zlib.crc32(run.architecture.encode()), run.depth])
    return int(ss.generate_state(1)[0])


def build_network(cfg: ExperimentConfig, run: RunSpec, num_classes: int) -> NetworkSpec:
    if cfg.network is not None:
        return NetworkSpec.from_dict(cfg.network)
    if run.architecture == "mlp_gat":
        return NetworkSpec.alternating(run.depth, num_classes, cfg.hidden, bias=cfg.bias)
    return NetworkSpec.uniform(run.architecture, run.depth, num_classes, cfg.hidden, bias=cfg.bias)


def build_dataset(spec: dict, seed: int):
    """Dataset for a sweep seed; a ``seed`` in the block pins it across the sweep."""
    d = dict(spec)
    kind = d.pop("kind")
    seed = d.pop("seed", seed)
    if kind == "self_sufficient_er":
        return gen_self_sufficient_er(d.get("n", 1000), d.get("p", 0.01), d.get("num_classes", 8), seed)
    if kind == "neighbor_dependent":
        return gen_neighbor_dependent(NeighborDependentRecipe(seed=seed, **d))
    if kind == "self_sufficient_on_structure":
        return gen_self_sufficient_on_structure(
            d["edge_list"], d.get("labels", "randomized"), seed, d.get("label_path"), d.get("num_classes", 7)
        )
    return load_dataset(d["path"])


def atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    """Shortest round-tripping text for a float; stable across runs."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


SUMMARY_HEADER = ("run_id", "architecture", "depth", "seed", "status", "selector", "epoch",
                  "loss", "train_acc", "val_acc", "test_acc")


def write_run_artifacts(run_dir: Path, run: RunSpec, trace, dataset) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    recs = trace.records
    atomic_write(run_dir / "trace.jsonl", "".join(
        json.dumps({"epoch": r.epoch, "loss": r.loss, "train_acc": r.train_acc,
                    "val_acc": r.val_acc, "test_acc": r.test_acc}) + "\n" for r in recs))
    atomic_write(run_dir / "metrics.csv", csv_text(
        ("epoch", "loss", "train_acc", "val_acc", "test_acc"),
        ((r.epoch, _num(r.loss), _num(r.train_acc), _num(r.val_acc), _num(r.test_acc)) for r in recs)))
    rows = []
    if recs:
        for sel in (trace.at_min_train_loss(), trace.at_max_val_acc(), trace.at_max_train_acc(), trace.final()):
            rows.append((run.run_id, run.architecture, run.depth, run.seed, trace.status, sel["selector"],
                         sel["epoch"], _num(sel["loss"]), _num(sel["train_acc"]), _num(sel["val_acc"]),
                         _num(sel["test_acc"])))
    atomic_write(run_dir / "summary.csv", csv_text(SUMMARY_HEADER, rows))
    atomic_write(run_dir / "alpha_hist.csv", csv_text(
        ("epoch", "layer", "bin_lo", "bin_hi", "count"),
        ((e, l, _num(lo), _num(hi), c) for e, l, lo, hi, c in alpha_histogram_rows(trace.alpha_epochs, trace.alpha_vv))))
    atomic_write(run_dir / "conservation.csv", csv_text(
        ("epoch", "layer", "unit", "law", "lhs", "rhs", "rel_residual"),
        ((c.epoch, c.layer, c.unit, c.law, _num(c.lhs), _num(c.rhs), _num(c.rel_residual)) for c in trace.conservation)))
    atomic_write(run_dir / "relative_change.csv", csv_text(
        ("epoch", "param", "max_abs", "mean_abs"),
        ((c.epoch, c.param, _num(c.max_abs), _num(c.mean_abs)) for c in trace.relative_change)))
    energy = []
    for tag, H in (("input", dataset.features), ("final", trace.final_logits)):
        if H is not None:
            for mode in ("all_pairs", "adjacent_pairs"):
                energy.append((tag, mode, _num(smoothness_energy(H, dataset.graph, mode))))
    atomic_write(run_dir / "energy.csv", csv_text(("tag", "mode", "value"), energy))


def execute_run(cfg: ExperimentConfig, run: RunSpec, out_dir: Path, render: bool = True) -> dict:
    """Train one cell of the run matrix and write its artifacts; never raises."""
    run_dir = out_dir / run.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    failed = run_dir / "FAILED"
    if failed.exists():
        failed.unlink()
    resolved = {"run_id": run.run_id, "architecture": run.architecture, "depth": run.depth,
                "seed": run.seed, "init_seed": init_seed(run), "experiment": cfg.raw}
    atomic_write(run_dir / "config.json", json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    try:
        dataset = build_dataset(cfg.dataset, run.seed)
        spec = build_network(cfg, run, dataset.num_classes)
        policy = InitPolicy(seed=init_seed(run), **cfg.init)
        resolved["network"] = spec.to_dict()
        resolved["init"] = policy.to_dict()
        resolved["dataset_provenance"] = dataset.provenance
        atomic_write(run_dir / "config.json", json.dumps(resolved, indent=1, sort_keys=True, default=str) + "\n")
        trace = train(spec, policy, dataset, cfg.training)
        write_run_artifacts(run_dir, run, trace, dataset)
        if render:
            from .plots import render_plots

            with warnings.catch_warnings():
                if cfg.training.trace_alpha_every == 0:  # empty histogram is intended
                    warnings.filterwarnings("ignore", message=".*alpha_hist.csv has no epochs")
                render_plots(run_dir)
        if trace.status != "completed":
            atomic_write(failed, trace.message + "\n")
            return {"run_id": run.run_id, "status": trace.status, "message": trace.message}
        return {"run_id": run.run_id, "status": "completed"}
    except Exception as exc:  # the failure marker carries the diagnostic
        log.exception("run %s failed", run.run_id)
        atomic_write(failed, f"{type(exc).__name__}: {exc}\n")
        return {"run_id": run.run_id, "status": "failed", "message": str(exc)}


def _execute_star(args):
    return execute_run(*args)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> tuple[Path, list[dict]]:
    out_dir = cfg.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(out_dir / "experiment.json", json.dumps(cfg.raw, indent=1, sort_keys=True) + "\n")
    jobs = [(cfg, run, out_dir) for run in cfg.run_matrix()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute_star, jobs))
    else:
        results = [_execute_star(j) for j in jobs]
    aggregate_sweep(out_dir)
    return out_dir, results


# aggregation -------------------------------------------------------------------------------


def report_confidence(values) -> tuple[float, float | None]:
    """Mean and 95% normal-approximation half-width ``1.96 * s / sqrt(k)``.

    ``s`` is the sample standard deviation.  A single value gives ``None``
    for the half-width.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("need at least one value")
    mean = float(v.mean())
    if v.size < 2:
        return mean, None
    return mean, float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


SWEEP_HEADER = ("architecture", "depth", "selector", "seeds", "mean_test_acc", "ci95_half_width")


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_sweep(sweep_dir) -> Path:
    """Mean test accuracy (percent) ± 95% CI over seeds for every (architecture, depth, selector)."""
    sweep_dir = Path(sweep_dir)
    groups: dict[tuple[str, int, str], list[float]] = {}
    for summary in sorted(sweep_dir.glob("*/summary.csv")):
        if (summary.parent / "FAILED").exists():
            continue
        for row in read_summary(summary):
            key = (row["architecture"], int(row["depth"]), row["selector"])
            groups.setdefault(key, []).append(100.0 * float(row["test_acc"]))
    rows = []
    order = {s: i for i, s in enumerate(SELECTORS)}
    for (arch, depth, sel), accs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], order[kv[0][2]])):
        mean, hw = report_confidence(accs)
        rows.append((arch, depth, sel, len(accs), f"{mean:.6f}", "n/a" if hw is None else f"{hw:.6f}"))
    out = sweep_dir / "sweep_summary.csv"
    atomic_write(out, csv_text(SWEEP_HEADER, rows))
    return out
