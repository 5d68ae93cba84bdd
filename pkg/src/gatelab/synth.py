"""Synthetic node-classification tasks.

Self-sufficient tasks label each node at random and feed the one-hot label
as its feature, so neighborhood information is pure noise.  Neighbor-dependent
tasks draw Gaussian features and label each node by clustering the output of
a random GAT that runs on a graph *without* self-loops, so a node's label is
driven by its neighbors rather than by its own features.
"""

from __future__ import annotations

import csv
import io
import json
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Graph, add_self_loops, erdos_renyi, read_edge_list, write_edge_list
from .initialization import xavier_uniform, xavier_uniform_vector
from .layers import GatLayerParams, layer_forward


@dataclass
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.num_nodes
        if self.features.shape[0] != n or self.labels.shape != (n,):
            raise ValueError("features and labels must have one row per node")
        masks = np.stack([self.train_mask, self.val_mask, self.test_mask]).astype(bool)
        if masks.shape != (3, n):
            raise ValueError("masks must be boolean arrays of length n")
        if (masks.sum(axis=0) > 1).any():
            raise ValueError("train/val/test masks overlap")
        self.train_mask, self.val_mask, self.test_mask = masks
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature value")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def split_2_1_1(n: int, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random train/val/test masks of sizes ``ceil(n/2)``, ``floor(n/4)`` and the rest."""
    if n < 4:
        raise ValueError("need at least 4 nodes for a 2:1:1 split")
    perm = np.random.default_rng(seed).permutation(n)
    n_tr, n_va = (n + 1) // 2, n // 4
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][perm[:n_tr]] = True
    masks[1][perm[n_tr : n_tr + n_va]] = True
    masks[2][perm[n_tr + n_va :]] = True
    return masks[0], masks[1], masks[2]


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[labels]


# k-means ---------------------------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse_history: list[float]
    iterations: int
    converged: bool


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (points**2).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plus_plus(points: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = ((points - centers[0]) ** 2).sum(1)
    for _ in range(1, C):
        total = closest.sum()
        # all points coincide with a center: any choice is as good as another
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=closest / total)
        centers.append(points[idx])
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(1))
    return np.array(centers)


def assign_to_centroids(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(_sq_dists(np.asarray(points, dtype=np.float64), centroids), axis=1)


def kmeans_fit(points, C: int, seed, max_iters: int = 300) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds until assignments stop changing."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if C < 1:
        raise ValueError("C must be >= 1")
    if C > n:
        raise ValueError(f"cannot form {C} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plus_plus(points, C, rng)
    labels = assign_to_centroids(points, centroids)
    sse = [float(((points - centroids[labels]) ** 2).sum())]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        for c in range(C):
            members = labels == c
            if members.any():  # an emptied cluster keeps its previous centroid
                centroids[c] = points[members].mean(0)
        new = assign_to_centroids(points, centroids)
        sse.append(float(((points - centroids[new]) ** 2).sum()))
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    return KMeansResult(labels, centroids, sse, it, converged)


def kmeans(points, C: int, seed, max_iters: int = 300) -> np.ndarray:
    return kmeans_fit(points, C, seed, max_iters).labels


# self-sufficient --------------------------------------------------------------------------


def _seq(seed, tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), tag])


def gen_self_sufficient(g: Graph, C: int, seed) -> Dataset:
    """Uniform random labels, one-hot features, 2:1:1 split; self-loops added."""
    if C < 2:
        raise ValueError("need at least 2 classes")
    labels = np.random.default_rng(_seq(seed, 0)).integers(0, C, g.num_nodes)
    masks = split_2_1_1(g.num_nodes, _seq(seed, 1))
    prov = {"kind": "self_sufficient", "num_classes": C, "seed": int(seed)}
    return Dataset(add_self_loops(g), one_hot(labels, C), labels, *masks, provenance=prov)


def gen_self_sufficient_er(n: int, p: float, C: int, seed) -> Dataset:
    ds = gen_self_sufficient(erdos_renyi(n, p, _seq(seed, 2)), C, seed)
    ds.provenance.update({"structure": "erdos_renyi", "n": n, "p": p})
    return ds


def _read_labels(path) -> np.ndarray:
    with open(path) as fh:
        vals = [line.strip().split(",")[-1] for line in fh if line.strip()]
    if vals and not vals[0].lstrip("-").isdigit():
        vals = vals[1:]  # header row
    return np.array([int(v) for v in vals], dtype=np.int64)


def gen_self_sufficient_on_structure(
    edge_list_path,
    labels: str = "randomized",
    seed=0,
    label_path=None,
    num_classes: int = 7,
) -> Dataset:
    """One-hot-label features on a stored structure.

    ``labels="original"`` reads one integer label per node from ``label_path``
    (plain or ``node,label`` CSV); ``"randomized"`` draws ``num_classes``
    uniform labels.
    """
    g = read_edge_list(edge_list_path)
    if labels == "original":
        if label_path is None or not os.path.exists(label_path):
            raise FileNotFoundError(f"original-label mode needs a label file, got {label_path!r}")
        y = _read_labels(label_path)
        if y.shape != (g.num_nodes,):
            raise ValueError(f"label file has {y.size} entries for {g.num_nodes} nodes")
        if y.min() < 0:
            raise ValueError("labels must be non-negative")
        C = int(y.max()) + 1
    elif labels == "randomized":
        C = num_classes
        y = np.random.default_rng(_seq(seed, 0)).integers(0, C, g.num_nodes)
    else:
        raise ValueError("labels must be 'original' or 'randomized'")
    masks = split_2_1_1(g.num_nodes, _seq(seed, 1))
    prov = {"kind": "self_sufficient_on_structure", "labels": labels, "num_classes": C,
            "seed": int(seed), "edge_list": str(edge_list_path)}
    return Dataset(add_self_loops(g), one_hot(y, C), y, *masks, provenance=prov)


# neighbor-dependent -------------------------------------------------------------------------


@dataclass
class NeighborDependentRecipe:
    n: int = 1000
    p: float = 0.01
    d: int = 2
    k: int = 1
    C: int = 2
    seed: int = 0
    # per-stage seeds; None derives them from ``seed``
    graph_seed: int | None = None
    feature_seed: int | None = None
    gat_seed: int | None = None
    kmeans_seed: int | None = None
    split_seed: int | None = None
    min_cluster_fraction: float = 0.10
    max_reseeds: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.d < 1 or self.C < 1 or self.n < 4:
            raise ValueError("need d >= 1, C >= 1 and n >= 4")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def stage_seed(self, stage: str):
        tags = {"graph": 0, "feature": 1, "gat": 2, "kmeans": 3, "split": 4}
        own = getattr(self, f"{stage}_seed")
        if own is not None:
            return int(own)
        return int(_seq(self.seed, 10 + tags[stage]).generate_state(1)[0])

    def to_dict(self) -> dict:
        return asdict(self)


def labeling_network(d: int, k: int, seed: int) -> list[GatLayerParams]:
    """``k`` unshared GAT layers of width ``d`` with every parameter Xavier-uniform."""
    layers = []
    for l in range(k):
        ss = [np.random.SeedSequence(int(seed), spawn_key=(l, j)) for j in range(3)]
        layers.append(GatLayerParams(xavier_uniform(d, d, ss[0]), xavier_uniform(d, d, ss[1]),
                                     xavier_uniform_vector(d, ss[2])))
    return layers


def labeling_embedding(g: Graph, X: np.ndarray, layers: list[GatLayerParams]) -> np.ndarray:
    """Post-activation output of the labeling GAT (LeakyReLU 0.2 everywhere).

    ``g`` is used as given; nodes with no incoming edge get a zero row.
    """
    H = np.asarray(X, dtype=np.float64)
    for p in layers:
        H = layer_forward(p, H, g, "leaky_relu", 0.2, 0.2, require_self_loops=False).value
    return H


def gen_neighbor_dependent(r: NeighborDependentRecipe) -> Dataset:
    g0 = erdos_renyi(r.n, r.p, r.stage_seed("graph"))
    X = np.random.default_rng(r.stage_seed("feature")).standard_normal((r.n, r.d))
    isolated = np.flatnonzero(g0.degrees == 0)
    active = np.setdiff1d(np.arange(r.n), isolated)
    if active.size < r.C:
        raise ValueError("too few non-isolated nodes to cluster")

    # a degenerate draw advances both the labeling network and the k-means seed
    gat_base, km_base = r.stage_seed("gat"), r.stage_seed("kmeans")
    for attempt in range(r.max_reseeds + 1):
        emb = labeling_embedding(g0, X, labeling_network(r.d, r.k, gat_base + attempt))
        fit = kmeans_fit(emb[active], r.C, km_base + attempt)
        labels = np.empty(r.n, dtype=np.int64)
        labels[active] = fit.labels
        labels[isolated] = assign_to_centroids(np.zeros((isolated.size, r.d)), fit.centroids)
        if np.bincount(labels, minlength=r.C).min() >= r.min_cluster_fraction * r.n:
            break
    else:
        warnings.warn(f"no cluster draw reached {r.min_cluster_fraction:.0%} per class "
                      f"after {r.max_reseeds + 1} attempts; keeping the last one")
    masks = split_2_1_1(r.n, r.stage_seed("split"))
    prov = {
        "kind": "neighbor_dependent",
        "recipe": r.to_dict(),
        "labeling_output": "post_activation",
        "isolated_nodes": isolated.tolist(),
        "labeling_draws": attempt + 1,
        "kmeans_sse": fit.sse_history[-1],
        "kmeans_centroids": fit.centroids.tolist(),
    }
    return Dataset(add_self_loops(g0), X, labels, *masks, provenance=prov)


# serialization ---------------------------------------------------------------------------------


def _atomic_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def save_dataset(ds: Dataset, directory) -> None:
    """Edge list, ``features.csv``, ``labels.csv``, ``masks.csv`` and ``provenance.json``."""
    os.makedirs(directory, exist_ok=True)
    write_edge_list(ds.graph, os.path.join(directory, "graph.txt"))
    d = ds.features.shape[1]
    _atomic_text(os.path.join(directory, "features.csv"),
                 _csv_text([f"f{j}" for j in range(d)], ([repr(float(x)) for x in row] for row in ds.features)))
    _atomic_text(os.path.join(directory, "labels.csv"),
                 _csv_text(["node", "label"], enumerate(ds.labels.tolist())))
    _atomic_text(os.path.join(directory, "masks.csv"),
                 _csv_text(["node", "train", "val", "test"],
                           ((v, int(a), int(b), int(c)) for v, (a, b, c) in
                            enumerate(zip(ds.train_mask, ds.val_mask, ds.test_mask)))))
    _atomic_text(os.path.join(directory, "provenance.json"),
                 json.dumps(ds.provenance, sort_keys=True, indent=1, default=str) + "\n")


def load_dataset(directory) -> Dataset:
    g = read_edge_list(os.path.join(directory, "graph.txt"))
    with open(os.path.join(directory, "features.csv")) as fh:
        rows = list(csv.reader(fh))[1:]
    X = np.array([[float(x) for x in r] for r in rows], dtype=np.float64)
    y = _read_labels(os.path.join(directory, "labels.csv"))
    with open(os.path.join(directory, "masks.csv")) as fh:
        m = np.array([[int(x) for x in r[1:]] for r in list(csv.reader(fh))[1:]], dtype=bool)
    with open(os.path.join(directory, "provenance.json")) as fh:
        prov = json.load(fh)
    return Dataset(g, X, y, m[:, 0], m[:, 1], m[:, 2], provenance=prov)
