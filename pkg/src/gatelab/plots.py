"""Hand-written SVG output: α_vv heatmaps per layer and training curves.

Output depends only on the CSV contents, so re-rendering is byte-identical.
"""

from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path

from .experiment import atomic_write

W, H = 480, 300
M_LEFT, M_RIGHT, M_TOP, M_BOTTOM = 56, 16, 28, 40


def _f(x: float) -> str:
    return f"{x:.2f}"


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">')
    t = f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="13">{title}</text>'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', t, *body, "</svg>"]) + "\n"


def _axes(xlabel: str, ylabel: str, xticks, yticks) -> list[str]:
    x0, y0, x1, y1 = M_LEFT, H - M_BOTTOM, W - M_RIGHT, M_TOP
    out = [f'<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>']
    for px, label in xticks:
        out.append(f'<text x="{_f(px)}" y="{y0 + 14}" text-anchor="middle">{label}</text>')
    for py, label in yticks:
        out.append(f'<text x="{x0 - 4}" y="{_f(py + 4)}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{(x0 + x1) / 2}" y="{H - 8}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{(y0 + y1) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {(y0 + y1) / 2})">{ylabel}</text>')
    return out


def alpha_heatmap_svg(layer: int, epochs: list[int], counts: dict[tuple[int, int], int], bins: int) -> str:
    """x = traced epoch, y = α_vv bin (0 at the bottom), darker = more nodes."""
    pw, ph = W - M_LEFT - M_RIGHT, H - M_TOP - M_BOTTOM
    cw, ch = pw / len(epochs), ph / bins
    body = []
    for j, e in enumerate(epochs):
        total = sum(counts.get((e, b), 0) for b in range(bins)) or 1
        for b in range(bins):
            c = counts.get((e, b), 0)
            if c == 0:
                continue
            shade = int(round(255 * (1.0 - c / total)))
            y = H - M_BOTTOM - (b + 1) * ch
            body.append(f'<rect x="{_f(M_LEFT + j * cw)}" y="{_f(y)}" width="{_f(cw)}" '
                        f'height="{_f(ch)}" fill="rgb({shade},{shade},255)"/>')
    step = max(1, len(epochs) // 6)
    xt = [(M_LEFT + (j + 0.5) * cw, str(epochs[j])) for j in range(0, len(epochs), step)]
    yt = [(H - M_BOTTOM - v * ph, f"{v:.1f}") for v in (0.0, 0.5, 1.0)]
    return _svg(body + _axes("epoch", "alpha_vv", xt, yt), f"alpha_vv distribution, layer {layer}")


def curves_svg(epochs: list[int], series: dict[str, list[float]], title: str, ylabel: str,
               lo: float, hi: float) -> str:
    pw, ph = W - M_LEFT - M_RIGHT, H - M_TOP - M_BOTTOM
    e0, e1 = epochs[0], max(epochs[-1], epochs[0] + 1)
    span = (hi - lo) or 1.0

    def px(e):
        return M_LEFT + (e - e0) / (e1 - e0) * pw

    def py(v):
        return H - M_BOTTOM - (min(max(v, lo), hi) - lo) / span * ph

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    body = []
    for k, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{_f(px(e))},{_f(py(v))}" for e, v in zip(epochs, vals))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{colors[k % 4]}" stroke-width="1.2"/>')
        body.append(f'<text x="{W - M_RIGHT - 4}" y="{M_TOP + 12 + 13 * k}" text-anchor="end" '
                    f'fill="{colors[k % 4]}">{name}</text>')
    xt = [(px(e), str(e)) for e in sorted({e0, (e0 + e1) // 2, e1})]
    yt = [(py(v), f"{v:.2g}") for v in (lo, (lo + hi) / 2, hi)]
    return _svg(body + _axes("epoch", ylabel, xt, yt), title)


def _read(path: Path) -> list[dict] | None:
    if not path.exists():
        warnings.warn(f"{path} missing; skipping", stacklevel=3)
        return None
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_plots(run_dir) -> list[Path]:
    """Write ``alpha_layer<l>.svg`` per layer plus ``accuracy.svg`` and ``loss.svg``."""
    run_dir = Path(run_dir)
    written: list[Path] = []
    rows = _read(run_dir / "alpha_hist.csv")
    if rows is not None:
        if not rows:
            warnings.warn(f"{run_dir / 'alpha_hist.csv'} has no epochs; no heatmap written", stacklevel=2)
        layers: dict[int, dict] = {}
        for r in rows:
            lay = layers.setdefault(int(r["layer"]), {"epochs": set(), "counts": {}, "edges": {}})
            e, lo = int(r["epoch"]), float(r["bin_lo"])
            lay["epochs"].add(e)
            lay["edges"].setdefault(lo, float(r["bin_hi"]))
            lay["counts"][(e, lo)] = int(r["count"])
        for l, lay in sorted(layers.items()):
            los = sorted(lay["edges"])
            index = {lo: b for b, lo in enumerate(los)}
            counts = {(e, index[lo]): c for (e, lo), c in lay["counts"].items()}
            path = run_dir / f"alpha_layer{l}.svg"
            atomic_write(path, alpha_heatmap_svg(l, sorted(lay["epochs"]), counts, len(los)))
            written.append(path)
    rows = _read(run_dir / "metrics.csv")
    if rows is not None:
        if not rows:
            warnings.warn(f"{run_dir / 'metrics.csv'} has no epochs; no curves written", stacklevel=2)
        else:
            ep = [int(r["epoch"]) for r in rows]
            acc = {k: [float(r[k]) for r in rows] for k in ("train_acc", "val_acc", "test_acc")}
            path = run_dir / "accuracy.svg"
            atomic_write(path, curves_svg(ep, acc, "accuracy", "accuracy", 0.0, 1.0))
            written.append(path)
            logl = [math.log10(max(float(r["loss"]), 1e-300)) for r in rows]
            lo, hi = math.floor(min(logl)), math.ceil(max(logl))
            path = run_dir / "loss.svg"
            atomic_write(path, curves_svg(ep, {"log10 train loss": logl}, "training loss",
                                          "log10 loss", lo, max(hi, lo + 1)))
            written.append(path)
    return written
