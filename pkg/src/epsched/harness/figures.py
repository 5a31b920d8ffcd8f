"""CSV and SVG renderings of a record's curves.

Both outputs average over seeds. Coordinates are printed with fixed precision
so re-emitting the same record gives byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..errors import ConfigError
from .config import SCHEMA_VERSION
from .records import ExperimentRecord, write_csv

FORMATS = ("csv", "svg")
EPOCH_METRICS = ("val_clean_acc", "val_adv_acc_at_goal", "train_eps")


def mean_curve(rec: ExperimentRecord) -> tuple[list[float], list[float]]:
    grid = list(rec.results[0].curve.eps_grid)
    acc = np.mean([r.curve.accuracy for r in rec.results], axis=0)
    return grid, [float(a) for a in acc]


def mean_epoch_series(rec: ExperimentRecord, metric: str) -> tuple[list[int], list[float]]:
    epochs = [t.epoch for t in rec.results[0].trace]
    vals = np.array([[getattr(t, metric) for t in r.trace] for r in rec.results])
    with np.errstate(invalid="ignore"):
        # all-NaN columns (skipped evaluations) stay NaN
        mean = np.array([np.nan if np.all(np.isnan(c)) else np.nanmean(c) for c in vals.T])
    return epochs, [float(v) for v in mean]


def emit_curves(rec: ExperimentRecord, fmt: str, out_dir=None) -> list[Path]:
    if fmt not in FORMATS:
        raise ConfigError(f"unknown format {fmt!r}; choose from {FORMATS}")
    if not rec.complete:
        raise ConfigError(f"record {rec.name} is {rec.status}; nothing to plot")
    out = Path(out_dir) if out_dir is not None else rec.directory / "figures"
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        grid, acc = mean_curve(rec)
        curve_path = out / "curve.csv"
        write_csv(curve_path, ["schema_version", "eps", "metric", "value"],
                  [[SCHEMA_VERSION, e, "robust_accuracy", a] for e, a in zip(grid, acc)])
        rows = []
        series = {m: mean_epoch_series(rec, m) for m in EPOCH_METRICS}
        for i, epoch in enumerate(series[EPOCH_METRICS[0]][0]):
            rows += [[SCHEMA_VERSION, epoch, m, series[m][1][i]] for m in EPOCH_METRICS]
        epoch_path = out / "epochs.csv"
        write_csv(epoch_path, ["schema_version", "epoch", "metric", "value"], rows)
        return [curve_path, epoch_path]
    path = out / "curves.svg"
    path.write_text(render_svg(rec))
    return [path]


# -- svg --------------------------------------------------------------------

W, H = 760, 320
PANEL_W, PANEL_H = 300, 220
COLORS = ("#1f77b4", "#d62728", "#2ca02c")


def _panel(x0: float, y0: float, title: str, xlabel: str, xmax: float, series) -> list[str]:
    """Axes at (x0, y0) top-left; ``series`` is [(label, xs, ys)] with ys in [0, 1]."""
    xmax = xmax or 1.0

    def px(x):
        return x0 + PANEL_W * x / xmax

    def py(y):
        return y0 + PANEL_H * (1.0 - y)

    out = [
        f'<text x="{x0 + PANEL_W / 2:.2f}" y="{y0 - 12:.2f}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#000"/>',
        f'<text x="{x0 + PANEL_W / 2:.2f}" y="{y0 + PANEL_H + 32:.2f}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
    ]
    for v in (0.0, 0.5, 1.0):
        out.append(f'<text x="{x0 - 6:.2f}" y="{py(v) + 4:.2f}" text-anchor="end" font-size="10">{v:.1f}</text>')
        out.append(f'<text x="{px(v * xmax):.2f}" y="{y0 + PANEL_H + 14:.2f}" text-anchor="middle" font-size="10">{v * xmax:.4g}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = y0 + 14 + 16 * i
        out.append(f'<line x1="{x0 + PANEL_W - 110:.2f}" y1="{ly - 4:.2f}" x2="{x0 + PANEL_W - 92:.2f}" y2="{ly - 4:.2f}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x0 + PANEL_W - 88:.2f}" y="{ly:.2f}" font-size="11">{escape(label)}</text>')
    return out


def render_svg(rec: ExperimentRecord) -> str:
    grid, acc = mean_curve(rec)
    epochs, clean = mean_epoch_series(rec, "val_clean_acc")
    _, adv = mean_epoch_series(rec, "val_adv_acc_at_goal")
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="#fff"/>',
        *_panel(60, 40, "test accuracy vs eps", "eps", grid[-1], [("robust acc", grid, acc)]),
        *_panel(430, 40, "validation accuracy vs epoch", "epoch", max(epochs[-1], 1),
                [("clean", epochs, clean), (f"adv @ {rec.eps_goal:.4g}", epochs, adv)]),
        "</svg>",
    ]
    return "\n".join(body) + "\n"
