"""Static SVG figures: metric curves and point-cloud scatter snapshots."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _svg(width: int, height: int, body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, count)


def line_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              width: int = 480, height: int = 320) -> str:
    """``series`` maps a legend label to (xs, ys)."""
    left, right, top, bottom = 60, 110, 30, 40
    pw, ph = width - left - right, height - top - bottom
    xs_all = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.zeros(1)
    ys_all = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.zeros(1)
    ys_all = ys_all[np.isfinite(ys_all)] if np.isfinite(ys_all).any() else np.zeros(1)
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(min(ys_all.min(), 0.0)), float(ys_all.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    body = [f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(y0, y1):
        body.append(f'<line x1="{left - 4}" y1="{sy(t):.1f}" x2="{left}" y2="{sy(t):.1f}" stroke="#444"/>')
        body.append(f'<text x="{left - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for t in _ticks(x0, x1):
        body.append(f'<text x="{sx(t):.1f}" y="{top + ph + 14}" text-anchor="middle">{t:.3g}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys) if np.isfinite(y))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 12 + 16 * i
        body.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{left + pw + 32}" y="{ly + 4}">{escape(str(label))}</text>')
    return _svg(width, height, body)


def history_plot(history: list, metric: str = "emd") -> str:
    series = {}
    for split in ("train", "val"):
        rows = [r for r in history if r["split"] == split]
        if rows:
            series[split] = ([r["epoch"] for r in rows], [r[metric] for r in rows])
    return line_plot(series, title=f"{metric.upper()} per epoch", xlabel="epoch", ylabel=metric)


def scatter_views(clouds: dict, title: str = "", size: int = 220, labels: dict = None) -> str:
    """Three orthographic views (x-y, x-z, y-z) per cloud, one row per cloud.

    ``labels`` optionally maps a cloud name to per-point integer ids used for
    colouring (e.g. surface ids).
    """
    views = ((0, 1, "x-y"), (0, 2, "x-z"), (1, 2, "y-z"))
    width, height = 3 * size + 100, len(clouds) * size + 30
    body = [f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    all_pts = np.concatenate([np.asarray(c, float) for c in clouds.values()]) if clouds else np.zeros((1, 3))
    lim = float(np.abs(all_pts).max()) or 1.0
    for row, (name, pts) in enumerate(clouds.items()):
        pts = np.asarray(pts, float)
        ids = None if labels is None else labels.get(name)
        y_off = 30 + row * size
        body.append(f'<text x="6" y="{y_off + size / 2}">{escape(str(name))}</text>')
        for col, (a, b, tag) in enumerate(views):
            x_off = 100 + col * size
            body.append(f'<rect x="{x_off + 4}" y="{y_off + 4}" width="{size - 8}" height="{size - 8}" '
                        f'fill="none" stroke="#bbb"/>')
            body.append(f'<text x="{x_off + 8}" y="{y_off + 16}" fill="#888">{tag}</text>')
            half = (size - 16) / 2
            cx, cy = x_off + size / 2, y_off + size / 2
            for i, p in enumerate(pts):
                color = PALETTE[int(ids[i]) % len(PALETTE)] if ids is not None else PALETTE[row % len(PALETTE)]
                body.append(f'<circle cx="{cx + p[a] / lim * half:.1f}" cy="{cy - p[b] / lim * half:.1f}" '
                            f'r="1.2" fill="{color}"/>')
    return _svg(width, height, body)
