"""Minimal dependency-free SVG rendering of aggregated win-rate curves."""

import csv
from xml.sax.saxutils import escape

import numpy as np

from ..exceptions import ConfigurationError
from .metrics import smooth

AGGREGATE_HEADER = ["trainer", "env_steps", "median", "p25", "p75", "n_seeds"]
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def read_aggregate(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in AGGREGATE_HEADER if c not in header]
        if missing:
            raise ConfigurationError(f"aggregate CSV is missing column(s): {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise ConfigurationError(f"aggregate CSV {path} has no data rows")
    curves = {}
    for row in rows:
        c = curves.setdefault(row["trainer"], {"steps": [], "median": [], "p25": [], "p75": []})
        c["steps"].append(float(row["env_steps"]))
        for key in ("median", "p25", "p75"):
            c[key].append(float(row[key]))
    return curves


def render_curves(aggregate_csv, out_path, window=5, width=640, height=400):
    """Write one smoothed median line plus a 25-75 band per trainer."""
    curves = read_aggregate(aggregate_csv)
    left, right, top, bottom = 60, 20, 20, 50
    all_steps = np.concatenate([c["steps"] for c in curves.values()])
    x_min, x_max = float(all_steps.min()), float(all_steps.max())
    if x_max == x_min:
        x_max = x_min + 1.0

    def px(step):
        return left + (step - x_min) / (x_max - x_min) * (width - left - right)

    def py(value):
        return top + (1.0 - value) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<line x1="{left}" y1="{py(0)}" x2="{width - right}" y2="{py(0)}" stroke="black"/>',
        f'<line x1="{left}" y1="{py(0)}" x2="{left}" y2="{py(1)}" stroke="black"/>',
        f'<text x="{(left + width - right) / 2}" y="{height - 12}" text-anchor="middle" font-size="12">env_steps</text>',
        f'<text x="16" y="{(top + height - bottom) / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {(top + height - bottom) / 2})">win rate</text>',
    ]
    for k, (name, c) in enumerate(sorted(curves.items())):
        color = COLORS[k % len(COLORS)]
        steps = np.asarray(c["steps"])
        med, lo, hi = (smooth(c[key], window) for key in ("median", "p25", "p75"))
        if len(steps) == 1:
            parts.append(f'<circle cx="{px(steps[0]):.2f}" cy="{py(med[0]):.2f}" r="3" fill="{color}"/>')
        else:
            band = [(px(s), py(v)) for s, v in zip(steps, hi)] + [
                (px(s), py(v)) for s, v in zip(steps[::-1], lo[::-1])
            ]
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in band)
            parts.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
            line = " ".join(f"{px(s):.2f},{py(v):.2f}" for s, v in zip(steps, med))
            parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{width - right - 5}" y="{top + 15 * (k + 1)}" text-anchor="end" '
            f'font-size="12" fill="{color}">{escape(name)}</text>'
        )
    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return out_path
