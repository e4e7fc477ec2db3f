"""Deterministic SVG charts rendered straight from the metric CSVs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 800, 600
MARGIN = dict(left=80, right=150, top=50, bottom=60)

PALETTE = {
    "full": "#1f77b4",
    "k1": "#ff7f0e",
    "k2": "#2ca02c",
    "k3": "#d62728",
    "k4": "#9467bd",
    "k5": "#8c564b",
    "k6": "#e377c2",
    "k7": "#7f7f7f",
    "k8": "#bcbd22",
}
_FALLBACK = ("#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173")


class ChartSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ChartSpec:
    """``kind`` is ``"line"`` (one polyline per group) or ``"scatter"``
    (markers joined per group in row order, e.g. PCA trajectories)."""

    x: str
    y: str
    group: str = "model_tag"
    kind: str = "line"
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    where: tuple = ()          # ((column, value), ...) row filters

    def __post_init__(self):
        if self.kind not in ("line", "scatter"):
            raise ChartSchemaError(f"unknown chart kind {self.kind!r}")


def color_for(tag: str, order: list) -> str:
    if tag in PALETTE:
        return PALETTE[tag]
    extra = [t for t in order if t not in PALETTE]
    return _FALLBACK[extra.index(tag) % len(_FALLBACK)]


def _read(csv_path, spec: ChartSpec) -> dict:
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        needed = [spec.x, spec.y, spec.group] + [c for c, _ in spec.where]
        missing = [c for c in needed if c not in cols]
        if missing:
            raise ChartSchemaError(f"{csv_path}: missing columns {missing}; have {cols}")
        groups: dict = {}
        for row in reader:
            if any(row[c] != str(v) for c, v in spec.where):
                continue
            try:
                x, y = float(row[spec.x]), float(row[spec.y])
            except ValueError:
                continue            # missing values (e.g. undefined cosine)
            if (spec.logx and x <= 0) or (spec.logy and y <= 0):
                continue
            groups.setdefault(row[spec.group], []).append((x, y))
    return groups


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag * 10)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-12 * abs(hi):
        out.append(round(v, 12))
        v += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def render_svg(groups: dict, spec: ChartSpec) -> str:
    tx = (lambda v: math.log10(v)) if spec.logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if spec.logy else (lambda v: v)
    pts = [(tx(x), ty(y)) for g in groups.values() for x, y in g]
    if not pts:
        raise ChartSchemaError("no plottable rows")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(v):
        return L + (v - x0) / (x1 - x0) * (R - L)

    def py(v):
        return B - (v - y0) / (y1 - y0) * (B - T)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="28" text-anchor="middle" font-size="16">{escape(spec.title)}</text>',
           f'<rect x="{L}" y="{T}" width="{R - L}" height="{B - T}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1):
        label = _fmt(10 ** v) if spec.logx else _fmt(v)
        out.append(f'<line x1="{px(v):.2f}" y1="{B}" x2="{px(v):.2f}" y2="{B + 5}" stroke="black"/>')
        out.append(f'<text x="{px(v):.2f}" y="{B + 18}" text-anchor="middle">{label}</text>')
    for v in _ticks(y0, y1):
        label = _fmt(10 ** v) if spec.logy else _fmt(v)
        out.append(f'<line x1="{L - 5}" y1="{py(v):.2f}" x2="{L}" y2="{py(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{py(v) + 4:.2f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{(L + R) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">'
               f'{escape(spec.xlabel or spec.x)}</text>')
    out.append(f'<text x="20" y="{(T + B) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 20 {(T + B) / 2:.1f})">{escape(spec.ylabel or spec.y)}</text>')
    order = list(groups)
    for i, (tag, g) in enumerate(groups.items()):
        color = color_for(tag, order)
        coords = " ".join(f"{px(tx(x)):.2f},{py(ty(y)):.2f}" for x, y in g)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        if spec.kind == "scatter":
            for x, y in g:
                out.append(f'<circle cx="{px(tx(x)):.2f}" cy="{py(ty(y)):.2f}" r="3" fill="{color}"/>')
        ly = T + 15 + 20 * i
        out.append(f'<line x1="{R + 15}" y1="{ly}" x2="{R + 40}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{R + 46}" y="{ly + 4}">{escape(tag)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_chart(csv_path, spec: ChartSpec, svg_path=None) -> Path:
    """Render ``csv_path`` according to ``spec``; returns the SVG path."""
    svg_path = Path(svg_path) if svg_path else Path(csv_path).with_suffix(".svg")
    svg_path.write_text(render_svg(_read(csv_path, spec), spec))
    return svg_path


COS_FUNC = ChartSpec("step", "cos_func", title="Function-space cosine similarity to full training",
                     ylabel="cos_func")
COS_PARAM = ChartSpec("step", "cos_param", title="Parameter-space cosine similarity to full training",
                      ylabel="cos_param")
TRAIN_LOSS = ChartSpec("step", "train_loss", title="Training loss", ylabel="train loss", logy=True)
TEST_ACC = ChartSpec("step", "test_acc", title="Test accuracy", ylabel="test accuracy")
PCA = ChartSpec("pc1", "pc2", kind="scatter", title="2D PCA embedding of test logits")
