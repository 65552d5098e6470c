"""Attention heatmaps as standalone SVG.

Rows are hypothesis tokens, columns are premise tokens. Cell colour is a
linear ramp from white (weight 0) to a saturated blue (weight 1); each cell
carries a ``<title>`` tooltip with the weight to three decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .attention import AttentionRecord

SATURATED = (33, 102, 172)
CELL = 28
CHAR_W = 7.5
FONT = 12


@dataclass
class Heatmap:
    rows: list[str]
    cols: list[str]
    weights: np.ndarray  # [len(rows), len(cols)], clamped to [0, 1]

    def __post_init__(self):
        self.weights = np.clip(np.asarray(self.weights, dtype=np.float64).reshape(len(self.rows), len(self.cols)), 0, 1)

    @classmethod
    def from_record(cls, record: AttentionRecord, reverse: bool = False) -> "Heatmap":
        if reverse:
            return cls(list(record.premise), list(record.hypothesis), np.array(record.extra["weights_reverse"]))
        rows = list(record.hypothesis)
        weights = np.array(record.weights)
        if len(weights) == 1 and len(rows) > 1:
            # single attention row (last-output attention): label it by the whole hypothesis
            rows = [" ".join(rows)]
        return cls(rows, list(record.premise), weights)


def colour(weight: float) -> str:
    w = min(max(float(weight), 0.0), 1.0)
    r, g, b = (round(255 + w * (c - 255)) for c in SATURATED)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(heatmap: Heatmap, title: str | None = None) -> str:
    n_rows, n_cols = heatmap.weights.shape
    left = int(max((len(t) for t in heatmap.rows), default=1) * CHAR_W) + 10
    top = int(max((len(t) for t in heatmap.cols), default=1) * CHAR_W * 0.75) + 14 + (20 if title else 0)
    width, height = left + n_cols * CELL + 10, top + n_rows * CELL + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="{FONT}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="4" y="16" font-weight="bold">{escape(title)}</text>')
    for j, tok in enumerate(heatmap.cols):
        x = left + j * CELL + CELL / 2
        out.append(
            f'<text x="{x:.1f}" y="{top - 6}" transform="rotate(-45 {x:.1f} {top - 6})">{escape(tok)}</text>'
        )
    for i, tok in enumerate(heatmap.rows):
        y = top + i * CELL + CELL / 2 + FONT / 3
        out.append(f'<text x="{left - 6}" y="{y:.1f}" text-anchor="end">{escape(tok)}</text>')
        for j in range(n_cols):
            w = heatmap.weights[i, j]
            out.append(
                f'<rect class="cell" data-row="{i}" data-col="{j}" x="{left + j * CELL}" y="{top + i * CELL}" '
                f'width="{CELL}" height="{CELL}" fill="{colour(w)}" stroke="#cccccc" stroke-width="0.5">'
                f"<title>{escape(heatmap.rows[i])} / {escape(heatmap.cols[j])}: {w:.3f}</title></rect>"
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_attention(record: AttentionRecord, stem: str | Path) -> list[Path]:
    """``stem.json`` plus ``stem.svg`` (and ``stem.reverse.svg`` for two-way)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = [stem.with_suffix(".json")]
    written[0].write_text(json.dumps(record.to_json(), indent=2) + "\n")
    label = f"{record.variant}: predicted {record.predicted}" + (f", gold {record.gold}" if record.gold else "")
    svg = stem.with_suffix(".svg")
    svg.write_text(render_svg(Heatmap.from_record(record), label))
    written.append(svg)
    if "weights_reverse" in record.extra:
        rev = stem.with_suffix(".reverse.svg")
        rev.write_text(render_svg(Heatmap.from_record(record, reverse=True), label + " (reverse)"))
        written.append(rev)
    return written


def argmax_alignment(weights: Sequence[Sequence[float]]) -> list[int]:
    return [int(np.argmax(row)) for row in weights]
