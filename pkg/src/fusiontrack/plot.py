"""Minimal static SVG output: trajectory overlays and error CDF curves."""

from __future__ import annotations

from typing import Mapping
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .geometry import Arena

PALETTE = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")
WIDTH = 480
HEIGHT = 480
PAD = 40


def _polyline(xs, ys, color: str, width: float = 1.0) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"/>')


def _legend(names, y0: float) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = y0 + 14 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{PAD + 8}" y1="{y}" x2="{PAD + 28}" y2="{y}" stroke="{color}"/>')
        out.append(f'<text x="{PAD + 32}" y="{y + 4}" font-size="11">{escape(name)}</text>')
    return out


def _document(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">')
    return "\n".join([head, f"<title>{escape(title)}</title>",
                      f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
                     + body + ["</svg>"]) + "\n"


def trajectory_svg(arena: Arena, tracks: Mapping[str, np.ndarray],
                   title: str = "trajectories") -> str:
    """Overlay of named (N, 2) tracks inside the arena outline (first is drawn black)."""
    span = max(arena.width, arena.height)
    scale = (WIDTH - 2 * PAD) / span

    def tx(x):
        return PAD + (np.asarray(x) - arena.x_min) * scale

    def ty(y):
        return HEIGHT - PAD - (np.asarray(y) - arena.y_min) * scale

    body = [f'<rect x="{tx(arena.x_min):.2f}" y="{ty(arena.y_max):.2f}" '
            f'width="{arena.width * scale:.2f}" height="{arena.height * scale:.2f}" '
            f'fill="none" stroke="#888888"/>']
    for i, (name, pos) in enumerate(tracks.items()):
        pos = np.asarray(pos, dtype=float).reshape(-1, 2)
        body.append(f"<g id={quoteattr(name)}>"
                    + _polyline(tx(pos[:, 0]), ty(pos[:, 1]), PALETTE[i % len(PALETTE)])
                    + "</g>")
    body += _legend(list(tracks), 16)
    return _document(body, title)


def cdf_svg(curves: Mapping[str, np.ndarray], title: str = "error CDF") -> str:
    """Error CDF curves from (M, 2) ``(error, quantile)`` tables."""
    top = max((float(np.max(c[:, 0])) for c in curves.values()), default=0.0)
    top = top if top > 0 else 1.0
    sx = (WIDTH - 2 * PAD) / top
    sy = HEIGHT - 2 * PAD
    body = [f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" '
            f'stroke="#888888"/>',
            f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="#888888"/>',
            f'<text x="{WIDTH - PAD}" y="{HEIGHT - PAD + 16}" font-size="11" '
            f'text-anchor="end">{top:.3g} m</text>']
    for i, (name, c) in enumerate(curves.items()):
        c = np.asarray(c, dtype=float)
        body.append(f"<g id={quoteattr(name)}>"
                    + _polyline(PAD + c[:, 0] * sx, HEIGHT - PAD - c[:, 1] * sy,
                                PALETTE[i % len(PALETTE)])
                    + "</g>")
    body += _legend(list(curves), 16)
    return _document(body, title)
