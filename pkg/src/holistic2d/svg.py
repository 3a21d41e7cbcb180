"""Minimal dependency-free SVG figures: heatmaps, bifurcation diagrams, log-log plots."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 480
MARGIN = 60


def _doc(body: list[str], width=W, height=H, title="") -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">')
    parts = [head, f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    parts.extend(body)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _colour(t: float) -> str:
    """Blue-white-red diverging map for ``t`` in [-1, 1]."""
    t = max(-1.0, min(1.0, t))
    if t >= 0:
        r, g, b = 255, int(255 * (1 - t)), int(255 * (1 - t))
    else:
        r, g, b = int(255 * (1 + t)), int(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(values: np.ndarray, title="", tile: tuple | None = None) -> str:
    """Heatmap of a 2D array (first index along x); ``tile`` draws element borders every ``tile`` cells."""
    v = np.asarray(values, dtype=float)
    nx, ny = v.shape
    size = min((W - 2 * MARGIN) / nx, (H - 2 * MARGIN) / ny)
    vmax = float(np.nanmax(np.abs(v))) or 1.0
    body = []
    for i in range(nx):
        for j in range(ny):
            if np.isnan(v[i, j]):
                continue
            x = MARGIN + i * size
            y = H - MARGIN - (j + 1) * size
            body.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{size + 0.05:.2f}" height="{size + 0.05:.2f}" '
                        f'fill="{_colour(v[i, j] / vmax)}"/>')
    if tile:
        tx, ty = tile
        for i in range(0, nx + 1, tx):
            x = MARGIN + i * size
            body.append(f'<line x1="{x:.2f}" y1="{H - MARGIN:.2f}" x2="{x:.2f}" y2="{H - MARGIN - ny * size:.2f}" '
                        'stroke="black" stroke-width="0.5"/>')
        for j in range(0, ny + 1, ty):
            y = H - MARGIN - j * size
            body.append(f'<line x1="{MARGIN}" y1="{y:.2f}" x2="{MARGIN + nx * size:.2f}" y2="{y:.2f}" '
                        'stroke="black" stroke-width="0.5"/>')
    body.append(f'<text x="{W - MARGIN + 5}" y="{MARGIN}" >max |u| = {vmax:.4g}</text>')
    return _doc(body, title=title)


class _Axes:
    def __init__(self, xlim, ylim, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        self.x0, self.x1 = (math.log10(v) if logx else v for v in xlim)
        self.y0, self.y1 = (math.log10(v) if logy else v for v in ylim)
        if self.x1 == self.x0:
            self.x1 += 1
        if self.y1 == self.y0:
            self.y1 += 1

    def px(self, x):
        x = math.log10(x) if self.logx else x
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2 * MARGIN)

    def py(self, y):
        y = math.log10(y) if self.logy else y
        return H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2 * MARGIN)

    def frame(self, xlabel, ylabel):
        out = [f'<rect x="{MARGIN}" y="{MARGIN}" width="{W - 2 * MARGIN}" height="{H - 2 * MARGIN}" '
               'fill="none" stroke="black"/>']
        for k in range(5):
            fx = self.x0 + k / 4 * (self.x1 - self.x0)
            fy = self.y0 + k / 4 * (self.y1 - self.y0)
            lx = 10 ** fx if self.logx else fx
            ly = 10 ** fy if self.logy else fy
            out.append(f'<text x="{self.px(lx):.1f}" y="{H - MARGIN + 16}" text-anchor="middle">{lx:.3g}</text>')
            out.append(f'<text x="{MARGIN - 6}" y="{self.py(ly) + 4:.1f}" text-anchor="end">{ly:.3g}</text>')
        out.append(f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="15" y="{H / 2}" transform="rotate(-90 15 {H / 2})" text-anchor="middle">'
                   f'{escape(ylabel)}</text>')
        return out


def _polyline(ax, xs, ys, colour, dash=None, width=1.5):
    pts = " ".join(f"{ax.px(x):.2f},{ax.py(y):.2f}" for x, y in zip(xs, ys))
    d = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="{width}"{d}/>'


def bifurcation_diagram(branches, title="", xlabel="alpha", ylabel="rms(u)") -> str:
    """Branches drawn solid blue where stable and dashed red where unstable; squares mark bifurcations."""
    alphas = [a for b in branches for a in b.alphas] or [0, 1]
    norms = [v for b in branches for v in b.norms] or [0, 1]
    ax = _Axes((min(alphas), max(alphas)), (0.0, max(max(norms), 1e-12) * 1.05))
    body = ax.frame(xlabel, ylabel)
    for br in branches:
        pts = list(zip(br.alphas, br.norms, [p.stability.value if p.stability else "stable" for p in br.points]))
        run = [pts[0]] if pts else []
        for prev, cur in zip(pts, pts[1:]):
            if cur[2] != run[0][2]:
                run.append(cur)
                body.append(_segment(ax, run))
                run = [cur]
            else:
                run.append(cur)
        if len(run) > 1:
            body.append(_segment(ax, run))
        for b in br.bifurcations:
            x, y = ax.px(b.alpha), ax.py(b.u.rms())
            body.append(f'<rect x="{x - 4:.2f}" y="{y - 4:.2f}" width="8" height="8" fill="none" stroke="black"/>')
    return _doc(body, title=title)


def _segment(ax, run):
    stable = run[0][2] == "stable"
    return _polyline(ax, [p[0] for p in run], [p[1] for p in run], "blue" if stable else "red",
                     None if stable else "6,4")


def loglog(series: dict, title="", xlabel="h", ylabel="error") -> str:
    """Log-log plot of ``{label: (xs, ys)}``."""
    xs = [x for v in series.values() for x in v[0]]
    ys = [y for v in series.values() for y in v[1] if y > 0]
    ax = _Axes((min(xs), max(xs)), (min(ys), max(ys)), logx=True, logy=True)
    body = ax.frame(xlabel, ylabel)
    palette = ["blue", "red", "green", "black", "purple"]
    for k, (label, (x, y)) in enumerate(series.items()):
        c = palette[k % len(palette)]
        pairs = [(a, b) for a, b in zip(x, y) if b > 0]
        body.append(_polyline(ax, [p[0] for p in pairs], [p[1] for p in pairs], c))
        body.append(f'<text x="{MARGIN + 10}" y="{MARGIN + 16 * (k + 1)}" fill="{c}">{escape(label)}</text>')
    return _doc(body, title=title)
