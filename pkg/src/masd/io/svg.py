"""Minimal dependency-free SVG plots."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

# Skill i is drawn in PALETTE[i % 30]: the 20 "tab20" colours then 10 extra hues.
PALETTE = [
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896",
    "#9467bd", "#c5b0d5", "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f", "#c7c7c7",
    "#bcbd22", "#dbdb8d", "#17becf", "#9edae5", "#393b79", "#637939", "#8c6d31", "#843c39",
    "#7b4173", "#5254a3", "#8ca252", "#bd9e39", "#ad494a", "#a55194",
]

W, H = 480, 360
M = 48  # margin


def skill_color(skill: int) -> str:
    return PALETTE[int(skill) % len(PALETTE)]


class _Axes:
    def __init__(self, xlim: Tuple[float, float], ylim: Tuple[float, float]):
        x0, x1 = xlim
        y0, y1 = ylim
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x0 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y0 + 0.5
        self.xlim, self.ylim = (x0, x1), (y0, y1)

    def px(self, x: float) -> float:
        x0, x1 = self.xlim
        return M + (x - x0) / (x1 - x0) * (W - 2 * M)

    def py(self, y: float) -> float:
        y0, y1 = self.ylim
        return H - M - (y - y0) / (y1 - y0) * (H - 2 * M)


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str) -> List[str]:
    out = [
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{M}" y="{M}" width="{W - 2 * M}" height="{H - 2 * M}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{M / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
    ]
    for x in np.linspace(*ax.xlim, 5):
        out.append(f'<text x="{ax.px(x):.1f}" y="{H - M + 14}" text-anchor="middle" '
                   f'font-size="10">{x:.3g}</text>')
    for y in np.linspace(*ax.ylim, 5):
        out.append(f'<text x="{M - 4}" y="{ax.py(y) + 3:.1f}" text-anchor="end" '
                   f'font-size="10">{y:.3g}</text>')
    return out


def _doc(body: List[str]) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">\n' + "\n".join(body) + "\n</svg>\n")


def _limits(values: Sequence[float], pad: float = 0.05) -> Tuple[float, float]:
    if len(values) == 0:
        return 0.0, 1.0
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo if hi > lo else 1.0
    return lo - pad * span, hi + pad * span


def _polyline(ax: _Axes, xs, ys, color: str, width: float = 1.0, opacity: float = 1.0) -> str:
    pts = " ".join(f"{ax.px(x):.2f},{ax.py(y):.2f}" for x, y in zip(xs, ys))
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}" '
            f'stroke-opacity="{opacity}"/>')


def trajectory_fan(groups: Dict[int, List[np.ndarray]], title: str = "trajectories") -> str:
    """``groups[skill]`` is a list of (agents, steps, 2) position arrays."""
    ax = _Axes((-1.0, 1.0), (-1.0, 1.0))
    body = _frame(ax, title, "x", "y")
    for skill, episodes in sorted(groups.items()):
        for pos in episodes:
            for traj in pos:
                body.append(_polyline(ax, traj[:, 0], traj[:, 1], skill_color(skill), 1.2, 0.8))
                body.append(f'<circle cx="{ax.px(traj[-1, 0]):.2f}" cy="{ax.py(traj[-1, 1]):.2f}" '
                            f'r="2.5" fill="{skill_color(skill)}"/>')
    return _doc(body)


def scatter(points: np.ndarray, labels: Sequence[int], title: str, xlabel: str, ylabel: str) -> str:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    ax = _Axes(_limits(points[:, 0]), _limits(points[:, 1]))
    body = _frame(ax, title, xlabel, ylabel)
    for (x, y), lab in zip(points, labels):
        body.append(f'<circle cx="{ax.px(x):.2f}" cy="{ax.py(y):.2f}" r="2.5" '
                    f'fill="{skill_color(lab)}" fill-opacity="0.8"/>')
    return _doc(body)


def curves(traces: Dict[str, Sequence[Tuple[float, float]]], title: str, xlabel: str, ylabel: str,
           colors: Optional[Dict[str, str]] = None) -> str:
    """Thin line per trace; traces sharing a prefix before ``/`` also get a thick mean line."""
    xs_all = [x for tr in traces.values() for x, _ in tr]
    ys_all = [y for tr in traces.values() for _, y in tr]
    ax = _Axes(_limits(xs_all, 0.0), _limits(ys_all))
    body = _frame(ax, title, xlabel, ylabel)
    families: Dict[str, List[Sequence[Tuple[float, float]]]] = {}
    for name, tr in traces.items():
        families.setdefault(name.split("/")[0], []).append(tr)
    for k, (fam, members) in enumerate(sorted(families.items())):
        color = (colors or {}).get(fam, PALETTE[2 * k % len(PALETTE)])
        for tr in members:
            if tr:
                body.append(_polyline(ax, [p[0] for p in tr], [p[1] for p in tr], color, 0.8, 0.5))
        n = min((len(tr) for tr in members), default=0)
        if n and len(members) > 1:
            mean = np.mean([[p[1] for p in tr[:n]] for tr in members], axis=0)
            body.append(_polyline(ax, [p[0] for p in members[0][:n]], mean, color, 2.5))
        body.append(f'<text x="{W - M - 4}" y="{M + 14 + 14 * k}" text-anchor="end" font-size="11" '
                    f'fill="{color}">{escape(fam)}</text>')
    return _doc(body)


def skill_dots(values: Dict[int, float], title: str, ylabel: str) -> str:
    keys = sorted(values)
    ax = _Axes(_limits(keys), _limits([values[k] for k in keys] + [0.0]))
    body = _frame(ax, title, "skill", ylabel)
    for k in keys:
        body.append(f'<circle cx="{ax.px(k):.2f}" cy="{ax.py(values[k]):.2f}" r="4" '
                    f'fill="{skill_color(k)}"/>')
    return _doc(body)


def emit_svg(path: str | Path, svg: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
