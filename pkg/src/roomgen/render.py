"""SVG floor-plan rendering for quick visual inspection."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from . import vocab
from .room import Room, door_clearance_rect, door_point, entity_rect

SCALE = 80.0  # pixels per meter
MARGIN = 20.0


def _pts(points, xmin, ymax) -> str:
    return " ".join(f"{MARGIN + (x - xmin) * SCALE:.2f},{MARGIN + (ymax - y) * SCALE:.2f}" for x, y in points)


def room_svg(r: Room, title: str = "") -> str:
    env = r.envelope
    poly = env.polygon()
    xmin, ymin, xmax, ymax = poly.bbox()
    w = (xmax - xmin) * SCALE + 2 * MARGIN
    h = (ymax - ymin) * SCALE + 2 * MARGIN + 16
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.0f} {h:.0f}">',
           f'<polygon points="{_pts(poly.array, xmin, ymax)}" fill="#f7f5ef" stroke="#222" stroke-width="3"/>']
    for d in env.doors:
        rect = door_clearance_rect(env, d, 0.9)
        out.append(f'<polygon points="{_pts(rect.corners(), xmin, ymax)}" fill="#cde3f7" fill-opacity="0.5" stroke="none"/>')
        (px, py), _, _ = door_point(env, d)
        out.append(f'<circle cx="{MARGIN + (px - xmin) * SCALE:.2f}" cy="{MARGIN + (ymax - py) * SCALE:.2f}" r="5" fill="#1565c0"/>')
    for o in env.windows:
        (px, py), _, _ = door_point(env, o)
        out.append(f'<circle cx="{MARGIN + (px - xmin) * SCALE:.2f}" cy="{MARGIN + (ymax - py) * SCALE:.2f}" r="4" fill="#4fc3f7"/>')
    for e in r.entities:
        rect = entity_rect(poly, e)
        color = "#a1887f" if e.kind == vocab.CASEWORK else "#81c784"
        out.append(f'<polygon points="{_pts(rect.corners(), xmin, ymax)}" fill="{color}" fill-opacity="0.8" stroke="#333"/>')
        cx, cy = rect.center
        out.append(f'<text x="{MARGIN + (cx - xmin) * SCALE:.2f}" y="{MARGIN + (ymax - cy) * SCALE:.2f}" font-size="10" '
                   f'text-anchor="middle">{escape(vocab.CATEGORY_NAMES[e.category])}</text>')
    label = title or vocab.ROOM_TYPES[env.room_type]
    out.append(f'<text x="{MARGIN}" y="{h - 6:.0f}" font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(r: Room, path, title: str = "") -> None:
    Path(path).write_text(room_svg(r, title), encoding="utf-8")
