"""Raster frames from trajectory logs: one 800x800 PNG per tick at 10 px/m,
centered on the map, with vehicle footprints colored by status.

Pixel output is deterministic for fixed inputs (pure PIL polygon fills, no
anti-aliasing randomness).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import geometry as geo
from .logs import read_log
from .world import load_map

FRAME_SIZE = 800  # pixels
PIXELS_PER_METER = 10.0

BACKGROUND = (34, 34, 38)
ROAD = (120, 120, 126)
INTERSECTION = (104, 104, 112)
GOAL = (60, 160, 80)
PEDESTRIAN = (240, 240, 240)

STATUS_COLORS = {
    "active": (70, 130, 220),
    "reached": (70, 200, 90),
    "collided": (220, 60, 60),
    "off_road": (230, 150, 50),
}

PHASE_COLORS = {
    "green": (60, 220, 60),
    "yellow": (240, 210, 40),
    "red": (230, 50, 50),
}


class RenderError(RuntimeError):
    pass


class FrameGeometry:
    """World-to-pixel transform centered on the map bounding box."""

    def __init__(self, map_spec):
        pts = np.concatenate(map_spec.drivable_polygons)
        self.center = (pts.min(axis=0) + pts.max(axis=0)) / 2.0

    def to_px(self, points) -> list:
        points = np.atleast_2d(points)
        xs = (points[:, 0] - self.center[0]) * PIXELS_PER_METER + FRAME_SIZE / 2
        ys = FRAME_SIZE / 2 - (points[:, 1] - self.center[1]) * PIXELS_PER_METER
        return list(zip(xs.tolist(), ys.tolist()))


def draw_base(map_spec, frame_geo: FrameGeometry) -> Image.Image:
    img = Image.new("RGB", (FRAME_SIZE, FRAME_SIZE), BACKGROUND)
    draw = ImageDraw.Draw(img)
    for poly in map_spec.drivable_polygons:
        draw.polygon(frame_geo.to_px(poly), fill=ROAD)
    if map_spec.intersection_region is not None:
        draw.polygon(frame_geo.to_px(map_spec.intersection_region),
                     fill=INTERSECTION)
    if map_spec.crosswalk is not None:
        a = np.asarray(map_spec.crosswalk["segment"][0])
        b = np.asarray(map_spec.crosswalk["segment"][1])
        half = map_spec.crosswalk["width"] / 2
        d = (b - a) / np.linalg.norm(b - a)
        n = np.array([-d[1], d[0]]) * half
        band = np.stack([a + n, b + n, b - n, a - n])
        draw.polygon(frame_geo.to_px(band), outline=(200, 200, 200))
    for pocket in map_spec.goal_pockets:
        draw.polygon(frame_geo.to_px(pocket.region), outline=GOAL)
    return img


def draw_frame(map_spec, frame_geo, vehicles, pedestrians=None,
               signal_phases=None) -> Image.Image:
    """One frame: `vehicles` is a list of (x, y, heading, status) tuples."""
    img = draw_base(map_spec, frame_geo)
    draw = ImageDraw.Draw(img)
    phases = signal_phases or []
    for i, placement in enumerate(map_spec.signal_placements):
        color = PHASE_COLORS.get(phases[i] if i < len(phases) else None,
                                 (150, 150, 150))
        cx, cy = frame_geo.to_px(placement.position)[0]
        r = 4
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
    if pedestrians is not None:
        for p in np.atleast_2d(pedestrians):
            cx, cy = frame_geo.to_px(p)[0]
            draw.ellipse([cx - 4, cy - 4, cx + 4, cy + 4], fill=PEDESTRIAN)
    for x, y, heading, status in vehicles:
        pose = geo.Pose(np.array([x, y]), heading)
        corners = geo.rect_corners(pose, (2.25, 1.0))
        color = STATUS_COLORS.get(status, STATUS_COLORS["active"])
        draw.polygon(frame_geo.to_px(corners), fill=color)
        # heading tick at the nose
        nose = np.array([x + 2.25 * math.cos(heading),
                         y + 2.25 * math.sin(heading)])
        draw.line(frame_geo.to_px(np.stack([[x, y], nose])),
                  fill=(255, 255, 255), width=1)
    return img


def render_log(log_path, out_dir) -> list[Path]:
    """One PNG per (episode, tick) of the log, lexicographically named.

    A collided or off-road agent keeps its terminal color from the frame of
    the event onward (bodies stay on the road as obstacles).
    """
    header, records = read_log(log_path)
    try:
        map_spec = load_map(header["map"])
    except Exception as exc:
        raise RenderError(f"cannot load map '{header.get('map')}': {exc}")
    frame_geo = FrameGeometry(map_spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_frame: dict = {}
    extras: dict = {}
    for rec in records:
        key = (rec["episode"], rec["tick"])
        if rec.get("type") == "frame":
            extras[key] = rec
        elif rec.get("type") == "step":
            by_frame.setdefault(key, []).append(rec)

    # terminal bodies persist visually after their last record
    terminal: dict = {}
    paths = []
    for key in sorted(by_frame):
        episode, tick = key
        vehicles = []
        seen = set()
        for rec in by_frame[key]:
            vehicles.append((rec["x"], rec["y"], rec["heading"], rec["status"]))
            seen.add(rec["agent"])
            if rec["status"] in ("collided", "off_road"):
                terminal[(episode, rec["agent"])] = (
                    rec["x"], rec["y"], rec["heading"], rec["status"])
        for (ep, aid), body in terminal.items():
            if ep == episode and aid not in seen:
                vehicles.append(body)
        extra = extras.get(key, {})
        img = draw_frame(map_spec, frame_geo, vehicles,
                         pedestrians=(np.asarray(extra["pedestrians"])
                                      if extra.get("pedestrians") else None),
                         signal_phases=extra.get("signals"))
        path = out_dir / f"ep{episode:03d}_t{tick:04d}.png"
        img.save(path)
        paths.append(path)
    return paths
