"""PNG output and overlay drawing for visual inspection.

Everything is deterministic: fixed palette (object k gets hue k/(K+1)),
integer Bresenham polylines, and Pillow only at the file boundary.
"""

from __future__ import annotations

import colorsys

import numpy as np
from PIL import Image

from .regions import boundary


def to_u8(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def write_png(path, image: np.ndarray) -> None:
    """Write [H,W,3] (float in [0,1] or uint8) or [H,W] grayscale."""
    Image.fromarray(to_u8(image)).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path))


def object_color(k: int, num_objects: int) -> np.ndarray:
    """Palette color for object k in a K-object scene: hue k/(K+1)."""
    return np.array(colorsys.hsv_to_rgb(k / (num_objects + 1), 1.0, 1.0))


def point_color(q: int, num_points: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(q / max(num_points, 1), 1.0, 0.9))


def draw_line(image: np.ndarray, p0, p1, color) -> None:
    """1-px Bresenham segment on [H,W,3], endpoints included, clipped."""
    h, w = image.shape[:2]
    x0, y0 = int(round(p0[0])), int(round(p0[1]))
    x1, y1 = int(round(p1[0])), int(round(p1[1]))
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        if 0 <= x0 < w and 0 <= y0 < h:
            image[y0, x0] = color
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_polyline(image: np.ndarray, points, color) -> None:
    for a, b in zip(points[:-1], points[1:]):
        draw_line(image, a, b, color)


def overlay_boundaries(image: np.ndarray, mask: np.ndarray,
                       num_objects: int) -> np.ndarray:
    """Paint each object's 1-px mask boundary in its palette color."""
    out = image.astype(np.float64).copy()
    for k in range(1, num_objects + 1):
        b = boundary(mask == k)
        out[b] = object_color(k, num_objects)
    return out


def overlay_tracks(image: np.ndarray, tracks: np.ndarray,
                   visible: np.ndarray, upto: int | None = None) -> np.ndarray:
    """Draw each query point's trajectory rake up to frame `upto`.

    tracks are [Q,T,2]; a segment is drawn only when both of its
    endpoints are visible.
    """
    out = image.astype(np.float64).copy()
    nq, t_n = tracks.shape[:2]
    stop = t_n if upto is None else min(upto + 1, t_n)
    for q in range(nq):
        color = point_color(q, nq)
        for t in range(1, stop):
            if visible[q, t - 1] and visible[q, t]:
                draw_line(out, tracks[q, t - 1], tracks[q, t], color)
    return out


def overlay_frame(image, mask, num_objects, tracks=None, visible=None,
                  upto=None) -> np.ndarray:
    out = overlay_boundaries(image, mask, num_objects)
    if tracks is not None:
        out = overlay_tracks(out, tracks, visible, upto)
    return out
