"""Segmentation backends.

A backend exposes init(video_dir, objects), segment(frame, prompts) and
shutdown(). Real deployments wrap a promptable video segmenter here; the
mock replays masks so everything above it can be exercised without one.
"""

from __future__ import annotations

import os

import numpy as np

from .container import read_container


def resize_nearest(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor label resize. Labels must never be interpolated."""
    h, w = mask.shape
    if (h, w) == (height, width):
        return mask
    ys = np.minimum((np.arange(height) * h) // height, h - 1)
    xs = np.minimum((np.arange(width) * w) // width, w - 1)
    return mask[ys[:, None], xs[None, :]]


class MockBackend:
    """Replays masks instead of running a model.

    With a mask directory (mask_0000.m4dc, one "mask" entry per frame)
    segment() serves the requested frame's file, resized to `size` when
    given. Without one it composes the masks handed over at init into a
    single label image and echoes that for every frame. Prompts are
    accepted and ignored; this backend has nothing to steer.
    """

    def __init__(self, masks_dir: str | None = None,
                 size: tuple[int, int] | None = None):
        self.masks_dir = masks_dir
        self.size = size
        self.objects: dict[int, np.ndarray] = {}
        self.video_dir = ""

    def init(self, video_dir: str, objects) -> None:
        """objects: iterable of (object_id, frame, flat uint8 mask)."""
        self.video_dir = video_dir
        self.objects = {}
        length = None
        for obj_id, _frame, flat in objects:
            if length is None:
                length = len(flat)
            elif len(flat) != length:
                raise ValueError("init masks disagree on length")
            self.objects[int(obj_id)] = np.asarray(flat, dtype=np.uint8)

    def _from_file(self, frame: int) -> np.ndarray:
        path = os.path.join(self.masks_dir, f"mask_{frame:04d}.m4dc")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no mask for frame {frame}: {path}")
        mask = read_container(path)["mask"].astype(np.uint8)
        if self.size is not None:
            mask = resize_nearest(mask, *self.size)
        return mask.ravel()

    def segment(self, frame: int, prompts) -> np.ndarray:
        if self.masks_dir is not None:
            return self._from_file(frame)
        if not self.objects:
            raise RuntimeError("no init masks to echo")
        out = np.zeros_like(next(iter(self.objects.values())))
        for obj_id in sorted(self.objects):
            out[self.objects[obj_id] > 0] = obj_id
        return out

    def shutdown(self) -> None:
        pass
