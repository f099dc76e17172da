"""Per-frame 2D priors (image, label mask, dense tracks, depth) and the
dataset directory layout shared by the generator, the optimizer, and the
export tooling."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .scene import Camera
from .tensor_store import TensorEntry, read_container, write_container


@dataclass
class FramePriors:
    """Priors for one frame. Tracks map a target offset d to a pair
    (uv, valid): uv[y, x] is the predicted pixel position in frame t+d of
    the surface seen at (x, y), valid gates supervision."""

    image: np.ndarray                     # [H, W, 3] in [0, 1]
    mask: np.ndarray                      # [H, W] int32, 0 = background
    depth: np.ndarray                     # [H, W]
    depth_valid: np.ndarray               # [H, W] bool
    tracks: dict = field(default_factory=dict)  # offset -> (uv [H,W,2], valid [H,W] bool)

    def copy(self) -> "FramePriors":
        return FramePriors(
            image=self.image.copy(),
            mask=self.mask.copy(),
            depth=self.depth.copy(),
            depth_valid=self.depth_valid.copy(),
            tracks={d: (uv.copy(), v.copy()) for d, (uv, v) in self.tracks.items()},
        )


@dataclass
class PriorDataset:
    frames: list            # [T] FramePriors
    cameras: list           # [T] Camera
    num_objects: int

    @property
    def t_frames(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].image.shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].image.shape[1]

    def copy(self) -> "PriorDataset":
        return PriorDataset(
            frames=[f.copy() for f in self.frames],
            cameras=list(self.cameras),
            num_objects=self.num_objects,
        )


def save_cameras(path, cameras) -> None:
    write_container(path, [
        TensorEntry("intr", np.array([[c.fx, c.fy, c.cx, c.cy] for c in cameras])),
        TensorEntry("quat", np.array([c.quat_wc for c in cameras])),
        TensorEntry("trans", np.array([c.t_wc for c in cameras])),
        TensorEntry("size", np.array([[c.width, c.height] for c in cameras], dtype=np.int32)),
    ])


def load_cameras(path) -> list:
    d = read_container(path)
    return [
        Camera(fx=float(i[0]), fy=float(i[1]), cx=float(i[2]), cy=float(i[3]),
               quat_wc=q, t_wc=tr, width=int(s[0]), height=int(s[1]))
        for i, q, tr, s in zip(d["intr"], d["quat"], d["trans"], d["size"])
    ]


def _offset_key(d: int) -> str:
    return f"p{d}" if d >= 0 else f"m{-d}"


def prior_entries(fr: FramePriors, num_objects: int) -> list:
    """Container entries for one frame's priors (sans the image)."""
    entries = [
        TensorEntry("mask", fr.mask.astype(np.int32)),
        TensorEntry("depth", fr.depth),
        TensorEntry("depth_valid", fr.depth_valid.astype(np.uint8)),
        TensorEntry("num_objects", np.array([num_objects], dtype=np.int32)),
        TensorEntry("offsets", np.array(sorted(fr.tracks), dtype=np.int32)),
    ]
    for d in sorted(fr.tracks):
        uv, valid = fr.tracks[d]
        entries.append(TensorEntry(f"track_{_offset_key(d)}", uv))
        entries.append(TensorEntry(f"track_valid_{_offset_key(d)}", valid.astype(np.uint8)))
    return entries


def save_dataset(out_dir, dataset: PriorDataset) -> None:
    """frames/*.m4dc (images) and priors/*.m4dc (mask/depth/tracks)."""
    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "priors"), exist_ok=True)
    save_cameras(os.path.join(out_dir, "cameras.m4dc"), dataset.cameras)
    for t, fr in enumerate(dataset.frames):
        write_container(os.path.join(out_dir, "frames", f"frame_{t:04d}.m4dc"),
                        [TensorEntry("image", fr.image)])
        write_container(os.path.join(out_dir, "priors", f"prior_{t:04d}.m4dc"),
                        prior_entries(fr, dataset.num_objects))


def load_dataset(data_dir) -> PriorDataset:
    cameras = load_cameras(os.path.join(data_dir, "cameras.m4dc"))
    frames = []
    num_objects = 0
    for t in range(len(cameras)):
        img = read_container(os.path.join(data_dir, "frames", f"frame_{t:04d}.m4dc"))["image"]
        d = read_container(os.path.join(data_dir, "priors", f"prior_{t:04d}.m4dc"))
        num_objects = int(d["num_objects"][0])
        tracks = {}
        for off in d["offsets"].tolist():
            key = _offset_key(off)
            tracks[off] = (d[f"track_{key}"], d[f"track_valid_{key}"].astype(bool))
        frames.append(FramePriors(
            image=img, mask=d["mask"], depth=d["depth"],
            depth_valid=d["depth_valid"].astype(bool), tracks=tracks,
        ))
    return PriorDataset(frames=frames, cameras=cameras, num_objects=num_objects)
