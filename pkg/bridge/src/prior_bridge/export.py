"""Turn a directory of video frames into a prior dataset.

Real deployments run a tracker, a depth model and a segmenter per
frame. The mock models used here keep every promise of the layout at
none of the cost: identity tracks, constant depth, a first-frame mask
propagated unchanged, a static default camera. Output is deterministic,
so re-exporting the same clip gives byte-identical files.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from .container import read_container, write_container

MOCK_DEPTH = 2.0


def _offset_key(d: int) -> str:
    return f"p{d}" if d >= 0 else f"m{-d}"


def read_video_frames(video_dir: str) -> list:
    """Images [H,W,3] from video_dir/frames/*.m4dc or video_dir/*.m4dc."""
    sub = os.path.join(video_dir, "frames")
    root = sub if os.path.isdir(sub) else video_dir
    paths = sorted(glob.glob(os.path.join(root, "*.m4dc")))
    frames = []
    for p in paths:
        data = read_container(p)
        if "image" in data:
            frames.append(np.asarray(data["image"], dtype=np.float64))
    if not frames:
        raise ValueError(f"no frame containers under {video_dir}")
    return frames


def export_priors(video_dir: str, out_dir: str, offsets=(1, -1),
                  mask_path: str | None = None) -> None:
    frames = read_video_frames(video_dir)
    t_n = len(frames)
    h, w = frames[0].shape[:2]

    if mask_path is not None:
        mask = read_container(mask_path)["mask"].astype(np.int32)
        if mask.shape != (h, w):
            raise ValueError(
                f"mask {mask.shape} does not match frames {(h, w)}")
    else:
        mask = np.zeros((h, w), dtype=np.int32)
    num_objects = int(mask.max())

    ys, xs = np.mgrid[0:h, 0:w]
    ident_uv = np.stack([xs, ys], axis=-1).astype(np.float64)
    depth = np.full((h, w), MOCK_DEPTH)
    valid = np.ones((h, w), dtype=np.uint8)

    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "priors"), exist_ok=True)

    focal = float(max(h, w))
    write_container(os.path.join(out_dir, "cameras.m4dc"), [
        ("intr", np.tile([focal, focal, (w - 1) / 2.0, (h - 1) / 2.0], (t_n, 1))),
        ("quat", np.tile([1.0, 0.0, 0.0, 0.0], (t_n, 1))),
        ("trans", np.zeros((t_n, 3))),
        ("size", np.tile(np.array([w, h], dtype=np.int32), (t_n, 1))),
    ])

    for t, image in enumerate(frames):
        write_container(os.path.join(out_dir, "frames", f"frame_{t:04d}.m4dc"),
                        [("image", image)])
        live = [d for d in sorted(offsets) if 0 <= t + d < t_n]
        entries = [
            ("mask", mask),
            ("depth", depth),
            ("depth_valid", valid),
            ("num_objects", np.array([num_objects], dtype=np.int32)),
            ("offsets", np.array(live, dtype=np.int32)),
        ]
        for d in live:
            entries.append((f"track_{_offset_key(d)}", ident_uv))
            entries.append((f"track_valid_{_offset_key(d)}", valid))
        write_container(os.path.join(out_dir, "priors", f"prior_{t:04d}.m4dc"),
                        entries)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="prior-bridge-export")
    ap.add_argument("--video", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--offsets", default="1,-1",
                    help="comma-separated track target offsets")
    ap.add_argument("--mask", default=None,
                    help="first-frame label mask container to propagate")
    args = ap.parse_args(argv)
    offsets = tuple(int(v) for v in args.offsets.split(",") if v.strip())
    try:
        export_priors(args.video, args.out, offsets=offsets,
                      mask_path=args.mask)
    except (ValueError, OSError) as e:
        print(f"export failed: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
