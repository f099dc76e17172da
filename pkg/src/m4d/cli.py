"""Command-line entry point.

Subcommands cover the whole workflow: synth (build a synthetic dataset),
optimize / ablate (fit a scene), render, eval-vos / eval-track /
eval-nvs (score against ground truth), and emit-overlays (inspection
images). Results land under --out only; diagnostics go to stderr.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
M4D_LOG selects quiet / info / debug logging.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys

import numpy as np

from .bridge_client import BridgeError, BridgeSegmenter
from .config import ABLATION_VARIANTS, RunConfig, ablate, load_config
from .evaluation import eval_nvs, eval_track, eval_vos, predict_tracks
from .io_images import overlay_frame, write_png
from .pipeline import run_pipeline
from .priors import load_dataset, save_dataset
from .render.raster import rasterize
from .scene import load_checkpoint
from .semantic_refine import render_semantic_mask
from .synthgen import (
    CorruptionSpec, OracleSegmenter, corrupt_priors, default_spec,
    load_ground_truth, load_synth_config, make_scene, render_gt_priors,
    save_corruption_record, save_ground_truth, save_synth_config,
)
from .tensor_store import save_arrays

log = logging.getLogger("m4d")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; usage errors are 1 here
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="m4d", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", metavar="<command>")

    def cmd(name, help_text, data=False, config=False, out=True):
        q = sub.add_parser(name, help=help_text)
        if config:
            q.add_argument("--config", help="configuration file (.cfg)")
        if data:
            q.add_argument("--data", required=True, help="input directory")
        if out:
            q.add_argument("--out", required=True, help="output directory")
        q.add_argument("--seed", type=int, help="seed override")
        q.add_argument("--threads", type=int, help="cap math library threads")
        return q

    cmd("synth", "generate a synthetic dataset", config=True)

    for name in ("optimize", "ablate"):
        q = cmd(name, "fit a scene to a prior dataset", data=True, config=True)
        q.add_argument("--segmenter", default="oracle",
                       help="'oracle' or 'bridge:<command line>'")
        if name == "ablate":
            q.add_argument("--variant", required=True,
                           choices=ABLATION_VARIANTS)

    cmd("render", "render checkpoint channels to files", data=True)

    for name in ("eval-vos", "eval-track", "eval-nvs"):
        q = cmd(name, "score a checkpoint against ground truth", data=True)
        q.add_argument("--checkpoint", required=True,
                       help="run directory or .m4dc checkpoint file")

    cmd("emit-overlays", "write per-frame inspection overlays", data=True)
    return p


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("M4D_LOG", "info"),
                                         logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _cap_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _resolve_checkpoint(path: str) -> str:
    if os.path.isdir(path):
        return os.path.join(path, "checkpoint_final.m4dc")
    return path


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ------------------------------------------------------------ subcommands


def _cmd_synth(args) -> int:
    if args.config:
        spec, cspec = load_synth_config(args.config)
    else:
        spec, cspec = default_spec(), CorruptionSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    log.info("building scene (seed %d, %d frames)", spec.seed, spec.t_frames)
    sy = make_scene(spec)
    dataset, gt = render_gt_priors(sy)
    corrupted, record = corrupt_priors(dataset, cspec)

    os.makedirs(args.out, exist_ok=True)
    save_dataset(args.out, corrupted)
    os.makedirs(os.path.join(args.out, "gt"), exist_ok=True)
    save_ground_truth(os.path.join(args.out, "gt", "ground_truth.m4dc"), gt)
    save_corruption_record(os.path.join(args.out, "corruption.m4dc"), record)
    save_synth_config(os.path.join(args.out, "spec.cfg"), spec, cspec)
    log.info("dataset written to %s", args.out)
    return 0


def _make_segmenter(name: str, dataset, data_dir: str):
    if name == "oracle":
        gt = load_ground_truth(os.path.join(data_dir, "gt", "ground_truth.m4dc"))
        return OracleSegmenter(gt["masks"])
    if name.startswith("bridge:"):
        seg = BridgeSegmenter(name[len("bridge:"):],
                              dataset.height, dataset.width)
        seg.init_from_dataset(dataset, video_dir=data_dir)
        return seg
    raise _UsageError(f"unknown segmenter {name!r}")


def _cmd_optimize(args, variant: str | None = None) -> int:
    dataset = load_dataset(args.data)
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if variant is not None:
        cfg = ablate(cfg, variant)
    segmenter = _make_segmenter(args.segmenter, dataset, args.data)
    try:
        run_pipeline(dataset, cfg, segmenter=segmenter, out_dir=args.out)
    finally:
        if isinstance(segmenter, BridgeSegmenter):
            segmenter.close()
    log.info("run complete: %s", args.out)
    return 0


def _cmd_render(args) -> int:
    scene, bases, cameras = load_checkpoint(
        os.path.join(args.data, "checkpoint_final.m4dc"))
    os.makedirs(args.out, exist_ok=True)
    for t, cam in enumerate(cameras):
        out = rasterize(scene, bases, cam, t, channels=("color", "sem", "depth"))
        mask = render_semantic_mask(scene, bases, cam, t)
        ac = np.maximum(out.alpha, 1e-12)
        save_arrays(os.path.join(args.out, f"render_{t:04d}.m4dc"),
                    color=out.color, mask=mask.astype(np.int32),
                    depth=np.where(out.alpha > 0.5, out.depth / ac, 0.0),
                    alpha=out.alpha)
        write_png(os.path.join(args.out, f"color_{t:04d}.png"), out.color)
    return 0


def _load_eval_inputs(args):
    gt = load_ground_truth(os.path.join(args.data, "gt", "ground_truth.m4dc"))
    scene, bases, cameras = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    return gt, scene, bases, cameras


def _cmd_eval_vos(args) -> int:
    gt, scene, bases, cameras = _load_eval_inputs(args)
    k = int(gt["masks"].max())
    res = eval_vos(scene, bases, cameras, gt["masks"], k)
    os.makedirs(args.out, exist_ok=True)
    rows = [[f"object_{k_}", res["J"][k_ - 1], res["F"][k_ - 1],
             (res["J"][k_ - 1] + res["F"][k_ - 1]) / 2]
            for k_ in range(1, k + 1)]
    rows.append(["mean", res["J"].mean(), res["F"].mean(), res["JF"]])
    _write_csv(os.path.join(args.out, "vos.csv"),
               ["sequence", "J", "F", "JF"], rows)
    return 0


def _cmd_eval_track(args) -> int:
    gt, scene, bases, cameras = _load_eval_inputs(args)
    res = eval_track(scene, bases, cameras, gt)
    os.makedirs(args.out, exist_ok=True)
    keys = sorted(res)
    _write_csv(os.path.join(args.out, "track.csv"),
               ["sequence"] + keys,
               [["synthetic"] + [res[k] for k in keys],
                ["mean"] + [res[k] for k in keys]])
    return 0


def _cmd_eval_nvs(args) -> int:
    gt, scene, bases, cameras = _load_eval_inputs(args)
    dataset = load_dataset(args.data)
    images = np.stack([fr.image for fr in dataset.frames])
    res = eval_nvs(scene, bases, cameras, images)
    os.makedirs(args.out, exist_ok=True)
    rows = [[f"frame_{t}", p, s] for t, (p, s) in
            enumerate(zip(res["psnr_per_frame"], res["ssim_per_frame"]))]
    rows.append(["mean", res["psnr"], res["ssim"]])
    _write_csv(os.path.join(args.out, "nvs.csv"),
               ["sequence", "psnr", "ssim"], rows)
    return 0


def _cmd_emit_overlays(args) -> int:
    scene, bases, cameras = load_checkpoint(
        os.path.join(args.data, "checkpoint_final.m4dc"))
    num_objects = scene.num_classes - 1
    h, w = cameras[0].height, cameras[0].width
    qy, qx = np.mgrid[4:h:8, 4:w:8]
    queries = np.stack([qx.ravel(), qy.ravel()], axis=-1).astype(np.float64)
    tracks, _, visible = predict_tracks(scene, bases, cameras, queries)
    os.makedirs(args.out, exist_ok=True)
    for t, cam in enumerate(cameras):
        out = rasterize(scene, bases, cam, t, channels=("color",))
        mask = render_semantic_mask(scene, bases, cam, t)
        img = overlay_frame(out.color, mask, num_objects, tracks, visible,
                            upto=t)
        write_png(os.path.join(args.out, f"overlay_{t:04d}.png"), img)
    return 0


_DISPATCH = {
    "synth": _cmd_synth,
    "optimize": _cmd_optimize,
    "ablate": lambda a: _cmd_optimize(a, variant=a.variant),
    "render": _cmd_render,
    "eval-vos": _cmd_eval_vos,
    "eval-track": _cmd_eval_track,
    "eval-nvs": _cmd_eval_nvs,
    "emit-overlays": _cmd_emit_overlays,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else argv)
        if not args.cmd:
            parser.print_usage(sys.stderr)
            return 1
        _cap_threads(getattr(args, "threads", None))
        return _DISPATCH[args.cmd](args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except BridgeError as e:
        log.error("bridge failure: %s", e)
        return 2
    except (FileNotFoundError, NotADirectoryError, KeyError, ValueError,
            OSError) as e:
        log.error("data error: %s", e)
        return 2
    except RuntimeError as e:
        log.error("numerical failure: %s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
