"""Three-stage optimization schedule over prior chunks.

Initialization unprojects a frame-0 pixel subsample, then each chunk
runs the motion stage and the semantic stage in turn, and a final
global stage unfreezes everything over the whole sequence with periodic
pruning. A run directory (when given) receives config.cfg, checkpoints,
refined priors, and a CSV step log. Fixed seed means bitwise-identical
outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, save_config
from .motion_refine import (
    STAGE1_CHANNELS, STAGE1_GROUPS, ROW_GROUPS, _target_offsets,
    gather_params, run_motion_stage, scene_extent,
)
from .objectives import evaluate_supervision
from .optim import Adam
from .priors import PriorDataset, prior_entries
from .render.backward import rasterize_backward
from .render.raster import rasterize
from .rng import stream
from .scene import (
    GaussianSet, MotionBases, prune_gaussians, save_checkpoint,
)
from .semantic_refine import run_semantic_stage
from .tensor_store import write_container

INIT_SEM_LOGIT = 6.0

STAGE3_GROUPS = STAGE1_GROUPS + ("color", "sem_logit")


@dataclass
class PipelineResult:
    scene: GaussianSet
    bases: MotionBases
    dataset: PriorDataset      # priors after refinement
    log: list
    extent: float


def chunk_sequence(t_frames: int, chunk_len: int) -> list:
    """Ranges [iL, min((i+1)L, T)) partitioning [0, T)."""
    if t_frames < 1 or chunk_len < 1:
        raise ValueError("t_frames and chunk_len must be >= 1")
    return [range(i, min(i + chunk_len, t_frames))
            for i in range(0, t_frames, chunk_len)]


# --------------------------------------------------------- initialization


INIT_POOL_HW = 2    # half-width of the residual pooling window


def _box_sum(field, m: int):
    """Sum over a (2m+1)^2 window at every position, zero padded."""
    h, w = field.shape[:2]
    pad = np.zeros((h + 2 * m + 1, w + 2 * m + 1) + field.shape[2:])
    pad[m + 1:m + 1 + h, m + 1:m + 1 + w] = field
    ii = pad.cumsum(axis=0).cumsum(axis=1)
    k = 2 * m + 1
    return ii[k:, k:] - ii[:-k, k:] - ii[k:, :-k] + ii[:-k, :-k]


def _dynamic_flags(dataset, t: int, thr_px: float) -> np.ndarray:
    """Pixels [H,W] whose prior tracks move in a way the camera cannot explain.

    For each available offset, the prior track is compared against the
    static reprojection of the pixel's own unprojected point. Residual
    vectors are averaged over a small window of valid neighbors before
    taking the magnitude: per-pixel prior noise is independent and
    cancels, while real object motion is locally coherent and survives.
    A pixel whose own residual is valid and under half the threshold is
    never flagged; that keeps the window from smearing object motion
    into the static rim around it. Offsets combine by any().
    """
    fr = dataset.frames[t]
    cam = dataset.cameras[t]
    h, w = fr.mask.shape
    ys, xs = np.mgrid[0:h, 0:w]
    uv = np.stack([xs, ys], axis=-1).reshape(-1, 2).astype(np.float64)
    z = np.where(fr.depth_valid, fr.depth, 1.0).reshape(-1)
    pos = cam.unproject(uv, z)
    flags = np.zeros((h, w), dtype=bool)
    for d in sorted(fr.tracks):
        if not 0 <= t + d < dataset.t_frames:
            continue
        uv_prior, valid = fr.tracks[d]
        cam2 = dataset.cameras[t + d]
        uv_static = cam2.project(cam2.world_to_cam(pos)).reshape(h, w, 2)
        ok = valid & fr.depth_valid
        r = np.where(ok[..., None], uv_prior - uv_static, 0.0)
        den = np.maximum(_box_sum(ok.astype(np.float64), INIT_POOL_HW), 1.0)
        mean_r = _box_sum(r, INIT_POOL_HW) / den[..., None]
        own = np.linalg.norm(r, axis=-1)
        still = ok & (own <= 0.5 * thr_px)
        flags |= (np.linalg.norm(mean_r, axis=-1) > thr_px) & ~still
    return flags


def _init_rows_for_frame(dataset, t: int, labels_wanted, cfg: RunConfig):
    """Unproject every stride-th pixel of frame t into Gaussian rows."""
    fr = dataset.frames[t]
    cam = dataset.cameras[t]
    h, w = fr.mask.shape
    s = cfg.init_stride
    ys, xs = np.mgrid[s // 2:h:s, s // 2:w:s]
    ys, xs = ys.ravel(), xs.ravel()
    keep = fr.depth_valid[ys, xs]
    if labels_wanted is not None:
        keep &= np.isin(fr.mask[ys, xs], labels_wanted)
    ys, xs = ys[keep], xs[keep]
    if len(ys) == 0:
        return None
    uv = np.stack([xs, ys], axis=-1).astype(np.float64)
    z = fr.depth[ys, xs]
    pos = cam.unproject(uv, z)

    dynamic = _dynamic_flags(dataset, t, cfg.init_motion_px)[ys, xs]

    labels = fr.mask[ys, xs]
    n = len(ys)
    k1 = dataset.num_objects + 1
    sem = np.zeros((n, k1))
    sem[np.arange(n), labels] = INIT_SEM_LOGIT
    quat0 = np.zeros((n, 4))
    quat0[:, 0] = 1.0
    fx = dataset.cameras[t].fx
    scale = 0.5 * cfg.init_stride * z / fx
    return GaussianSet(
        mu0=pos,
        quat0=quat0,
        log_scale=np.log(scale)[:, None].repeat(3, axis=1),
        opacity_logit=np.zeros(n),
        color=fr.image[ys, xs].copy(),
        sem_logit=sem,
        unc_logit=np.zeros(n),
        coeff_logit=np.zeros((n, cfg.num_bases)),
        is_dynamic=dynamic,
    )


def initialize_scene(dataset: PriorDataset, cfg: RunConfig):
    """Frame-0 subsample, plus mid-sequence pixels for late arrivals."""
    parts = [_init_rows_for_frame(dataset, 0, None, cfg)]
    if parts[0] is None:
        raise ValueError("frame 0 has no valid depth to initialize from")
    tm = dataset.t_frames // 2
    if tm > 0:
        seen = set(np.unique(dataset.frames[0].mask)) - {0}
        there = set(np.unique(dataset.frames[tm].mask)) - {0}
        missing = sorted(there - seen)
        if missing:
            extra = _init_rows_for_frame(dataset, tm, np.array(missing), cfg)
            if extra is not None:
                parts.append(extra)
    merged = {}
    for name in ("mu0", "quat0", "log_scale", "opacity_logit", "color",
                 "sem_logit", "unc_logit", "coeff_logit", "is_dynamic"):
        merged[name] = np.concatenate([getattr(p, name) for p in parts], axis=0)
    scene = GaussianSet(**merged)
    scene.validate()
    bases = MotionBases.identity(cfg.num_bases, dataset.t_frames)
    return scene, bases


# ------------------------------------------------------------ stage three


def _run_global_stage(scene, bases, dataset, cfg: RunConfig, opt: Adam, rng):
    """Joint optimization of every field over the full sequence."""
    full = range(0, dataset.t_frames)
    half = cfg.chunk_len // 2
    log: list[dict] = []
    snap = (scene.copy(), bases.copy(), opt.snapshot())
    diverged = 0

    for s in range(cfg.steps_stage3):
        t = int(rng.integers(dataset.t_frames))
        fr = dataset.frames[t]
        offs = _target_offsets(t, full, half, fr.tracks)
        d = offs[int(rng.integers(len(offs)))] if offs else None
        cam_t = dataset.cameras[t]
        if d is None:
            out = rasterize(scene, bases, cam_t, t, channels=("color", "sem"))
            res = evaluate_supervision(out, cam_t, None, fr.image, fr.mask,
                                       weights=cfg.weights, cfg=cfg.objective,
                                       include_motion=False)
        else:
            fr2 = dataset.frames[t + d]
            tracks, valid = fr.tracks[d]
            out = rasterize(scene, bases, cam_t, t, t_target=t + d,
                            channels=STAGE1_CHANNELS)
            res = evaluate_supervision(
                out, cam_t, dataset.cameras[t + d], fr.image, fr.mask,
                image_tp=fr2.image, labels_tp=fr2.mask, depth_tp=fr2.depth,
                tracks_prior=tracks, valid_prior=valid,
                weights=cfg.weights, cfg=cfg.objective)

        if not np.isfinite(res.total):
            diverged += 1
            if diverged > 1:
                raise RuntimeError("global stage diverged twice; aborting")
            scene, bases = snap[0].copy(), snap[1].copy()
            opt.restore(snap[2])
            opt.halve_lrs()
            log.append({"stage": 3, "step": s, "t": t, "event": "diverged"})
            continue

        grads = rasterize_backward(out, res.grads)
        opt.step(gather_params(scene, bases, STAGE3_GROUPS), grads)
        row = {"stage": 3, "step": s, "t": t, "total": res.total,
               "n_gaussians": scene.count}
        row.update(res.terms)
        log.append(row)

        if cfg.prune_every > 0 and (s + 1) % cfg.prune_every == 0:
            pruned, keep = prune_gaussians(scene, cfg.prune_min_opacity)
            if pruned.count == 0:
                log.append({"stage": 3, "step": s, "event": "prune_skipped"})
            elif pruned.count < scene.count:
                for name in ROW_GROUPS:
                    opt.select_rows(name, keep)
                log.append({"stage": 3, "step": s, "event": "pruned",
                            "n_dropped": scene.count - pruned.count})
                scene = pruned
            snap = (scene.copy(), bases.copy(), opt.snapshot())

    return scene, bases, log


# ---------------------------------------------------------------- driver


def _write_log_csv(path, rows) -> None:
    lead = ["stage", "chunk", "round", "step", "t", "event"]
    keys = set()
    for r in rows:
        keys.update(r)
    cols = [k for k in lead if k in keys] + sorted(keys - set(lead))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            writer.writerow([_cell(r.get(k)) for k in cols])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def run_pipeline(dataset: PriorDataset, cfg: RunConfig, segmenter=None,
                 out_dir=None) -> PipelineResult:
    """Full schedule: init, per-chunk stages 1+2, global stage 3.

    The dataset's prior masks are refined in place (pass a copy to keep
    the originals). segmenter=None disables prior refinement regardless
    of cfg.refine_enabled. Deterministic given cfg.seed.
    """
    cfg.validate()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_config(os.path.join(out_dir, "config.cfg"), cfg)

    def checkpoint(name, scene, bases):
        if out_dir:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{name}.m4dc"),
                            scene, bases, dataset.cameras)

    scene, bases = initialize_scene(dataset, cfg)
    extent = scene_extent(scene)
    opt = Adam(cfg.lr.resolve(extent))
    log: list[dict] = [{"stage": 0, "event": "init", "n_gaussians": scene.count}]
    checkpoint("init", scene, bases)

    if segmenter is None:
        cfg = dataclasses.replace(cfg, refine_enabled=False)

    chunks = chunk_sequence(dataset.t_frames, cfg.chunk_len)
    try:
        for i, chunk in enumerate(chunks):
            scene, bases, rows = run_motion_stage(
                scene, bases, dataset, chunk, cfg, opt=opt,
                rng=stream(cfg.seed, "stage1", i))
            for r in rows:
                r["chunk"] = i
            log.extend(rows)

            scene, bases, rows = run_semantic_stage(
                scene, bases, dataset, chunk, segmenter, cfg, opt=opt,
                rng=stream(cfg.seed, "stage2", i))
            for r in rows:
                r["chunk"] = i
            log.extend(rows)
            checkpoint(f"chunk{i:02d}", scene, bases)

        scene, bases, rows = _run_global_stage(
            scene, bases, dataset, cfg, opt, rng=stream(cfg.seed, "stage3"))
        log.extend(rows)
    except Exception:
        checkpoint("abort", scene, bases)
        if out_dir:
            _write_log_csv(os.path.join(out_dir, "log.csv"), log)
        raise

    checkpoint("final", scene, bases)
    if out_dir:
        refined_dir = os.path.join(out_dir, "priors_refined")
        os.makedirs(refined_dir, exist_ok=True)
        for t, fr in enumerate(dataset.frames):
            write_container(os.path.join(refined_dir, f"prior_{t:04d}.m4dc"),
                            prior_entries(fr, dataset.num_objects))
        _write_log_csv(os.path.join(out_dir, "log.csv"), log)

    return PipelineResult(scene=scene, bases=bases, dataset=dataset,
                          log=log, extent=extent)
