"""Stage-1 per-chunk motion optimization and adaptive resampling.

Each step renders one chunk frame against a sampled target offset,
evaluates the photometric/track/depth/consistency objective, and steps
the optimizer on motion bases, coefficients, uncertainty logits, and
Gaussian geometry. Appearance (color) and semantic logits stay frozen
until later stages. Every resample_every steps the current error maps
feed adaptive resampling.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np

from .config import ResampleConfig, RunConfig
from .objectives import evaluate_supervision
from .optim import Adam
from .regions import connected_components
from .render.backward import rasterize_backward
from .render.raster import rasterize
from .rng import stream
from .scene import (
    GaussianSet, MotionBases, blend_transforms, insert_gaussians,
    motion_weights, pose_at,
)
from . import quat

STAGE1_GROUPS = (
    "mu0", "quat0", "log_scale", "opacity_logit",
    "unc_logit", "coeff_logit", "basis_quat", "basis_trans",
)
STAGE1_CHANNELS = ("color", "sem", "depth", "conf", "traj")

# scene-row groups whose optimizer moments need row surgery on insert/prune
ROW_GROUPS = (
    "mu0", "quat0", "log_scale", "opacity_logit", "color",
    "sem_logit", "unc_logit", "coeff_logit",
)


def scene_extent(scene: GaussianSet) -> float:
    span = scene.mu0.max(axis=0) - scene.mu0.min(axis=0)
    return float(np.linalg.norm(span))


def gather_params(scene: GaussianSet, bases: MotionBases, groups) -> dict:
    arrays = {
        "mu0": scene.mu0, "quat0": scene.quat0, "log_scale": scene.log_scale,
        "opacity_logit": scene.opacity_logit, "color": scene.color,
        "sem_logit": scene.sem_logit, "unc_logit": scene.unc_logit,
        "coeff_logit": scene.coeff_logit,
        "basis_quat": bases.quat, "basis_trans": bases.trans,
    }
    return {name: arrays[name] for name in groups}


def _target_offsets(t: int, chunk: range, half: int, available) -> list:
    """Offsets from {+-1, +-half} that stay in the chunk and have priors."""
    seen, out = set(), []
    for d in (1, -1, half, -half):
        if d == 0 or d in seen:
            continue
        seen.add(d)
        if chunk.start <= t + d < chunk.stop and d in available:
            out.append(d)
    return out


def run_motion_stage(scene, bases, dataset, chunk: range, cfg: RunConfig,
                     opt: Adam | None = None, rng=None):
    """Optimize motion/geometry over one chunk. Returns (scene, bases, log).

    The divergence guard snapshots state at entry and after each resample;
    a non-finite total restores the snapshot and halves learning rates
    once, a second occurrence raises RuntimeError.
    """
    if rng is None:
        rng = stream(cfg.seed, "motion", chunk.start)
    if opt is None:
        opt = Adam(cfg.lr.resolve(scene_extent(scene)))
    log: list[dict] = []
    snap = (scene.copy(), bases.copy(), opt.snapshot())
    diverged = 0

    # Hold the confidence field for the head of the stage: the BCE target
    # keys off the scene's own predicted correspondences, so before motion
    # has converged it reads 0 almost everywhere and, together with the
    # w-weighted residuals, drives w to 0 and switches the motion
    # supervision off for good. Weighting at a fixed 0.5 until the motion
    # settles breaks that feedback; the field then relaxes to its
    # equilibrium in the remaining steps.
    warm_steps = math.ceil(cfg.conf_warmup_frac * cfg.steps_stage1)
    warm_weights = replace(cfg.weights, consistency=0.0)
    warm_groups = tuple(g for g in STAGE1_GROUPS if g != "unc_logit")

    half = cfg.chunk_len // 2
    for s in range(cfg.steps_stage1):
        warming = s < warm_steps
        wts = warm_weights if warming else cfg.weights
        t = chunk.start + int(rng.integers(len(chunk)))
        fr = dataset.frames[t]
        offs = _target_offsets(t, chunk, half, fr.tracks)
        d = offs[int(rng.integers(len(offs)))] if offs else None

        cam_t = dataset.cameras[t]
        if d is None:
            out = rasterize(scene, bases, cam_t, t,
                            channels=("color", "sem", "depth"))
            res = evaluate_supervision(
                out, cam_t, None, fr.image, fr.mask,
                weights=wts, cfg=cfg.objective,
                include_sem=False, include_motion=False)
        else:
            fr2 = dataset.frames[t + d]
            tracks, valid = fr.tracks[d]
            out = rasterize(scene, bases, cam_t, t, t_target=t + d,
                            channels=STAGE1_CHANNELS)
            res = evaluate_supervision(
                out, cam_t, dataset.cameras[t + d], fr.image, fr.mask,
                image_tp=fr2.image, labels_tp=fr2.mask, depth_tp=fr2.depth,
                tracks_prior=tracks, valid_prior=valid,
                weights=wts, cfg=cfg.objective, include_sem=False)

        if not np.isfinite(res.total):
            diverged += 1
            if diverged > 1:
                raise RuntimeError("motion stage diverged twice; aborting")
            scene, bases = snap[0].copy(), snap[1].copy()
            opt.restore(snap[2])
            opt.halve_lrs()
            log.append({"stage": 1, "step": s, "t": t, "event": "diverged"})
            continue

        grads = rasterize_backward(out, res.grads)
        groups = warm_groups if warming else STAGE1_GROUPS
        opt.step(gather_params(scene, bases, groups), grads)

        row = {"stage": 1, "step": s, "t": t, "total": res.total,
               "n_gaussians": scene.count}
        row.update(res.terms)
        log.append(row)

        rs = cfg.resample
        if (cfg.resample_enabled and rs.resample_every > 0
                and (s + 1) % rs.resample_every == 0
                and res.e_rgb is not None):
            new = adaptive_resample(scene, bases, res.e_rgb, res.e_sem,
                                    out, cam_t, t, rs, rng)
            if new is not None and new.count:
                scene = insert_gaussians(scene, new)
                for name in ROW_GROUPS:
                    opt.extend_rows(name, new.count)
                log.append({"stage": 1, "step": s, "t": t,
                            "event": "resample", "n_new": new.count})
            snap = (scene.copy(), bases.copy(), opt.snapshot())

    return scene, bases, log


# ------------------------------------------------------------- resampling


def _allocate(areas: np.ndarray, budget: int) -> np.ndarray:
    """Proportional allocation with largest-remainder rounding."""
    total = int(areas.sum())
    if total <= budget:
        return areas.copy()
    exact = budget * areas / total
    base = np.floor(exact).astype(int)
    rem = budget - int(base.sum())
    if rem > 0:
        frac = exact - base
        order = np.lexsort((np.arange(len(areas)), -frac))
        base[order[:rem]] += 1
    return np.minimum(base, areas)


def adaptive_resample(scene: GaussianSet, bases: MotionBases,
                      e_rgb: np.ndarray, e_sem: np.ndarray | None,
                      out, camera, t: int, cfg: ResampleConfig,
                      rng) -> GaussianSet | None:
    """New Gaussians for high-error regions of frame t's render.

    Existing rows are never touched. Returns None when nothing fires.
    """
    if not np.any(scene.is_dynamic):
        warnings.warn("adaptive resampling skipped: no dynamic Gaussians")
        return None
    hot = e_rgb > cfg.theta_rgb
    if e_sem is not None:
        hot |= e_sem > cfg.theta_sem
    labels, n_regions = connected_components(hot)
    if n_regions == 0:
        return None

    areas = np.bincount(labels.ravel(), minlength=n_regions + 1)[1:]
    keep = np.nonzero(areas >= cfg.min_region_area)[0] + 1
    if len(keep) == 0:
        return None
    counts = _allocate(areas[keep - 1], cfg.max_new_per_step)

    h, w = e_rgb.shape
    alpha = out.alpha
    zmap = np.where(alpha > 0.5, out.depth / np.maximum(alpha, 1e-12), 0.0)

    pix = []
    depths = []
    for rid, n_i in zip(keep, counts):
        if n_i == 0:
            continue
        ys, xs = np.nonzero(labels == rid)
        sel = rng.choice(len(ys), size=int(n_i), replace=False)
        zs_region = zmap[ys, xs]
        fallback = np.median(zs_region[zs_region > 0]) if np.any(zs_region > 0) else 0.0
        for j in sel:
            y, x = int(ys[j]), int(xs[j])
            z = zmap[y, x] if zmap[y, x] > 0 else fallback
            if z <= 0:
                continue        # region fully transparent; nothing to anchor to
            pix.append((float(x), float(y)))
            depths.append(z)
    if not pix:
        return None

    uv = np.array(pix)
    world_t = camera.unproject(uv, np.array(depths))

    dyn_idx = np.nonzero(scene.is_dynamic)[0]
    pos_t, _ = pose_at(scene, bases, t)
    donor_pos = pos_t[dyn_idx]
    d2 = ((world_t[:, None, :] - donor_pos[None, :, :]) ** 2).sum(-1)
    donors = dyn_idx[np.argmin(d2, axis=1)]

    # pull the sampled world points back to canonical space through each
    # donor's blended transform
    wts = motion_weights(scene.coeff_logit[donors])
    q_bl, t_bl = blend_transforms(wts, bases, t)
    R = quat.rotmat(q_bl)
    canon = np.einsum("nij,nj->ni", R.transpose(0, 2, 1), world_t - t_bl,
                      optimize=False)

    m = len(donors)
    return GaussianSet(
        mu0=canon,
        quat0=scene.quat0[donors].copy(),
        log_scale=scene.log_scale[donors].copy(),
        opacity_logit=np.zeros(m),
        color=scene.color[donors].copy(),
        sem_logit=scene.sem_logit[donors].copy(),
        unc_logit=np.zeros(m),
        coeff_logit=scene.coeff_logit[donors].copy(),
        is_dynamic=scene.is_dynamic[donors].copy(),
    )
