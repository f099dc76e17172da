"""Sequence-level evaluation against ground truth.

Bridges the optimized scene to the metric suite: rendered masks vs GT
labels (VOS), query-point tracking in 2-D and 3-D, reconstruction
quality, and how well the rendered confidence channel flags corrupted
supervision.
"""

from __future__ import annotations

import numpy as np

from .metrics import epe_3d, jf_sequence, predict_visibility, psnr, ssim, tap_metrics
from .objectives import bilinear_sample
from .render.project import project_gaussians
from .render.raster import RasterConfig, _sigmoid, rasterize
from .scene import Camera, GaussianSet, MotionBases, pose_at
from .semantic_refine import render_semantic_mask

FAR_DEPTH = 1e12


def eval_vos(scene: GaussianSet, bases: MotionBases, cameras,
             gt_masks: np.ndarray, num_objects: int) -> dict:
    """Render per-frame masks and score them against GT labels [T,H,W]."""
    pred = np.stack([
        render_semantic_mask(scene, bases, cameras[t], t)
        for t in range(gt_masks.shape[0])
    ])
    res = jf_sequence(pred, gt_masks, num_objects)
    res["pred_masks"] = pred
    return res


def _metric_depth(out) -> np.ndarray:
    ac = np.maximum(out.alpha, 1e-12)
    # unresolved pixels act as empty space: nothing there can occlude
    return np.where(out.alpha > 0.5, out.depth / ac, FAR_DEPTH)


def _project(cam: Camera, pts: np.ndarray, z_near: float = 0.01):
    pc = cam.world_to_cam(pts)
    z = pc[:, 2]
    safe = np.where(z > z_near, z, 1.0)
    uv = np.stack([cam.fx * pc[:, 0] / safe + cam.cx,
                   cam.fy * pc[:, 1] / safe + cam.cy], axis=-1)
    return uv, z


def _pixel_weights(scene, bases, camera, t, pixels, cfg):
    """Compositing weight of every Gaussian at the given pixel centers.

    Same projection, depth ordering and alpha rules as the renderer, but
    without the tile/footprint cull: a query must see every splat that
    can touch it. Returns (weights [Q,N], camera z [N], positions [N,3]).
    """
    pos, q_rot = pose_at(scene, bases, t)
    proj = project_gaussians(pos, q_rot, scene.log_scale, camera,
                             dilation=cfg.dilation, z_near=cfg.z_near,
                             footprint_sigma=cfg.footprint_sigma)
    order = np.argsort(proj["z"], kind="stable")
    order = order[proj["valid"][order]]
    opac = _sigmoid(scene.opacity_logit)
    mean2d, inv = proj["mean2d"], proj["inv"]
    dx = pixels[None, :, 0] - mean2d[order, 0, None]      # [S, Q]
    dy = pixels[None, :, 1] - mean2d[order, 1, None]
    qf = (inv[order, 0, 0, None] * dx * dx
          + 2.0 * inv[order, 0, 1, None] * dx * dy
          + inv[order, 1, 1, None] * dy * dy)
    a_raw = opac[order, None] * np.exp(-0.5 * qf)
    a = np.where(a_raw < cfg.alpha_cutoff, 0.0, np.minimum(a_raw, cfg.alpha_max))
    t_before = np.vstack([np.ones((1, a.shape[1])), np.cumprod(1.0 - a, axis=0)[:-1]])
    w = a * t_before * (t_before >= cfg.transmittance_floor)
    full = np.zeros((len(pixels), scene.count))
    full[:, order] = w.T
    return full, proj["z"], pos


def predict_tracks(scene: GaussianSet, bases: MotionBases, cameras,
                   query_points: np.ndarray, t_source: int = 0,
                   eps_occ: float | None = None):
    """Track query pixels of frame t_source through every frame.

    query_points are [Q,2] (x,y) pixel coordinates. Each query is tied
    to the Gaussians that actually render at its pixel: the source-frame
    compositing weights say which splats the pixel shows, those splats
    vote moving vs static by weight mass, and the winning group's
    weighted camera depth and displacements carry the pixel through
    time. Anchoring on the compositing stack instead of the composited
    depth map keeps a pixel that mixes foreground and backdrop honest:
    the losing group is dropped rather than averaged in. Returns
    (tracks2d [Q,T,2], tracks3d [Q,T,3], visible [Q,T]).
    """
    t_n = len(cameras)
    q = np.asarray(query_points, dtype=np.float64)
    nq = len(q)
    cam0 = cameras[t_source]

    depth_maps = [
        _metric_depth(rasterize(scene, bases, cameras[t], t, channels=("depth",)))
        for t in range(t_n)
    ]

    cw, z_cam, pos_src = _pixel_weights(scene, bases, cam0, t_source, q,
                                        RasterConfig())
    dyn = scene.is_dynamic
    w_dyn = cw @ np.where(dyn, 1.0, 0.0)
    keep_dyn = w_dyn >= 0.5 * cw.sum(axis=1)
    cw = np.where(np.where(keep_dyn[:, None], dyn[None, :], ~dyn[None, :]),
                  cw, 0.0)
    norm = cw.sum(axis=1)
    empty = norm <= 1e-12
    if empty.any():
        # pixel renders nothing of the winning class; nearest splat stands in
        d2 = ((q[empty, None, :] - _project(cam0, pos_src)[0][None, :, :]) ** 2).sum(-1)
        d2 = np.where((z_cam > 0)[None, :], d2, np.inf)
        cw[empty, d2.argmin(axis=1)] = 1.0
        norm = cw.sum(axis=1)
    cw /= norm[:, None]
    p0 = cam0.unproject(q, cw @ z_cam)

    tracks = np.zeros((nq, t_n, 2))
    tracks3d = np.zeros((nq, t_n, 3))
    point_z = np.zeros((nq, t_n))
    for t in range(t_n):
        pos_t, _ = pose_at(scene, bases, t)
        yt = p0 + cw @ (pos_t - pos_src)
        uv_t, z_t = _project(cameras[t], yt)
        tracks[:, t] = uv_t
        tracks3d[:, t] = yt
        point_z[:, t] = z_t

    if eps_occ is None:
        finite = np.concatenate([d[d < FAR_DEPTH].ravel() for d in depth_maps])
        eps_occ = 0.01 * float(finite.max() - finite.min()) if finite.size else 0.05

    visible = np.zeros((nq, t_n), dtype=bool)
    for t in range(t_n):
        vis = predict_visibility(point_z[:, t], tracks[:, t],
                                 depth_maps[t], eps_occ)
        visible[:, t] = vis & (point_z[:, t] > 0)
    return tracks, tracks3d, visible


def eval_track(scene: GaussianSet, bases: MotionBases, cameras, gt: dict,
               eps_occ: float | None = None) -> dict:
    """TAP-style 2-D scores plus 3-D EPE against the GT query tracks."""
    tracks, tracks3d, visible = predict_tracks(
        scene, bases, cameras, gt["query_points"], eps_occ=eps_occ)
    h, w = gt["masks"].shape[1:]
    nq = len(gt["query_points"])
    tap = tap_metrics(tracks, visible, gt["query_tracks"], gt["query_vis"],
                      (h, w), query_frames=np.zeros(nq, dtype=int))
    e3 = epe_3d(tracks3d, gt["query_tracks3d"], gt["query_vis"])
    gv = gt["query_vis"]
    err_px = np.linalg.norm(tracks - gt["query_tracks"], axis=-1)
    diam = float(gt["scene_diameter"])
    return {
        "average_jaccard": tap["average_jaccard"],
        "delta_avg": tap["delta_avg"],
        "occlusion_accuracy": tap["occlusion_accuracy"],
        "track_px": float(err_px[gv].mean()) if gv.any() else 0.0,
        "epe3d": e3["epe"],
        "epe3d_rel": e3["epe"] / diam if diam > 0 else 0.0,
        "delta3d@0.05": e3["delta@0.05"],
        "delta3d@0.1": e3["delta@0.1"],
    }


def eval_nvs(scene: GaussianSet, bases: MotionBases, cameras,
             gt_images: np.ndarray) -> dict:
    """Per-frame PSNR / SSIM of rendered color against GT images [T,H,W,3]."""
    ps, ss = [], []
    for t in range(gt_images.shape[0]):
        out = rasterize(scene, bases, cameras[t], t, channels=("color",))
        ps.append(psnr(out.color, gt_images[t]))
        ss.append(ssim(out.color, gt_images[t]))
    return {
        "psnr": float(np.mean(ps)),
        "ssim": float(np.mean(ss)),
        "psnr_per_frame": ps,
        "ssim_per_frame": ss,
    }


def rank_auc(scores_neg: np.ndarray, scores_pos: np.ndarray) -> float:
    """P(neg > pos) with ties counted half, via the rank-sum statistic."""
    neg = np.asarray(scores_neg, dtype=np.float64).ravel()
    pos = np.asarray(scores_pos, dtype=np.float64).ravel()
    if len(neg) == 0 or len(pos) == 0:
        return 0.5
    both = np.concatenate([neg, pos])
    order = np.argsort(both, kind="stable")
    ranks = np.empty(len(both))
    ranks[order] = np.arange(1, len(both) + 1)
    # average ranks over tied values
    sorted_vals = both[order]
    edges = np.flatnonzero(np.diff(sorted_vals) != 0)
    starts = np.concatenate([[0], edges + 1])
    stops = np.concatenate([edges + 1, [len(both)]])
    for a, b in zip(starts, stops):
        if b - a > 1:
            ranks[order[a:b]] = 0.5 * (a + 1 + b)
    u = ranks[:len(neg)].sum() - len(neg) * (len(neg) + 1) / 2
    return float(u / (len(neg) * len(pos)))


def confidence_auc(scene: GaussianSet, bases: MotionBases, dataset,
                   record) -> float:
    """AUC of the rendered confidence channel against recorded outliers.

    Pools every (frame, offset) pair in the corruption record: among
    pixels whose prior track is valid, clean pixels should carry higher
    rendered w than the ones whose supervision was knocked off target.
    """
    clean, dirty = [], []
    conf_cache: dict[int, np.ndarray] = {}
    for (t, d), outlier in record.outlier_masks.items():
        if t not in conf_cache:
            out = rasterize(scene, bases, dataset.cameras[t], t,
                            channels=("conf",))
            conf_cache[t] = out.confidence
        w_map = conf_cache[t]
        valid = dataset.frames[t].tracks[d][1]
        dirty.append(w_map[valid & outlier])
        clean.append(w_map[valid & ~outlier])
    if not dirty:
        return 0.5
    return rank_auc(np.concatenate(clean), np.concatenate(dirty))
