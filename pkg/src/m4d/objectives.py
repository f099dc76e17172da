"""Training objectives over rendered maps and 2-D priors.

Five terms supervise a render of frame t against priors:

- rgb:   L1 between rendered color and the frame image.
- sem:   per-pixel NLL of the prior label under composited class probs.
- track: confidence-weighted 2-D distance between predicted tracks into a
  target frame t' and prior tracks, over valid pixels.
- depth: confidence-weighted L1 between the depth of the transported
  point in the target camera and the target-frame depth prior sampled
  bilinearly at the predicted track point.
- consistency: BCE pulling the rendered confidence toward a
  self-consistency indicator (color and label agreement at the tracked
  point).

Predicted tracks are anchored: u(p) = p + proj_t'(X_t'(p)) - proj_t(X_t(p)),
with both composited position channels normalized by accumulated alpha.
The systematic compositing bias is identical at both projections and
cancels, so a static scene rendered into its own camera predicts u(p) = p
exactly.

evaluate_supervision composes the terms and assembles per-pixel upstream
gradients for rasterize_backward. The standalone loss functions mirror it
one term at a time for direct testing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .render.raster import RenderOutput
from .scene import Camera


@dataclass
class LossWeights:
    rgb: float = 1.0
    sem: float = 0.5
    track: float = 2.0
    depth: float = 0.5
    consistency: float = 2.0


@dataclass
class ObjectiveConfig:
    alpha_min: float = 0.5       # pixels below this accumulated alpha are unsupervised
    color_delta: float = 0.1     # L2 color agreement threshold for the consistency target
    bce_clamp: float = 1e-6
    sem_clamp: float = 1e-6
    z_near: float = 0.01
    track_eps: float = 1e-9


# ---------------------------------------------------------------- sampling


def bilinear_sample(img: np.ndarray, pts: np.ndarray):
    """Sample img [H,W] or [H,W,C] at pts [M,2] (x, y) in-bounds.

    Returns (values, grad_x, grad_y). Callers must pre-filter points to
    [0, W-1] x [0, H-1]; coordinates exactly on the far edge are handled.
    """
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    x = pts[:, 0]
    y = pts[:, 1]
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    vals = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)
    gx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    gy = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
    if squeeze:
        return vals[:, 0], gx[:, 0], gy[:, 0]
    return vals, gx, gy


def nearest_sample(img: np.ndarray, pts: np.ndarray):
    h, w = img.shape[:2]
    x = np.clip(np.rint(pts[:, 0]).astype(np.int64), 0, w - 1)
    y = np.clip(np.rint(pts[:, 1]).astype(np.int64), 0, h - 1)
    return img[y, x]


def _pixel_grid(h: int, w: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return np.stack([xs, ys], axis=-1)  # [H, W, 2] (x, y)


def _project_with_jac(cam: Camera, pts: np.ndarray, z_near: float):
    """Pinhole projection of world points [M,3] with Jacobian [M,2,3]."""
    R = cam.R_wc
    pc = pts @ R.T + cam.t_wc
    z = pc[:, 2]
    ok = z > z_near
    zs = np.where(ok, z, 1.0)
    uv = np.stack([cam.fx * pc[:, 0] / zs + cam.cx, cam.fy * pc[:, 1] / zs + cam.cy], -1)
    Jc = np.zeros((pts.shape[0], 2, 3))
    Jc[:, 0, 0] = cam.fx / zs
    Jc[:, 0, 2] = -cam.fx * pc[:, 0] / zs**2
    Jc[:, 1, 1] = cam.fy / zs
    Jc[:, 1, 2] = -cam.fy * pc[:, 1] / zs**2
    J = np.einsum("mab,bj->maj", Jc, R, optimize=False)
    return uv, z, ok, J


def project_traj(traj3d: np.ndarray, alpha: np.ndarray, cam: Camera,
                 alpha_min: float = 0.5, z_near: float = 0.01):
    """Project a composited trajectory map into a camera.

    traj3d [H,W,3] is normalized by accumulated alpha before projection.
    Returns (tracks2d [H,W,2], depth [H,W], valid [H,W]); valid requires
    alpha above alpha_min and the point in front of the camera.
    """
    h, w = alpha.shape
    ac = np.maximum(alpha, 1e-12)
    pts = (traj3d / ac[..., None]).reshape(-1, 3)
    uv, z, ok, _ = _project_with_jac(cam, pts, z_near)
    valid = ok.reshape(h, w) & (alpha > alpha_min)
    return uv.reshape(h, w, 2), z.reshape(h, w), valid


# ------------------------------------------------------------ loss terms


def loss_rgb(rendered: np.ndarray, image: np.ndarray):
    """L1 mean over all pixels and channels; also the per-pixel error map."""
    diff = rendered - image
    e_map = np.abs(diff).mean(axis=-1)
    return float(np.abs(diff).mean()), e_map


def loss_semantic(sem_probs: np.ndarray, labels: np.ndarray, clamp: float = 1e-6):
    """Mean NLL of the prior label; probabilities clamped below at `clamp`."""
    h, w = labels.shape
    p = sem_probs[np.arange(h)[:, None], np.arange(w)[None, :], labels]
    e_map = -np.log(np.maximum(p, clamp))
    return float(e_map.mean()), e_map


def loss_track(tracks_pred: np.ndarray, tracks_prior: np.ndarray,
               valid: np.ndarray, conf: np.ndarray, eps: float = 1e-9):
    """Mean over valid pixels of conf * ||pred - prior||."""
    if not valid.any():
        return 0.0
    d = np.linalg.norm(tracks_pred - tracks_prior, axis=-1)
    return float((conf[valid] * d[valid]).mean())


def loss_depth(depth_pred: np.ndarray, depth_prior_target: np.ndarray,
               tracks_pred: np.ndarray, valid: np.ndarray, conf: np.ndarray):
    """Mean over valid pixels of conf * |pred - prior sampled at the track|."""
    if not valid.any():
        return 0.0
    pts = tracks_pred[valid]
    sampled, _, _ = bilinear_sample(depth_prior_target, pts)
    return float((conf[valid] * np.abs(depth_pred[valid] - sampled)).mean())


def consistency_target(image_t, image_tp, labels_t, labels_tp,
                       tracks_pred, valid, delta: float = 0.1):
    """Self-consistency indicator: 1 where color and label agree at the track."""
    h, w = labels_t.shape
    out = np.zeros((h, w))
    if not valid.any():
        return out
    pts = tracks_pred[valid]
    col, _, _ = bilinear_sample(image_tp, pts)
    col_ok = np.linalg.norm(image_t[valid] - col, axis=-1) < delta
    lab_ok = labels_t[valid] == nearest_sample(labels_tp, pts)
    out[valid] = (col_ok & lab_ok).astype(np.float64)
    return out


def loss_confidence(conf: np.ndarray, target: np.ndarray, valid: np.ndarray,
                    clamp: float = 1e-6):
    """BCE between rendered confidence and the consistency target, over valid."""
    if not valid.any():
        return 0.0
    c = np.clip(conf[valid], clamp, 1.0 - clamp)
    t = target[valid]
    return float((-(t * np.log(c) + (1 - t) * np.log(1 - c))).mean())


def total_loss(terms: dict, weights: LossWeights) -> float:
    lam = {"rgb": weights.rgb, "sem": weights.sem, "track": weights.track,
           "depth": weights.depth, "consistency": weights.consistency}
    return float(sum(lam[k] * v for k, v in terms.items() if k in lam))


# ------------------------------------------------- composite evaluation


@dataclass
class SupervisionResult:
    total: float
    terms: dict
    grads: dict                      # upstream maps for rasterize_backward
    e_rgb: np.ndarray | None = None
    e_sem: np.ndarray | None = None
    tracks_pred: np.ndarray | None = None
    valid: np.ndarray | None = None
    w_hat: np.ndarray | None = None


def evaluate_supervision(
    out: RenderOutput,
    cam_t: Camera,
    cam_tp: Camera | None,
    image_t: np.ndarray,
    labels_t: np.ndarray,
    image_tp: np.ndarray | None = None,
    labels_tp: np.ndarray | None = None,
    depth_tp: np.ndarray | None = None,
    tracks_prior: np.ndarray | None = None,
    valid_prior: np.ndarray | None = None,
    weights: LossWeights | None = None,
    cfg: ObjectiveConfig | None = None,
    include_rgb: bool = True,
    include_sem: bool = True,
    include_motion: bool = True,
) -> SupervisionResult:
    """Evaluate the weighted objective and per-pixel upstream gradients.

    Motion terms (track/depth/consistency) need a render carrying traj
    channels plus the target-frame priors; they are skipped when
    include_motion is False or no prior tracks exist. The semantic error
    map is always computed when the channel is present (the resampler
    needs it even in stages where the term carries no weight).
    """
    weights = weights or LossWeights()
    cfg = cfg or ObjectiveConfig()
    h, w = out.alpha.shape
    terms: dict[str, float] = {}
    grads: dict[str, np.ndarray] = {}
    e_rgb = e_sem = None

    if out.color is not None:
        val, e_rgb = loss_rgb(out.color, image_t)
        if include_rgb:
            terms["rgb"] = val
            grads["color"] = weights.rgb * np.sign(out.color - image_t) / out.color.size

    if out.semantic_probs is not None:
        val, e_sem = loss_semantic(out.semantic_probs, labels_t, cfg.sem_clamp)
        if include_sem:
            terms["sem"] = val
            p = out.semantic_probs[
                np.arange(h)[:, None], np.arange(w)[None, :], labels_t
            ]
            g = np.zeros_like(out.semantic_probs)
            coef = np.where(p > cfg.sem_clamp, -1.0 / np.maximum(p, cfg.sem_clamp), 0.0)
            np.put_along_axis(g, labels_t[..., None], coef[..., None], axis=-1)
            grads["sem"] = weights.sem * g / (h * w)

    tracks_pred = valid = w_hat = None
    if include_motion and out.traj3d is not None and tracks_prior is not None:
        res = _motion_terms(
            out, cam_t, cam_tp, image_t, labels_t, image_tp, labels_tp,
            depth_tp, tracks_prior, valid_prior, weights, cfg,
        )
        terms.update(res["terms"])
        for k, v in res["grads"].items():
            grads[k] = grads.get(k, 0.0) + v
        tracks_pred, valid, w_hat = res["tracks_pred"], res["valid"], res["w_hat"]

    return SupervisionResult(
        total=total_loss(terms, weights), terms=terms, grads=grads,
        e_rgb=e_rgb, e_sem=e_sem, tracks_pred=tracks_pred, valid=valid, w_hat=w_hat,
    )


def _motion_terms(out, cam_t, cam_tp, image_t, labels_t, image_tp, labels_tp,
                  depth_tp, tracks_prior, valid_prior, weights, cfg):
    h, w = out.alpha.shape
    alpha = out.alpha
    ac = np.maximum(alpha, 1e-12)
    Yt = (out.traj3d / ac[..., None]).reshape(-1, 3)
    Ys = (out.traj3d_anchor / ac[..., None]).reshape(-1, 3)

    uv_t, zt_dummy, ok_s, J_s = _project_with_jac(cam_t, Ys, cfg.z_near)
    uv_p, z_p, ok_p, J_p = _project_with_jac(cam_tp, Yt, cfg.z_near)
    grid = _pixel_grid(h, w).reshape(-1, 2)
    u_pred = grid + uv_p - uv_t                     # [M, 2]
    d_pred = z_p                                    # depth in target camera

    inb = (
        (u_pred[:, 0] >= 0.0) & (u_pred[:, 0] <= w - 1)
        & (u_pred[:, 1] >= 0.0) & (u_pred[:, 1] <= h - 1)
    )
    valid = (
        valid_prior.reshape(-1)
        & (alpha.reshape(-1) > cfg.alpha_min)
        & ok_s & ok_p & inb
    )
    n = int(valid.sum())
    tracks_pred_map = u_pred.reshape(h, w, 2)
    if n == 0:
        zero = {"track": 0.0, "depth": 0.0, "consistency": 0.0}
        return {"terms": zero, "grads": {}, "tracks_pred": tracks_pred_map,
                "valid": valid.reshape(h, w), "w_hat": np.zeros((h, w))}

    conf = out.confidence.reshape(-1)
    vi = np.nonzero(valid)[0]
    cw = conf[vi]

    # track term
    delta_u = u_pred[vi] - tracks_prior.reshape(-1, 2)[vi]
    dist = np.linalg.norm(delta_u, axis=-1)
    l_track = float((cw * dist).mean())
    unit = delta_u / np.maximum(dist, cfg.track_eps)[:, None]
    dU = weights.track * (cw[:, None] * unit) / n    # dL/du_pred at valid
    g_conf_flat = np.zeros(h * w)
    g_conf_flat[vi] = weights.track * dist / n

    # depth term
    sampled, sgx, sgy = bilinear_sample(depth_tp, u_pred[vi])
    derr = d_pred[vi] - sampled
    l_depth = float((cw * np.abs(derr)).mean())
    sgn = np.sign(derr)
    dDpred = weights.depth * (cw * sgn) / n           # dL/dd_pred
    dU += weights.depth * (cw * -sgn / n)[:, None] * np.stack([sgx, sgy], -1)
    g_conf_flat[vi] += weights.depth * np.abs(derr) / n

    # consistency target and BCE
    col, _, _ = bilinear_sample(image_tp, u_pred[vi])
    col_ok = np.linalg.norm(image_t.reshape(-1, 3)[vi] - col, axis=-1) < cfg.color_delta
    lab_ok = labels_t.reshape(-1)[vi] == nearest_sample(labels_tp, u_pred[vi])
    what = (col_ok & lab_ok).astype(np.float64)
    c = np.clip(cw, cfg.bce_clamp, 1.0 - cfg.bce_clamp)
    l_cons = float((-(what * np.log(c) + (1 - what) * np.log(1 - c))).mean())
    interior = (cw > cfg.bce_clamp) & (cw < 1.0 - cfg.bce_clamp)
    g_conf_flat[vi] += weights.consistency * interior * (-what / c + (1 - what) / (1 - c)) / n

    # chain u_pred and d_pred back to the traj channels and alpha
    dYt = np.zeros((h * w, 3))
    dYs = np.zeros((h * w, 3))
    dYt[vi] = np.einsum("ma,maj->mj", dU, J_p[vi], optimize=False)
    dYs[vi] = -np.einsum("ma,maj->mj", dU, J_s[vi], optimize=False)
    dYt[vi] += dDpred[:, None] * cam_tp.R_wc[2][None, :]

    acf = ac.reshape(-1)[:, None]
    g_traj = (dYt / acf).reshape(h, w, 3)
    g_anchor = (dYs / acf).reshape(h, w, 3)
    g_alpha = -((dYt * Yt).sum(-1) + (dYs * Ys).sum(-1)) / acf[:, 0]
    g_alpha = g_alpha.reshape(h, w)

    w_hat_map = np.zeros(h * w)
    w_hat_map[vi] = what
    return {
        "terms": {"track": l_track, "depth": l_depth, "consistency": l_cons},
        "grads": {
            "traj": g_traj, "traj_anchor": g_anchor, "alpha": g_alpha,
            "conf": g_conf_flat.reshape(h, w),
        },
        "tracks_pred": tracks_pred_map,
        "valid": valid.reshape(h, w),
        "w_hat": w_hat_map.reshape(h, w),
    }
