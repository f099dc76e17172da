"""Brute-force reference renderer.

Independent of the tiled path on purpose: its own quaternion-to-matrix
conversion, motion blending, projection and per-pixel compositing, written
from the equations rather than shared helpers. No footprint culling, no
alpha cutoff, no early termination; every Gaussian in front of the near
plane contributes to every pixel. 64-bit throughout. Slow and trusted.
"""
from __future__ import annotations

import numpy as np

from ..scene import Camera, GaussianSet, MotionBases
from .raster import RenderOutput


def _unit(v, axis=-1):
    return v / np.maximum(np.linalg.norm(v, axis=axis, keepdims=True), 1e-12)


def _quat_to_mat(q):
    """[..., 4] scalar-first -> [..., 3, 3], own transcription."""
    q = _unit(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = np.stack([2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)], -1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z], -1)
    return np.stack([row0, row1, row2], axis=-2)


def _quat_prod(a, b):
    w1, v1 = a[..., :1], a[..., 1:]
    w2, v2 = b[..., :1], b[..., 1:]
    w = w1 * w2 - np.sum(v1 * v2, axis=-1, keepdims=True)
    v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    return np.concatenate([w, v], axis=-1)


def _poses(scene: GaussianSet, bases: MotionBases, t: int):
    """World position and orientation of every Gaussian at frame t."""
    logits = scene.coeff_logit - scene.coeff_logit.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w = w / w.sum(axis=1, keepdims=True)                     # [N, B]
    bq = _unit(bases.quat[:, t, :])                          # [B, 4]
    ref = np.argmax(w, axis=1)
    flip = np.sign(np.sum(bq[ref][:, None, :] * bq[None, :, :], axis=-1))
    flip = np.where(flip == 0, 1.0, flip)                    # [N, B]
    q_mix = _unit(np.sum((w * flip)[:, :, None] * bq[None, :, :], axis=1))
    t_mix = w @ bases.trans[:, t, :]
    R_mix = _quat_to_mat(q_mix)
    q0 = _unit(scene.quat0)
    pos = np.squeeze(R_mix @ scene.mu0[:, :, None], -1) + t_mix
    orient = _quat_prod(q_mix, q0)
    dyn = scene.is_dynamic
    pos = np.where(dyn[:, None], pos, scene.mu0)
    orient = np.where(dyn[:, None], orient, q0)
    return pos, orient


def oracle_rasterize(
    scene: GaussianSet,
    bases: MotionBases,
    camera: Camera,
    t: int,
    t_target: int | None = None,
    dilation: float = 0.3,
    z_near: float = 0.01,
    alpha_max: float = 0.995,
) -> RenderOutput:
    pos, orient = _poses(scene, bases, t)
    pos_tp = _poses(scene, bases, t_target)[0] if t_target is not None else None

    R_wc = _quat_to_mat(np.asarray(camera.quat_wc, dtype=np.float64))
    p_cam = pos @ R_wc.T + camera.t_wc
    front = p_cam[:, 2] > z_near

    # world covariance, then camera, then image plane
    Rg = _quat_to_mat(orient)
    s2 = np.exp(2.0 * scene.log_scale)
    Sigma_w = Rg @ (s2[:, :, None] * np.swapaxes(Rg, 1, 2))
    Sigma_c = R_wc @ Sigma_w @ R_wc.T

    z = np.where(front, p_cam[:, 2], 1.0)
    x, y = p_cam[:, 0], p_cam[:, 1]
    fx, fy = camera.fx, camera.fy
    J = np.zeros((scene.count, 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    C = J @ Sigma_c @ np.swapaxes(J, 1, 2)
    C[:, 0, 0] += dilation
    C[:, 1, 1] += dilation
    mean2d = np.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], axis=-1)

    order = np.argsort(z, kind="stable")
    order = order[front[order]]

    H, W = camera.height, camera.width
    px, py = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    px, py = px.ravel(), py.ravel()                     # [P]

    dx = px[None, :] - mean2d[order, 0, None]           # [S, P]
    dy = py[None, :] - mean2d[order, 1, None]
    det = C[order, 0, 0] * C[order, 1, 1] - C[order, 0, 1] ** 2
    qf = (
        C[order, 1, 1, None] * dx * dx
        - 2.0 * C[order, 0, 1, None] * dx * dy
        + C[order, 0, 0, None] * dy * dy
    ) / det[:, None]
    opac = 1.0 / (1.0 + np.exp(-scene.opacity_logit[order]))
    a = np.minimum(opac[:, None] * np.exp(-0.5 * qf), alpha_max)
    t_before = np.vstack([np.ones((1, a.shape[1])), np.cumprod(1.0 - a, axis=0)[:-1]])
    wgt = a * t_before                                  # [S, P]

    el = scene.sem_logit[order] - scene.sem_logit[order].max(axis=1, keepdims=True)
    probs = np.exp(el)
    probs = probs / probs.sum(axis=1, keepdims=True)
    conf = 1.0 / (1.0 + np.exp(-scene.unc_logit[order]))

    def comp(vals):  # vals [S, C] -> [H, W, C]
        return (wgt.T @ vals).reshape(H, W, -1)

    color = comp(scene.color[order])
    sem = comp(probs)
    depth = comp(z[order, None])[..., 0]
    alpha = wgt.sum(axis=0).reshape(H, W)
    confidence = comp(conf[:, None])[..., 0]
    traj = comp(pos_tp[order]) if pos_tp is not None else None
    anchor = comp(pos[order]) if pos_tp is not None else None

    return RenderOutput(
        color=color, semantic_probs=sem, depth=depth, alpha=alpha,
        confidence=confidence, traj3d=traj, traj3d_anchor=anchor, cache=None,
    )
