"""Scene state: canonical Gaussians, shared motion bases, cameras.

Conventions
-----------
- World and camera frames are right-handed; camera x right, y down,
  z forward. Pixel (row r, col c) has continuous coordinates (x=c, y=r)
  at integer pixel centers.
- Quaternions are scalar-first (w, x, y, z) and kept unit-norm by the
  optimizer's projection step; all consumers renormalize defensively.
- A Gaussian's world covariance is R diag(exp(2*log_scale)) Rᵀ.
- Frame t pose of dynamic Gaussian i: mu_t = R_blend mu0 + t_blend,
  q_t = q_blend ⊗ q0, where (R_blend, t_blend) is its coefficient-weighted
  blend of the shared per-frame basis transforms. Static Gaussians keep
  their canonical pose. Bases are pinned to identity at the canonical
  frame t0 = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import quat
from .tensor_store import TensorEntry, read_container, write_container


@dataclass
class GaussianSet:
    """Canonical-frame Gaussian parameters. N rows throughout."""

    mu0: np.ndarray            # [N, 3] canonical positions
    quat0: np.ndarray          # [N, 4] canonical orientations
    log_scale: np.ndarray      # [N, 3]
    opacity_logit: np.ndarray  # [N]
    color: np.ndarray          # [N, 3] in [0, 1]
    sem_logit: np.ndarray      # [N, K+1] class logits, background first
    unc_logit: np.ndarray      # [N] confidence logit (w_i = sigmoid)
    coeff_logit: np.ndarray    # [N, B] motion coefficient logits
    is_dynamic: np.ndarray     # [N] bool

    @property
    def count(self) -> int:
        return self.mu0.shape[0]

    @property
    def num_classes(self) -> int:
        """K+1, including background."""
        return self.sem_logit.shape[1]

    @property
    def num_bases(self) -> int:
        return self.coeff_logit.shape[1]

    def validate(self) -> None:
        n = self.count
        shapes = {
            "mu0": (n, 3), "quat0": (n, 4), "log_scale": (n, 3),
            "opacity_logit": (n,), "color": (n, 3),
            "sem_logit": (n, self.num_classes), "unc_logit": (n,),
            "coeff_logit": (n, self.num_bases), "is_dynamic": (n,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"GaussianSet.{name} has shape {got}, expected {want}")
        if self.is_dynamic.dtype != np.bool_:
            raise ValueError("is_dynamic must be boolean")

    def copy(self) -> "GaussianSet":
        return GaussianSet(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def take(self, index) -> "GaussianSet":
        return GaussianSet(**{f.name: getattr(self, f.name)[index].copy() for f in fields(self)})


@dataclass
class MotionBases:
    """B shared SE(3) trajectories over T frames."""

    quat: np.ndarray   # [B, T, 4]
    trans: np.ndarray  # [B, T, 3]

    @property
    def num_bases(self) -> int:
        return self.quat.shape[0]

    @property
    def num_frames(self) -> int:
        return self.quat.shape[1]

    @staticmethod
    def identity(num_bases: int, num_frames: int) -> "MotionBases":
        q = np.zeros((num_bases, num_frames, 4))
        q[..., 0] = 1.0
        return MotionBases(quat=q, trans=np.zeros((num_bases, num_frames, 3)))

    def copy(self) -> "MotionBases":
        return MotionBases(quat=self.quat.copy(), trans=self.trans.copy())


@dataclass
class Camera:
    """Pinhole camera; world-to-camera pose as (quat_wc, t_wc)."""

    fx: float
    fy: float
    cx: float
    cy: float
    quat_wc: np.ndarray  # [4]
    t_wc: np.ndarray     # [3]
    width: int
    height: int

    @property
    def R_wc(self) -> np.ndarray:
        return quat.rotmat(self.quat_wc)

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.R_wc.T + self.t_wc

    def cam_to_world(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.t_wc) @ self.R_wc

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points [..., 3] to pixel coordinates [..., 2] (x, y)."""
        z = pts_cam[..., 2]
        x = self.fx * pts_cam[..., 0] / z + self.cx
        y = self.fy * pts_cam[..., 1] / z + self.cy
        return np.stack([x, y], axis=-1)

    def unproject(self, xy: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Pixel coordinates + camera-frame depth to world points."""
        x = (xy[..., 0] - self.cx) / self.fx * z
        y = (xy[..., 1] - self.cy) / self.fy * z
        return self.cam_to_world(np.stack([x, y, z], axis=-1))

    @staticmethod
    def look_at(eye, target, fx, fy, cx, cy, width, height) -> "Camera":
        """Camera at eye looking at target, world +y treated as down."""
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        fwd = target - eye
        fwd = fwd / np.linalg.norm(fwd)
        down_hint = np.array([0.0, 1.0, 0.0])
        right = np.cross(down_hint, fwd)
        nr = np.linalg.norm(right)
        if nr < 1e-9:  # looking straight up/down
            right = np.array([1.0, 0.0, 0.0])
        else:
            right = right / nr
        down = np.cross(fwd, right)
        R_cw = np.stack([right, down, fwd], axis=1)  # camera axes as world columns
        R_wc = R_cw.T
        return Camera(
            fx=fx, fy=fy, cx=cx, cy=cy,
            quat_wc=_quat_from_rotmat(R_wc), t_wc=-R_wc @ eye,
            width=width, height=height,
        )


def _quat_from_rotmat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method, single 3x3 matrix."""
    m00, m11, m22 = R[0, 0], R[1, 1], R[2, 2]
    tr = m00 + m11 + m22
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif m00 >= m11 and m00 >= m22:
        s = np.sqrt(1.0 + m00 - m11 - m22) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif m11 >= m22:
        s = np.sqrt(1.0 + m11 - m00 - m22) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m22 - m00 - m11) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return quat.normalize(q)


def motion_weights(coeff_logit: np.ndarray) -> np.ndarray:
    """Row-wise softmax over basis logits."""
    z = coeff_logit - coeff_logit.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def blend_transforms(weights: np.ndarray, bases: MotionBases, t: int, want_cache: bool = False):
    """Per-row blended SE(3) at frame t.

    weights [N, B] rows sum to 1. Translations blend linearly. Rotations:
    every basis quaternion is sign-aligned to the row's highest-weight
    basis (lowest index wins ties), then the weighted sum is renormalized.
    Returns (q_blend [N, 4], t_blend [N, 3]) and, with want_cache, the
    intermediates the backward pass reuses.
    """
    bq = quat.normalize(bases.quat[:, t, :])  # [B, 4]
    bt = bases.trans[:, t, :]                 # [B, 3]
    ref = np.argmax(weights, axis=1)          # [N], ties -> lowest index
    dots = np.einsum("bq,cq->bc", bq, bq, optimize=False)  # [B, B]
    sign = np.where(dots[ref] < 0, -1.0, 1.0)              # [N, B]
    acc = np.einsum("nb,nb,bq->nq", weights, sign, bq, optimize=False)
    q_blend = quat.normalize(acc)
    t_blend = weights @ bt
    if not want_cache:
        return q_blend, t_blend
    cache = {"bq_unit": bq, "bt": bt, "sign": sign, "acc": acc, "weights": weights}
    return q_blend, t_blend, cache


def blend_transform(weights_row: np.ndarray, bases: MotionBases, t: int):
    """Single-row convenience wrapper around blend_transforms."""
    q, tr = blend_transforms(weights_row[None, :], bases, t)
    return q[0], tr[0]


def pose_at(scene: GaussianSet, bases: MotionBases, t: int, want_cache: bool = False):
    """World pose of every Gaussian at frame t.

    Returns (pos [N, 3], q [N, 4]). Static rows keep their canonical pose.
    With want_cache, also returns the blend intermediates for backward.
    """
    w = motion_weights(scene.coeff_logit)
    q_blend, t_blend, bc = blend_transforms(w, bases, t, want_cache=True)
    R = quat.rotmat(q_blend)
    pos_dyn = np.einsum("nij,nj->ni", R, scene.mu0, optimize=False) + t_blend
    q0u = quat.normalize(scene.quat0)
    q_dyn = quat.mul(q_blend, q0u)
    dyn = scene.is_dynamic[:, None]
    pos = np.where(dyn, pos_dyn, scene.mu0)
    q = np.where(dyn, q_dyn, q0u)
    if not want_cache:
        return pos, q
    bc.update({"q_blend": q_blend, "t_blend": t_blend, "R_blend": R, "q0u": q0u, "t": t})
    return pos, q, bc


def insert_gaussians(scene: GaussianSet, new: GaussianSet) -> GaussianSet:
    """Concatenate new rows onto scene. Field layouts must agree."""
    if new.num_classes != scene.num_classes:
        raise ValueError(
            f"class count mismatch: scene has {scene.num_classes}, new has {new.num_classes}"
        )
    if new.num_bases != scene.num_bases:
        raise ValueError(
            f"basis count mismatch: scene has {scene.num_bases}, new has {new.num_bases}"
        )
    new.validate()
    merged = {
        f.name: np.concatenate([getattr(scene, f.name), getattr(new, f.name)], axis=0)
        for f in fields(GaussianSet)
    }
    return GaussianSet(**merged)


def prune_gaussians(scene: GaussianSet, min_opacity: float):
    """Drop rows whose opacity sigmoid falls below min_opacity.

    Returns (pruned_scene, keep_mask) so optimizer state can follow.
    """
    op = 1.0 / (1.0 + np.exp(-scene.opacity_logit))
    keep = op >= min_opacity
    return scene.take(keep), keep


def save_checkpoint(path, scene: GaussianSet, bases: MotionBases, cameras) -> None:
    scene.validate()
    entries = [
        TensorEntry("mu0", scene.mu0),
        TensorEntry("quat0", scene.quat0),
        TensorEntry("log_scale", scene.log_scale),
        TensorEntry("opacity_logit", scene.opacity_logit),
        TensorEntry("color", scene.color),
        TensorEntry("sem_logit", scene.sem_logit),
        TensorEntry("unc_logit", scene.unc_logit),
        TensorEntry("coeff_logit", scene.coeff_logit),
        TensorEntry("is_dynamic", scene.is_dynamic.astype(np.uint8)),
        TensorEntry("basis_quat", bases.quat),
        TensorEntry("basis_trans", bases.trans),
        TensorEntry("cam_intr", np.array([[c.fx, c.fy, c.cx, c.cy] for c in cameras])),
        TensorEntry("cam_quat", np.array([c.quat_wc for c in cameras])),
        TensorEntry("cam_trans", np.array([c.t_wc for c in cameras])),
        TensorEntry("cam_size", np.array([[c.width, c.height] for c in cameras], dtype=np.int32)),
    ]
    write_container(path, entries)


def load_checkpoint(path):
    """Returns (scene, bases, cameras)."""
    d = read_container(path)
    scene = GaussianSet(
        mu0=d["mu0"], quat0=d["quat0"], log_scale=d["log_scale"],
        opacity_logit=d["opacity_logit"], color=d["color"],
        sem_logit=d["sem_logit"], unc_logit=d["unc_logit"],
        coeff_logit=d["coeff_logit"], is_dynamic=d["is_dynamic"].astype(bool),
    )
    scene.validate()
    bases = MotionBases(quat=d["basis_quat"], trans=d["basis_trans"])
    cameras = [
        Camera(
            fx=float(intr[0]), fy=float(intr[1]), cx=float(intr[2]), cy=float(intr[3]),
            quat_wc=q, t_wc=tr, width=int(sz[0]), height=int(sz[1]),
        )
        for intr, q, tr, sz in zip(d["cam_intr"], d["cam_quat"], d["cam_trans"], d["cam_size"])
    ]
    return scene, bases, cameras
