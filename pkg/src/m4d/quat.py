"""Quaternion utilities, scalar-first (w, x, y, z).

All functions broadcast over leading axes. Backward helpers return
gradients with respect to the *raw* (not necessarily unit) inputs where
noted; normalization Jacobians are included there so callers can keep
parameters unconstrained.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-12


def normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(n, EPS)


def conjugate(q: np.ndarray) -> np.ndarray:
    out = q.copy()
    out[..., 1:] *= -1
    return out


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def mul_backward(a, b, dout):
    """Gradients of mul(a, b) wrt a and b given upstream dout."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    dw, dx, dy, dz = (dout[..., i] for i in range(4))
    da = np.stack(
        [
            dw * bw + dx * bx + dy * by + dz * bz,
            -dw * bx + dx * bw - dy * bz + dz * by,
            -dw * by + dx * bz + dy * bw - dz * bx,
            -dw * bz - dx * by + dy * bx + dz * bw,
        ],
        axis=-1,
    )
    db = np.stack(
        [
            dw * aw + dx * ax + dy * ay + dz * az,
            -dw * ax + dx * aw + dy * az - dz * ay,
            -dw * ay - dx * az + dy * aw + dz * ax,
            -dw * az + dx * ay - dy * ax + dz * aw,
        ],
        axis=-1,
    )
    return da, db


def rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices [..., 3, 3] from raw quaternions (normalized inside)."""
    q = normalize(q)
    w, x, y, z = (q[..., i] for i in range(4))
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_backward(q_raw: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Gradient of rotmat(q_raw) wrt the raw quaternion.

    Chains through the internal normalization: d/dq_raw = (I - uuᵀ)/‖q‖ · d/du
    with u the unit quaternion.
    """
    n = np.maximum(np.linalg.norm(q_raw, axis=-1, keepdims=True), EPS)
    u = q_raw / n
    w, x, y, z = (u[..., i] for i in range(4))

    def g(i, j):
        return dR[..., i, j]

    dw = 2 * (
        -z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)
    )
    dx = 2 * (
        y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
        + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2)
    )
    dy = 2 * (
        -2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
        - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2)
    )
    dz = 2 * (
        -2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
        + y * g(1, 2) + x * g(2, 0) + y * g(2, 1)
    )
    du = np.stack([dw, dx, dy, dz], axis=-1)
    du -= u * np.sum(du * u, axis=-1, keepdims=True)
    return du / n


def normalize_backward(q_raw: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Gradient of normalize(q_raw) given upstream dout."""
    n = np.maximum(np.linalg.norm(q_raw, axis=-1, keepdims=True), EPS)
    u = q_raw / n
    return (dout - u * np.sum(dout * u, axis=-1, keepdims=True)) / n


def from_axis_angle(axis, angle) -> np.ndarray:
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.maximum(np.linalg.norm(axis, axis=-1, keepdims=True), EPS)
    angle = np.asarray(angle, dtype=np.float64)
    half = angle / 2.0
    s = np.sin(half)
    return np.concatenate(
        [np.cos(half)[..., None], axis * s[..., None]], axis=-1
    )


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v [..., 3] by quaternions q [..., 4]."""
    R = rotmat(q)
    return np.einsum("...ij,...j->...i", R, v)
