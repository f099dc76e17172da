"""Perspective (EWA) projection of 3-D Gaussians.

Projects world-frame Gaussians into a pinhole camera: camera-frame mean,
2-D mean, dilated 2-D covariance and its inverse, and a conservative
footprint radius. All intermediates needed by the analytic backward pass
are returned in one bundle.
"""
from __future__ import annotations

import numpy as np

from .. import quat
from ..scene import Camera


def project_gaussians(
    pos: np.ndarray,
    q: np.ndarray,
    log_scale: np.ndarray,
    cam: Camera,
    dilation: float = 0.3,
    z_near: float = 0.01,
    footprint_sigma: float = 3.0,
) -> dict:
    """Project N Gaussians; returns the forward/backward bundle.

    World covariance is R diag(exp(2 ls)) Rᵀ; the 2-D covariance is
    J R_wc Σ R_wcᵀ Jᵀ + dilation·I with J the perspective Jacobian at the
    mean. `valid` marks Gaussians in front of the near plane; everything
    else in the bundle is well-defined only at valid rows (invalid rows
    are computed against a clamped depth to stay finite).
    """
    n = pos.shape[0]
    R_wc = cam.R_wc
    p_cam = pos @ R_wc.T + cam.t_wc  # [N, 3]
    valid = p_cam[:, 2] > z_near
    z = np.where(valid, p_cam[:, 2], 1.0)
    x, y = p_cam[:, 0], p_cam[:, 1]

    mean2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=-1)

    Rg = quat.rotmat(q)                       # [N, 3, 3]
    A = np.einsum("ij,njk->nik", R_wc, Rg, optimize=False)
    S = np.exp(log_scale)                     # [N, 3]
    M = A * S[:, None, :]                     # A @ diag(S)
    Sigma_cam = np.einsum("nik,njk->nij", M, M, optimize=False)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / z**2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / z**2

    C = np.einsum("nai,nij,nbj->nab", J, Sigma_cam, J, optimize=False)
    C[:, 0, 0] += dilation
    C[:, 1, 1] += dilation

    det = C[:, 0, 0] * C[:, 1, 1] - C[:, 0, 1] * C[:, 1, 0]
    inv = np.empty_like(C)
    inv[:, 0, 0] = C[:, 1, 1] / det
    inv[:, 0, 1] = -C[:, 0, 1] / det
    inv[:, 1, 0] = -C[:, 1, 0] / det
    inv[:, 1, 1] = C[:, 0, 0] / det

    half_tr = 0.5 * (C[:, 0, 0] + C[:, 1, 1])
    disc = np.sqrt(np.maximum(0.25 * (C[:, 0, 0] - C[:, 1, 1]) ** 2 + C[:, 0, 1] ** 2, 0.0))
    radius = footprint_sigma * np.sqrt(np.maximum(half_tr + disc, 0.0))

    return {
        "p_cam": p_cam, "z": z, "mean2d": mean2d, "valid": valid,
        "Rg": Rg, "A": A, "S": S, "M": M, "Sigma_cam": Sigma_cam,
        "J": J, "C": C, "inv": inv, "radius": radius,
        "R_wc": R_wc, "fx": cam.fx, "fy": cam.fy,
    }
