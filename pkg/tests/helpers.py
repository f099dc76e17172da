"""Shared test fixtures: small random scenes and cameras."""
from __future__ import annotations

import numpy as np

from m4d import rng
from m4d.scene import Camera, GaussianSet, MotionBases


def random_camera(r, width=16, height=16, span=4.0):
    eye = np.array([r.uniform(-1, 1), r.uniform(-1, 1), -6.0 + r.uniform(-1, 1)])
    target = r.uniform(-0.5, 0.5, size=3)
    f = r.uniform(12.0, 22.0)
    return Camera.look_at(
        eye, target, fx=f, fy=f * r.uniform(0.9, 1.1),
        cx=(width - 1) / 2 + r.uniform(-0.5, 0.5),
        cy=(height - 1) / 2 + r.uniform(-0.5, 0.5),
        width=width, height=height,
    )


def random_scene(seed, n=20, k=3, b=3, t_frames=4, spread=2.0, dynamic_frac=0.7):
    r = rng.stream(seed, "test-scene")
    quat0 = r.normal(size=(n, 4))
    quat0 /= np.linalg.norm(quat0, axis=1, keepdims=True)
    scene = GaussianSet(
        mu0=r.uniform(-spread, spread, size=(n, 3)),
        quat0=quat0,
        log_scale=r.uniform(-1.8, -0.4, size=(n, 3)),
        opacity_logit=r.uniform(-1.0, 2.5, size=n),
        color=r.uniform(0.05, 0.95, size=(n, 3)),
        sem_logit=r.normal(scale=1.5, size=(n, k + 1)),
        unc_logit=r.normal(scale=1.0, size=n),
        coeff_logit=r.normal(scale=1.0, size=(n, b)),
        is_dynamic=r.uniform(size=n) < dynamic_frac,
    )
    # bases: identity at frame 0, smooth small motions after
    bases = MotionBases.identity(b, t_frames)
    for fr in range(1, t_frames):
        axis = r.normal(size=(b, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        ang = r.uniform(-0.25, 0.25, size=b) * fr
        half = ang / 2
        bases.quat[:, fr, 0] = np.cos(half)
        bases.quat[:, fr, 1:] = axis * np.sin(half)[:, None]
        bases.trans[:, fr, :] = r.uniform(-0.3, 0.3, size=(b, 3)) * fr
    cam = random_camera(r)
    return scene, bases, cam
