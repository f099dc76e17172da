"""Tiled forward rasterizer.

Front-to-back alpha compositing of projected Gaussians over image tiles.
Per-pixel weight of splat i is a_i * prod_{j<i}(1 - a_j) with
a_i = min(opacity_i * exp(-0.5 d^T C^{-1} d), alpha_max), splats sorted by
camera depth (stable, index order on ties). Channels composited in one
pass: color, per-class semantic probabilities, camera depth, confidence,
and, when a target frame is given, the 3-D position of each Gaussian at
the target frame plus its position at the render frame (the anchor used
for bias-cancelled 2-D tracks).

A RenderCache on the output carries everything the analytic backward
pass needs; nothing is recomputed from scratch there except cheap
per-tile quantities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene import Camera, GaussianSet, MotionBases, pose_at
from .project import project_gaussians

ALL_CHANNELS = ("color", "sem", "depth", "conf", "traj")


@dataclass
class RasterConfig:
    tile: int = 16
    alpha_cutoff: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    alpha_max: float = 0.995
    dilation: float = 0.3
    z_near: float = 0.01
    footprint_sigma: float = 3.0
    footprint_cull: bool = True


def exact_config() -> RasterConfig:
    """Config with every culling/early-exit heuristic disabled.

    In this mode the tiled path is algebraically identical to the
    brute-force oracle; used by equivalence tests and the zero-loss check.
    """
    return RasterConfig(alpha_cutoff=0.0, transmittance_floor=0.0, footprint_cull=False)


class ChannelLayout:
    """Maps channel names to column slices of the per-splat value matrix."""

    def __init__(self, channels, num_classes: int, with_traj: bool):
        self.slices: dict[str, slice] = {}
        off = 0
        widths = {"color": 3, "sem": num_classes, "depth": 1, "conf": 1}
        for name in channels:
            if name == "traj":
                continue
            if name not in widths:
                raise ValueError(f"unknown channel {name!r}")
            self.slices[name] = slice(off, off + widths[name])
            off += widths[name]
        if "traj" in channels and with_traj:
            self.slices["traj"] = slice(off, off + 3)
            self.slices["traj_anchor"] = slice(off + 3, off + 6)
            off += 6
        self.width = off

    def __contains__(self, name):
        return name in self.slices

    def __getitem__(self, name):
        return self.slices[name]


@dataclass
class RenderCache:
    scene: GaussianSet
    bases: MotionBases
    camera: Camera
    t: int
    t_target: int | None
    config: RasterConfig
    layout: ChannelLayout
    proj: dict
    pose_t: tuple
    pose_tp: tuple | None
    values: np.ndarray
    opac: np.ndarray
    probs: np.ndarray | None
    conf_per: np.ndarray | None
    tiles: list = field(default_factory=list)


@dataclass
class RenderOutput:
    color: np.ndarray | None          # [H, W, 3]
    semantic_probs: np.ndarray | None  # [H, W, K+1]
    depth: np.ndarray | None          # [H, W] composited camera z
    alpha: np.ndarray                 # [H, W] accumulated opacity
    confidence: np.ndarray | None     # [H, W] composited sigmoid(u)
    traj3d: np.ndarray | None         # [H, W, 3] composited target-frame position
    traj3d_anchor: np.ndarray | None  # [H, W, 3] composited render-frame position
    cache: RenderCache | None = None


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _build_values(scene, layout, proj, pos_t, pos_tp):
    n = scene.count
    V = np.zeros((n, layout.width))
    probs = conf = None
    if "color" in layout:
        V[:, layout["color"]] = scene.color
    if "sem" in layout:
        probs = _softmax(scene.sem_logit)
        V[:, layout["sem"]] = probs
    if "depth" in layout:
        V[:, layout["depth"]] = proj["z"][:, None]
    if "conf" in layout:
        conf = _sigmoid(scene.unc_logit)
        V[:, layout["conf"]] = conf[:, None]
    if "traj" in layout:
        V[:, layout["traj"]] = pos_tp
        V[:, layout["traj_anchor"]] = pos_t
    return V, probs, conf


def _assemble(out_maps, alpha, layout, cache) -> RenderOutput:
    def grab(name, squeeze=False):
        if name not in layout:
            return None
        block = out_maps[..., layout[name]]
        return block[..., 0] if squeeze else block

    return RenderOutput(
        color=grab("color"),
        semantic_probs=grab("sem"),
        depth=grab("depth", squeeze=True),
        alpha=alpha,
        confidence=grab("conf", squeeze=True),
        traj3d=grab("traj"),
        traj3d_anchor=grab("traj_anchor"),
        cache=cache,
    )


def rasterize(
    scene: GaussianSet,
    bases: MotionBases,
    camera: Camera,
    t: int,
    t_target: int | None = None,
    config: RasterConfig | None = None,
    channels=ALL_CHANNELS,
) -> RenderOutput:
    """Render frame t through `camera`; see module docstring."""
    cfg = config if config is not None else RasterConfig()
    pos_t, q_t, bc_t = pose_at(scene, bases, t, want_cache=True)
    pose_tp = None
    pos_tp = None
    if t_target is not None and "traj" in channels:
        pos_tp, q_tp, bc_tp = pose_at(scene, bases, t_target, want_cache=True)
        pose_tp = (pos_tp, q_tp, bc_tp)

    proj = project_gaussians(
        pos_t, q_t, scene.log_scale, camera,
        dilation=cfg.dilation, z_near=cfg.z_near, footprint_sigma=cfg.footprint_sigma,
    )
    layout = ChannelLayout(channels, scene.num_classes, with_traj=t_target is not None)
    V, probs, conf = _build_values(scene, layout, proj, pos_t, pos_tp)
    opac = _sigmoid(scene.opacity_logit)

    H, W = camera.height, camera.width
    out = np.zeros((H, W, layout.width))
    alpha = np.zeros((H, W))
    cache = RenderCache(
        scene=scene, bases=bases, camera=camera, t=t, t_target=t_target,
        config=cfg, layout=layout, proj=proj,
        pose_t=(pos_t, q_t, bc_t), pose_tp=pose_tp,
        values=V, opac=opac, probs=probs, conf_per=conf,
    )

    mean2d, radius, z, valid = proj["mean2d"], proj["radius"], proj["z"], proj["valid"]
    for r0 in range(0, H, cfg.tile):
        r1 = min(r0 + cfg.tile, H)
        for c0 in range(0, W, cfg.tile):
            c1 = min(c0 + cfg.tile, W)
            if cfg.footprint_cull:
                ok = (
                    valid
                    & (mean2d[:, 0] + radius >= c0) & (mean2d[:, 0] - radius <= c1 - 1)
                    & (mean2d[:, 1] + radius >= r0) & (mean2d[:, 1] - radius <= r1 - 1)
                )
            else:
                ok = valid
            ids = np.nonzero(ok)[0]
            if ids.size == 0:
                continue
            ids = ids[np.argsort(z[ids], kind="stable")]

            cols = np.arange(c0, c1, dtype=np.float64)
            rows = np.arange(r0, r1, dtype=np.float64)
            px = np.tile(cols, r1 - r0)           # row-major pixel order
            py = np.repeat(rows, c1 - c0)
            dx = px[None, :] - mean2d[ids, 0, None]   # [S, P]
            dy = py[None, :] - mean2d[ids, 1, None]
            ia = proj["inv"][ids, 0, 0, None]
            ib = proj["inv"][ids, 0, 1, None]
            ic = proj["inv"][ids, 1, 1, None]
            qf = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
            g = np.exp(-0.5 * qf)
            a_raw = opac[ids, None] * g
            a = np.where(a_raw < cfg.alpha_cutoff, 0.0, np.minimum(a_raw, cfg.alpha_max))
            t_before = np.cumprod(1.0 - a, axis=0)
            t_before = np.vstack([np.ones((1, a.shape[1])), t_before[:-1]])
            live = t_before >= cfg.transmittance_floor
            w = a * t_before * live

            tile_out = np.einsum("sp,sc->pc", w, V[ids], optimize=False)
            out[r0:r1, c0:c1] += tile_out.reshape(r1 - r0, c1 - c0, layout.width)
            alpha[r0:r1, c0:c1] += w.sum(axis=0).reshape(r1 - r0, c1 - c0)
            cache.tiles.append((r0, r1, c0, c1, ids, a_raw))

    return _assemble(out, alpha, layout, cache)


def rasterize_naive(
    scene: GaussianSet,
    bases: MotionBases,
    camera: Camera,
    t: int,
    t_target: int | None = None,
    config: RasterConfig | None = None,
    channels=ALL_CHANNELS,
) -> RenderOutput:
    """Per-pixel reference path with the production visibility rule.

    Composites each pixel independently, including a splat exactly when
    its footprint box touches the pixel's tile, so results match
    rasterize() to float accumulation order.
    """
    cfg = config if config is not None else RasterConfig()
    pos_t, q_t, _ = pose_at(scene, bases, t, want_cache=True)
    pos_tp = None
    if t_target is not None and "traj" in channels:
        pos_tp, _, _ = pose_at(scene, bases, t_target, want_cache=True)

    proj = project_gaussians(
        pos_t, q_t, scene.log_scale, camera,
        dilation=cfg.dilation, z_near=cfg.z_near, footprint_sigma=cfg.footprint_sigma,
    )
    layout = ChannelLayout(channels, scene.num_classes, with_traj=t_target is not None)
    V, _, _ = _build_values(scene, layout, proj, pos_t, pos_tp)
    opac = _sigmoid(scene.opacity_logit)

    H, W = camera.height, camera.width
    out = np.zeros((H, W, layout.width))
    alpha = np.zeros((H, W))
    mean2d, radius, z, valid = proj["mean2d"], proj["radius"], proj["z"], proj["valid"]
    order = np.argsort(z, kind="stable")
    order = order[valid[order]]

    for r in range(H):
        for c in range(W):
            r0 = (r // cfg.tile) * cfg.tile
            c0 = (c // cfg.tile) * cfg.tile
            r1, c1 = min(r0 + cfg.tile, H), min(c0 + cfg.tile, W)
            if cfg.footprint_cull:
                m = (
                    (mean2d[order, 0] + radius[order] >= c0)
                    & (mean2d[order, 0] - radius[order] <= c1 - 1)
                    & (mean2d[order, 1] + radius[order] >= r0)
                    & (mean2d[order, 1] - radius[order] <= r1 - 1)
                )
                ids = order[m]
            else:
                ids = order
            if ids.size == 0:
                continue
            dx = c - mean2d[ids, 0]
            dy = r - mean2d[ids, 1]
            qf = (
                proj["inv"][ids, 0, 0] * dx * dx
                + 2.0 * proj["inv"][ids, 0, 1] * dx * dy
                + proj["inv"][ids, 1, 1] * dy * dy
            )
            a_raw = opac[ids] * np.exp(-0.5 * qf)
            a = np.where(a_raw < cfg.alpha_cutoff, 0.0, np.minimum(a_raw, cfg.alpha_max))
            t_before = np.concatenate([[1.0], np.cumprod(1.0 - a)[:-1]])
            w = a * t_before * (t_before >= cfg.transmittance_floor)
            out[r, c] = w @ V[ids]
            alpha[r, c] = w.sum()

    return _assemble(out, alpha, layout, None)
