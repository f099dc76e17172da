"""Analytic gradients of rasterize() with respect to scene parameters.

Takes per-pixel upstream gradients for any subset of the rendered maps
and chains them back through compositing, the splat exponent, the
perspective Jacobian, the world covariance and the motion blend, down to
the raw (unconstrained) parameter tensors.

Compositing gradient per tile: with phi_i = <upstream, value_i> and
w_i = a_i T_i, dL/da_i = T_i phi_i - (sum_{k>i} phi_k w_k) / (1 - a_i);
the suffix sum comes from one reverse cumsum. Splats removed by the
alpha cutoff, the alpha_max clamp or the transmittance floor are hard
gates and contribute no gradient through their own alpha.
"""
from __future__ import annotations

import numpy as np

from .. import quat
from .raster import RenderOutput

GRAD_KEYS = (
    "mu0", "quat0", "log_scale", "opacity_logit", "color",
    "sem_logit", "unc_logit", "coeff_logit", "basis_quat", "basis_trans",
)


def _pose_backward(scene, bases_quat_t, bc, dpos, dq_orient):
    """Backward through mu_t = R_blend mu0 + t_blend (and q_t = q_blend ⊗ q0).

    dq_orient is None when only positions at this frame were consumed.
    Returns (dmu0, dq0_unit, dweights, dbasis_quat_t, dbasis_trans_t).
    """
    dyn = bc["dyn"][:, None]
    mu0 = bc["mu0"]
    R_b, q_b, q0u = bc["R_blend"], bc["q_blend"], bc["q0u"]

    dpos_dyn = np.where(dyn, dpos, 0.0)
    dpos_stat = np.where(dyn, 0.0, dpos)
    dmu0 = dpos_stat + np.einsum("nji,nj->ni", R_b, dpos_dyn, optimize=False)
    dR_b = np.einsum("ni,nj->nij", dpos_dyn, mu0, optimize=False)
    dt_b = dpos_dyn
    dq_b = quat.rotmat_backward(q_b, dR_b)

    dq0u = np.zeros_like(q0u)
    if dq_orient is not None:
        dq_dyn = np.where(dyn, dq_orient, 0.0)
        dq_stat = np.where(dyn, 0.0, dq_orient)
        dqb_mul, dq0u_mul = quat.mul_backward(q_b, q0u, dq_dyn)
        dq_b = dq_b + dqb_mul
        dq0u = dq0u_mul + dq_stat

    dacc = quat.normalize_backward(bc["acc"], dq_b)
    sign, bqu, wgt, bt = bc["sign"], bc["bq_unit"], bc["weights"], bc["bt"]
    dw = sign * np.einsum("nq,bq->nb", dacc, bqu, optimize=False)
    dbq_unit = np.einsum("nb,nb,nq->bq", wgt, sign, dacc, optimize=False)
    dbasis_q = quat.normalize_backward(bases_quat_t, dbq_unit)
    dw = dw + np.einsum("ni,bi->nb", dt_b, bt, optimize=False)
    dbasis_t = np.einsum("nb,ni->bi", wgt, dt_b, optimize=False)
    return dmu0, dq0u, dw, dbasis_q, dbasis_t


def rasterize_backward(output: RenderOutput, grads: dict) -> dict:
    """Parameter gradients given upstream per-pixel gradients.

    grads may contain any of: "color" [H,W,3], "sem" [H,W,K+1],
    "depth" [H,W], "conf" [H,W], "alpha" [H,W], "traj" [H,W,3],
    "traj_anchor" [H,W,3]. Returns a dict over GRAD_KEYS.
    """
    cache = output.cache
    if cache is None:
        raise ValueError("output has no cache; render with rasterize()")
    cfg, layout = cache.config, cache.layout
    scene, bases, cam = cache.scene, cache.bases, cache.camera
    proj = cache.proj
    V = cache.values
    n = scene.count
    H, W = cam.height, cam.width
    Cw = layout.width

    dO = np.zeros((H, W, Cw))
    for name in ("color", "sem", "depth", "conf", "traj", "traj_anchor"):
        g = grads.get(name)
        if g is None or name not in layout:
            continue
        sl = layout[name]
        if g.ndim == 2:
            g = g[..., None]
        dO[..., sl] += g
    dalpha = grads.get("alpha")
    if dalpha is None:
        dalpha = np.zeros((H, W))

    dV = np.zeros((n, Cw))
    dmean = np.zeros((n, 2))
    dInv = np.zeros((n, 2, 2))
    do = np.zeros(n)
    inv2, mean2d = proj["inv"], proj["mean2d"]
    opac = cache.opac

    for (r0, r1, c0, c1, ids, a_raw) in cache.tiles:
        p = (r1 - r0) * (c1 - c0)
        dO_t = dO[r0:r1, c0:c1].reshape(p, Cw)
        dal_t = dalpha[r0:r1, c0:c1].reshape(p)
        if not dO_t.any() and not dal_t.any():
            continue
        a = np.where(a_raw < cfg.alpha_cutoff, 0.0, np.minimum(a_raw, cfg.alpha_max))
        t_before = np.cumprod(1.0 - a, axis=0)
        t_before = np.vstack([np.ones((1, p)), t_before[:-1]])
        live = t_before >= cfg.transmittance_floor
        w = a * t_before * live

        phi = np.einsum("sc,pc->sp", V[ids], dO_t, optimize=False) + dal_t[None, :]
        phi_w = phi * w
        psi = np.cumsum(phi_w[::-1], axis=0)[::-1]
        gate = (a_raw >= cfg.alpha_cutoff) & (a_raw <= cfg.alpha_max) & live
        da = gate * (t_before * phi - (psi - phi_w) / (1.0 - a))

        g_mat = a_raw / opac[ids, None]
        do[ids] += (da * g_mat).sum(axis=1)
        dq_exp = -0.5 * a_raw * da   # d(loss)/d(exponent quadratic)

        cols = np.arange(c0, c1, dtype=np.float64)
        rows = np.arange(r0, r1, dtype=np.float64)
        px = np.tile(cols, r1 - r0)
        py = np.repeat(rows, c1 - c0)
        dx = px[None, :] - mean2d[ids, 0, None]
        dy = py[None, :] - mean2d[ids, 1, None]
        ia, ib, ic = inv2[ids, 0, 0, None], inv2[ids, 0, 1, None], inv2[ids, 1, 1, None]
        dInv[ids, 0, 0] += (dq_exp * dx * dx).sum(axis=1)
        dInv[ids, 0, 1] += (dq_exp * dx * dy).sum(axis=1)
        dInv[ids, 1, 0] += (dq_exp * dx * dy).sum(axis=1)
        dInv[ids, 1, 1] += (dq_exp * dy * dy).sum(axis=1)
        dmean[ids, 0] += (-2.0 * dq_exp * (ia * dx + ib * dy)).sum(axis=1)
        dmean[ids, 1] += (-2.0 * dq_exp * (ib * dx + ic * dy)).sum(axis=1)
        dV[ids] += np.einsum("sp,pc->sc", w, dO_t, optimize=False)

    out = {}
    out["color"] = dV[:, layout["color"]].copy() if "color" in layout else np.zeros((n, 3))
    if "sem" in layout:
        dp = dV[:, layout["sem"]]
        pr = cache.probs
        out["sem_logit"] = pr * (dp - (dp * pr).sum(axis=1, keepdims=True))
    else:
        out["sem_logit"] = np.zeros_like(scene.sem_logit)
    if "conf" in layout:
        s = cache.conf_per
        out["unc_logit"] = dV[:, layout["conf"]][:, 0] * s * (1.0 - s)
    else:
        out["unc_logit"] = np.zeros(n)
    out["opacity_logit"] = do * opac * (1.0 - opac)
    ddepth_splat = dV[:, layout["depth"]][:, 0] if "depth" in layout else np.zeros(n)
    dpos_tp_direct = dV[:, layout["traj"]] if "traj" in layout else None
    dpos_t_direct = dV[:, layout["traj_anchor"]] if "traj_anchor" in layout else 0.0

    # projection backward
    J, Sig, M, A, S = proj["J"], proj["Sigma_cam"], proj["M"], proj["A"], proj["S"]
    R_wc, fx, fy = proj["R_wc"], proj["fx"], proj["fy"]
    z = proj["z"]
    xc, yc = proj["p_cam"][:, 0], proj["p_cam"][:, 1]

    dC = -np.einsum("nij,njk,nkl->nil", inv2, dInv, inv2, optimize=False)
    dSig = np.einsum("nai,nab,nbj->nij", J, dC, J, optimize=False)
    dJ = 2.0 * np.einsum("nab,nbi,nij->naj", dC, J, Sig, optimize=False)

    dpx = dJ[:, 0, 2] * (-fx / z**2) + dmean[:, 0] * fx / z
    dpy = dJ[:, 1, 2] * (-fy / z**2) + dmean[:, 1] * fy / z
    dpz = (
        dJ[:, 0, 0] * (-fx / z**2)
        + dJ[:, 1, 1] * (-fy / z**2)
        + dJ[:, 0, 2] * (2.0 * fx * xc / z**3)
        + dJ[:, 1, 2] * (2.0 * fy * yc / z**3)
        - (dmean[:, 0] * fx * xc + dmean[:, 1] * fy * yc) / z**2
        + ddepth_splat
    )
    dp_cam = np.stack([dpx, dpy, dpz], axis=-1)

    dM = 2.0 * np.einsum("nij,njk->nik", dSig, M, optimize=False)
    dA = dM * S[:, None, :]
    out["log_scale"] = np.einsum("nik,nik->nk", dM, A, optimize=False) * S
    dRg = np.einsum("ji,njk->nik", R_wc, dA, optimize=False)
    pos_t, q_t, bc_t = cache.pose_t
    dq_t = quat.rotmat_backward(q_t, dRg)
    dpos_t = dp_cam @ R_wc + dpos_t_direct

    # pose backward, render frame
    bc_t = dict(bc_t)
    bc_t.update({"dyn": scene.is_dynamic, "mu0": scene.mu0})
    dmu0, dq0u, dwgt, dbq_t, dbt_t = _pose_backward(
        scene, bases.quat[:, cache.t, :], bc_t, dpos_t, dq_t
    )

    dbasis_quat = np.zeros_like(bases.quat)
    dbasis_trans = np.zeros_like(bases.trans)
    dbasis_quat[:, cache.t, :] += dbq_t
    dbasis_trans[:, cache.t, :] += dbt_t

    # pose backward, target frame (positions only)
    if dpos_tp_direct is not None and cache.pose_tp is not None:
        _, _, bc_tp = cache.pose_tp
        bc_tp = dict(bc_tp)
        bc_tp.update({"dyn": scene.is_dynamic, "mu0": scene.mu0})
        dmu0_tp, _, dwgt_tp, dbq_tp, dbt_tp = _pose_backward(
            scene, bases.quat[:, cache.t_target, :], bc_tp, dpos_tp_direct, None
        )
        dmu0 = dmu0 + dmu0_tp
        dwgt = dwgt + dwgt_tp
        dbasis_quat[:, cache.t_target, :] += dbq_tp
        dbasis_trans[:, cache.t_target, :] += dbt_tp

    out["mu0"] = dmu0
    out["quat0"] = quat.normalize_backward(scene.quat0, dq0u)
    wgt = bc_t["weights"]
    out["coeff_logit"] = wgt * (dwgt - (dwgt * wgt).sum(axis=1, keepdims=True))
    out["basis_quat"] = dbasis_quat
    out["basis_trans"] = dbasis_trans
    return out
