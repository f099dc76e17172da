"""Evaluation metrics: segmentation J&F, point-track accuracy, 3-D EPE,
image quality, and visibility prediction."""
from __future__ import annotations

import numpy as np

from .objectives import bilinear_sample
from .regions import boundary, edt

TAP_THRESHOLDS = (1.0, 2.0, 4.0, 8.0, 16.0)
TAP_RESOLUTION = 256.0


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two boolean masks; both empty -> 1."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance: float | None = None) -> float:
    """Boundary F-measure with a distance tolerance.

    Tolerance defaults to ceil(0.8% of the image diagonal). Both masks
    empty -> 1; exactly one empty -> 0.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if not pred.any() and not gt.any():
        return 1.0
    if not pred.any() or not gt.any():
        return 0.0
    if tolerance is None:
        tolerance = np.ceil(0.008 * np.hypot(*pred.shape))
    bp = boundary(pred)
    bg = boundary(gt)
    # distance of every pixel to the nearest boundary pixel of the other mask
    d_to_gt = edt(~bg, border_false=False)
    d_to_pred = edt(~bp, border_false=False)
    precision = float((d_to_gt[bp] <= tolerance).mean())
    recall = float((d_to_pred[bg] <= tolerance).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def jf_sequence(pred_labels: np.ndarray, gt_labels: np.ndarray, num_objects: int):
    """Per-object J and F over a label-map sequence [T,H,W]; objects 1..K.

    Returns {"J": [K], "F": [K], "JF": scalar} with per-object means over
    frames and J&F the grand mean of (J+F)/2.
    """
    t = pred_labels.shape[0]
    js = np.zeros((num_objects, t))
    fs = np.zeros((num_objects, t))
    for k in range(1, num_objects + 1):
        for fr in range(t):
            p = pred_labels[fr] == k
            g = gt_labels[fr] == k
            js[k - 1, fr] = jaccard(p, g)
            fs[k - 1, fr] = boundary_f(p, g)
    j_obj = js.mean(axis=1)
    f_obj = fs.mean(axis=1)
    return {"J": j_obj, "F": f_obj, "JF": float((j_obj.mean() + f_obj.mean()) / 2)}


def tap_metrics(
    pred_tracks: np.ndarray,
    pred_visible: np.ndarray,
    gt_tracks: np.ndarray,
    gt_visible: np.ndarray,
    image_hw: tuple,
    query_frames: np.ndarray | None = None,
):
    """Point-tracking metrics at the standard evaluation resolution.

    Tracks are [Q,T,2] pixel coordinates; both sets are rescaled to
    256x256 before thresholding at {1,2,4,8,16} pixels, strict <.
    Returns delta_avg, per-threshold accuracy, occlusion accuracy and
    average jaccard. Query frames, if given, are excluded.
    """
    h, w = image_hw
    scale = np.array([TAP_RESOLUTION / w, TAP_RESOLUTION / h])
    pe = (pred_tracks - gt_tracks) * scale
    err = np.linalg.norm(pe, axis=-1)
    evaluate = np.ones(gt_visible.shape, dtype=bool)
    if query_frames is not None:
        evaluate[np.arange(len(query_frames)), query_frames] = False

    vis_eval = evaluate & gt_visible
    acc = {}
    jac = {}
    for thr in TAP_THRESHOLDS:
        within = err < thr
        acc[thr] = float(within[vis_eval].mean()) if vis_eval.any() else 0.0
        tp = (within & gt_visible & pred_visible & evaluate).sum()
        fp = (pred_visible & ~(gt_visible & within) & evaluate).sum()
        gt_pos = (gt_visible & evaluate).sum()
        denom = gt_pos + fp
        jac[thr] = float(tp / denom) if denom > 0 else 0.0
    oa = float((pred_visible == gt_visible)[evaluate].mean()) if evaluate.any() else 0.0
    return {
        "delta_avg": float(np.mean([acc[t] for t in TAP_THRESHOLDS])),
        "delta": acc,
        "occlusion_accuracy": oa,
        "average_jaccard": float(np.mean([jac[t] for t in TAP_THRESHOLDS])),
    }


def epe_3d(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray,
           thresholds=(0.05, 0.10)):
    """Mean 3-D endpoint error over valid points plus inlier fractions."""
    if not valid.any():
        return {"epe": 0.0, **{f"delta@{t:g}": 0.0 for t in thresholds}}
    e = np.linalg.norm(pred[valid] - gt[valid], axis=-1)
    out = {"epe": float(e.mean())}
    for t in thresholds:
        out[f"delta@{t:g}"] = float((e < t).mean())
    return out


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 99.0
    return float(10.0 * np.log10(data_range**2 / mse))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 'valid'-mode filtering of a 2-d array."""
    from numpy.lib.stride_tricks import sliding_window_view

    rows = sliding_window_view(img, k.size, axis=1) @ k
    return (sliding_window_view(rows, k.size, axis=0) * k).sum(axis=-1)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM, 11x11 Gaussian window sigma 1.5, averaged over channels."""
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    k = _gaussian_kernel()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x = a[..., ch]
        y = b[..., ch]
        mx = _filter_valid(x, k)
        my = _filter_valid(y, k)
        mxx = _filter_valid(x * x, k)
        myy = _filter_valid(y * y, k)
        mxy = _filter_valid(x * y, k)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def predict_visibility(
    point_depth: np.ndarray,
    tracks: np.ndarray,
    rendered_depth: np.ndarray,
    eps_occ: float = 0.05,
) -> np.ndarray:
    """A transported point is visible if it lands in-bounds and is not
    behind the rendered target-frame depth by more than eps_occ."""
    h, w = rendered_depth.shape
    x = tracks[..., 0]
    y = tracks[..., 1]
    inb = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    vis = np.zeros(tracks.shape[:-1], dtype=bool)
    if inb.any():
        pts = tracks[inb].reshape(-1, 2)
        surf, _, _ = bilinear_sample(rendered_depth, pts)
        vis[inb] = point_depth[inb] <= surf + eps_occ
    return vis
