import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m4d import metrics
from m4d.regions import boundary


def boundary_f_brute(pred, gt, tolerance):
    """Direct pairwise-distance implementation of the boundary F-measure."""
    if not pred.any() and not gt.any():
        return 1.0
    if not pred.any() or not gt.any():
        return 0.0
    bp = np.argwhere(boundary(pred)).astype(float)
    bg = np.argwhere(boundary(gt)).astype(float)
    d = np.linalg.norm(bp[:, None, :] - bg[None, :, :], axis=-1)
    precision = (d.min(axis=1) <= tolerance).mean()
    recall = (d.min(axis=0) <= tolerance).mean()
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def test_jaccard_basic_cases():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    assert metrics.jaccard(a, b) == 1.0
    a[0, 0] = True
    assert metrics.jaccard(a, b) == 0.0
    b[0, 0] = True
    assert metrics.jaccard(a, b) == 1.0
    b[0, 1] = True
    assert metrics.jaccard(a, b) == pytest.approx(0.5)


def test_boundary_f_identical_masks_is_one():
    rng = np.random.default_rng(0)
    m = rng.random((20, 20)) < 0.4
    assert metrics.boundary_f(m, m) == pytest.approx(1.0)


def test_boundary_f_empty_conventions():
    e = np.zeros((8, 8), dtype=bool)
    f = np.zeros((8, 8), dtype=bool)
    f[2, 2] = True
    assert metrics.boundary_f(e, e) == 1.0
    assert metrics.boundary_f(e, f) == 0.0
    assert metrics.boundary_f(f, e) == 0.0


def test_boundary_f_matches_brute_force_on_random_masks():
    # acceptance-style check: 50 random masks up to 32x32
    rng = np.random.default_rng(7)
    for trial in range(50):
        h = int(rng.integers(4, 33))
        w = int(rng.integers(4, 33))
        pred = rng.random((h, w)) < 0.45
        gt = rng.random((h, w)) < 0.45
        tol = float(np.ceil(0.008 * np.hypot(h, w)))
        got = metrics.boundary_f(pred, gt, tolerance=tol)
        want = boundary_f_brute(pred, gt, tol)
        assert got == pytest.approx(want, abs=1e-12), f"trial {trial}"


def test_jf_sequence_perfect_prediction():
    rng = np.random.default_rng(3)
    gt = (rng.random((4, 16, 16)) * 3).astype(np.int32)
    out = metrics.jf_sequence(gt, gt, num_objects=2)
    assert np.allclose(out["J"], 1.0)
    assert np.allclose(out["F"], 1.0)
    assert out["JF"] == pytest.approx(1.0)


def test_jf_sequence_degrades_with_corruption():
    rng = np.random.default_rng(4)
    gt = np.zeros((3, 24, 24), dtype=np.int32)
    gt[:, 6:18, 6:18] = 1
    pred = gt.copy()
    pred[:, 6:18, 6:10] = 0  # chop part of the object
    out = metrics.jf_sequence(pred, gt, num_objects=1)
    assert out["JF"] < 1.0
    assert out["J"][0] == pytest.approx(8 / 12, abs=1e-9)


def test_tap_metrics_perfect_tracks():
    q, t = 5, 8
    rng = np.random.default_rng(5)
    gt = rng.random((q, t, 2)) * 60
    vis = np.ones((q, t), dtype=bool)
    qf = np.zeros(q, dtype=int)
    out = metrics.tap_metrics(gt.copy(), vis, gt, vis, (64, 64), query_frames=qf)
    assert out["delta_avg"] == 1.0
    assert out["occlusion_accuracy"] == 1.0
    assert out["average_jaccard"] == 1.0


def test_tap_metrics_threshold_scaling():
    # one point, constant error of 4 px at 64x64 -> 16 px at 256 scale:
    # fails thresholds 1..16 (strict <), so delta_avg = 0; halve the
    # error and 16 passes.
    gt = np.zeros((1, 2, 2))
    pred = gt.copy()
    pred[0, 1, 0] = 4.0
    vis = np.ones((1, 2), dtype=bool)
    out = metrics.tap_metrics(pred, vis, gt, vis, (64, 64), query_frames=np.array([0]))
    assert out["delta_avg"] == 0.0
    pred[0, 1, 0] = 2.0
    out = metrics.tap_metrics(pred, vis, gt, vis, (64, 64), query_frames=np.array([0]))
    assert out["delta_avg"] == pytest.approx(1 / 5)


def test_tap_metrics_query_frame_excluded():
    gt = np.zeros((1, 2, 2))
    pred = gt.copy()
    pred[0, 0, :] = 100.0  # huge error only on the query frame
    vis = np.ones((1, 2), dtype=bool)
    out = metrics.tap_metrics(pred, vis, gt, vis, (64, 64), query_frames=np.array([0]))
    assert out["delta_avg"] == 1.0


def test_tap_occlusion_accuracy():
    gt = np.zeros((2, 3, 2))
    pred_vis = np.array([[True, True, False], [True, False, False]])
    gt_vis = np.array([[True, True, True], [True, False, True]])
    out = metrics.tap_metrics(gt.copy(), pred_vis, gt, gt_vis, (64, 64))
    assert out["occlusion_accuracy"] == pytest.approx(4 / 6)


def test_epe_3d_values():
    pred = np.zeros((4, 3))
    gt = np.zeros((4, 3))
    gt[0, 0] = 0.04
    gt[1, 0] = 0.2
    valid = np.array([True, True, True, False])
    out = metrics.epe_3d(pred, gt, valid)
    assert out["epe"] == pytest.approx((0.04 + 0.2) / 3)
    assert out["delta@0.05"] == pytest.approx(2 / 3)
    assert out["delta@0.1"] == pytest.approx(2 / 3)


def test_psnr_values():
    a = np.zeros((8, 8, 3))
    assert metrics.psnr(a, a) == 99.0
    b = a + 0.1
    assert metrics.psnr(a, b) == pytest.approx(20.0)


def test_ssim_identical_and_degraded():
    rng = np.random.default_rng(6)
    a = rng.random((24, 24, 3))
    assert metrics.ssim(a, a) == pytest.approx(1.0)
    noisy = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert metrics.ssim(a, noisy) < 0.95


def test_ssim_constant_offset():
    a = np.zeros((16, 16))
    b = a + 0.5
    # no structure anywhere; luminance term dominates
    s = metrics.ssim(a, b)
    assert 0 < s < 0.1


def test_predict_visibility():
    depth = np.full((8, 8), 5.0)
    tracks = np.array([[2.0, 2.0], [2.0, 2.0], [-3.0, 2.0], [2.0, 2.0]])
    pd = np.array([4.9, 5.2, 4.0, 5.04])
    vis = metrics.predict_visibility(pd, tracks, depth, eps_occ=0.05)
    assert vis.tolist() == [True, False, False, True]
