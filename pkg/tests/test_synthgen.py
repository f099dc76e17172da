"""Synthetic scene generator: rigidity, exactness, corruption bookkeeping."""
import numpy as np
import pytest
from types import SimpleNamespace

from m4d import synthgen as sg
from m4d.objectives import evaluate_supervision
from m4d.render.raster import RasterConfig, rasterize
from m4d.scene import pose_at


@pytest.fixture(scope="module")
def default_bundle():
    sy = sg.make_scene(sg.default_spec(seed=0))
    ds, gt = sg.render_gt_priors(sy)
    return sy, ds, gt


@pytest.fixture(scope="module")
def small_exact_bundle():
    spec = sg.zero_check_spec(seed=0, t_frames=6, track_offsets=(1, -1, 2, -2))
    sy = sg.make_scene(spec)
    ds, gt = sg.render_gt_priors(sy)
    return sy, ds, gt


def test_exact_budget_and_determinism():
    a = sg.make_scene(sg.default_spec(seed=0))
    b = sg.make_scene(sg.default_spec(seed=0))
    assert a.scene.count == 600
    assert np.array_equal(a.scene.mu0, b.scene.mu0)
    assert np.array_equal(a.scene.color, b.scene.color)
    assert np.array_equal(a.bases.trans, b.bases.trans)
    c = sg.make_scene(sg.default_spec(seed=1))
    assert not np.array_equal(a.scene.mu0, c.scene.mu0)


def test_bases_identity_at_frame_zero(default_bundle):
    sy, _, _ = default_bundle
    assert np.allclose(sy.bases.quat[:, 0], [1.0, 0.0, 0.0, 0.0])
    assert np.allclose(sy.bases.trans[:, 0], 0.0)
    pos0, q0 = pose_at(sy.scene, sy.bases, 0)
    np.testing.assert_allclose(pos0, sy.scene.mu0, atol=1e-12)
    np.testing.assert_allclose(q0, sy.scene.quat0, atol=1e-9)


def test_objects_move_rigidly(default_bundle):
    # pairwise distances within an object are frame-invariant
    sy, _, _ = default_bundle
    labels = sy.scene.sem_logit.argmax(axis=1)
    for k in (1, 2):
        idx = np.nonzero(labels == k)[0][:25]
        ref = None
        for t in (0, 9, 23):
            pos, _ = pose_at(sy.scene, sy.bases, t)
            p = pos[idx]
            d = np.linalg.norm(p[:, None] - p[None, :], axis=-1)
            if ref is None:
                ref = d
            else:
                np.testing.assert_allclose(d, ref, atol=1e-9)


def test_background_is_static(default_bundle):
    sy, _, _ = default_bundle
    bg = ~sy.scene.is_dynamic
    for t in (5, 17):
        pos, _ = pose_at(sy.scene, sy.bases, t)
        np.testing.assert_allclose(pos[bg], sy.scene.mu0[bg], atol=1e-12)


def test_priors_have_objects_and_coverage(default_bundle):
    _, ds, gt = default_bundle
    assert set(np.unique(gt["masks"])) == {0, 1, 2}
    assert (gt["alpha"] >= 0.99).mean() > 0.99
    for k in (1, 2):
        frac = (gt["masks"] == k).mean()
        assert 0.02 < frac < 0.4
    f = ds.frames[12]
    assert set(f.tracks) == {1, -1, 8, -8}
    for uv, valid in f.tracks.values():
        assert valid.mean() > 0.4


def test_query_tracks_identity_at_source(default_bundle):
    _, _, gt = default_bundle
    np.testing.assert_allclose(gt["query_tracks"][:, 0], gt["query_points"], atol=1e-9)
    assert gt["query_vis"][:, 0].all()
    assert gt["scene_diameter"] > 10.0


def test_ground_truth_round_trip(tmp_path, default_bundle):
    _, _, gt = default_bundle
    path = tmp_path / "gt.m4dc"
    sg.save_ground_truth(path, gt)
    back = sg.load_ground_truth(path)
    for key in ("masks", "query_tracks", "query_vis", "query_tracks3d"):
        assert np.array_equal(back[key], gt[key])
    assert back["scene_diameter"] == pytest.approx(gt["scene_diameter"])


def test_pixel_aligned_flow_is_integral(small_exact_bundle):
    sy, ds, gt = small_exact_bundle
    h, w = 64, 64
    ys, xs = np.mgrid[0:h, 0:w]
    grid = np.stack([xs, ys], -1).astype(float)
    uv, valid = ds.frames[0].tracks[1]
    flow = uv - grid
    m0 = gt["masks"][0]
    assert valid[m0 == 1].all()
    assert np.abs(flow[(m0 == 1) & valid] - np.array([1.0, 0.0])).max() < 1e-6
    assert np.abs(flow[(m0 == 2) & valid] - np.array([-1.0, 0.0])).max() < 1e-6
    assert np.abs(flow[(m0 == 0) & valid]).max() < 1e-9


def test_pixel_aligned_depth_matches_card_geometry(small_exact_bundle):
    # cards sit at fixed camera-space z, so prior depth at frame 0 must
    # equal those plane depths wherever the mask claims the card
    sy, ds, gt = small_exact_bundle
    dist = float(np.linalg.norm(sy.cameras[0].t_wc))
    m0, d0 = gt["masks"][0], ds.frames[0].depth
    assert np.abs(d0[m0 == 1] - (dist - 1.6)).max() < 1e-6
    assert np.abs(d0[m0 == 2] - (dist - 0.8)).max() < 1e-6
    assert np.abs(d0[m0 == 0] - (dist + 0.5)).max() < 1e-6


def test_supervision_residuals_vanish_on_exact_scene(small_exact_bundle):
    # an exact reconstruction evaluated against its own priors leaves
    # every objective term at numerical-noise level
    sy, ds, _ = small_exact_bundle
    cfg = RasterConfig(alpha_cutoff=0.0, transmittance_floor=0.0, dilation=0.0)
    t, d = 2, 1
    fr, fr2 = ds.frames[t], ds.frames[t + d]
    out = rasterize(sy.scene, sy.bases, sy.cameras[t], t, t_target=t + d, config=cfg)
    uv, valid = fr.tracks[d]
    res = evaluate_supervision(
        out, sy.cameras[t], sy.cameras[t + d], fr.image, fr.mask,
        image_tp=fr2.image, labels_tp=fr2.mask, depth_tp=fr2.depth,
        tracks_prior=uv, valid_prior=valid)
    for name, val in res.terms.items():
        assert val <= 1e-4, (name, val)


def test_corruption_zero_spec_is_identity(default_bundle):
    _, ds, _ = default_bundle
    out, rec = sg.corrupt_priors(ds, sg.CorruptionSpec(seed=5))
    for t in (0, 11, 23):
        assert np.array_equal(out.frames[t].mask, ds.frames[t].mask)
        assert np.array_equal(out.frames[t].depth, ds.frames[t].depth)
        for d in ds.frames[t].tracks:
            assert np.array_equal(out.frames[t].tracks[d][0], ds.frames[t].tracks[d][0])
    assert not rec.outlier_masks and not rec.morph_ops
    assert np.allclose(rec.depth_scales, 1.0) and np.allclose(rec.depth_shifts, 0.0)


def test_corruption_outliers_hit_target_rate(default_bundle):
    _, ds, _ = default_bundle
    cspec = sg.CorruptionSpec(seed=3, track_outlier_rate=0.05)
    out, rec = sg.corrupt_priors(ds, cspec)
    fracs, offsets = [], []
    for (t, d), m in rec.outlier_masks.items():
        uv0, valid = ds.frames[t].tracks[d]
        uvc, _ = out.frames[t].tracks[d]
        if valid.sum() == 0:
            continue
        fracs.append(m.sum() / valid.sum())
        if m.any():
            delta = np.linalg.norm((uvc - uv0)[m], axis=-1)
            np.testing.assert_allclose(delta, 10.0, atol=1e-9)
            offsets.append(delta.mean())
        clean = valid & ~m
        assert np.array_equal(uvc[clean], uv0[clean])
    assert 0.02 < np.mean(fracs) < 0.10
    assert offsets


def test_corruption_jitter_is_zero_mean(default_bundle):
    _, ds, _ = default_bundle
    out, _ = sg.corrupt_priors(ds, sg.CorruptionSpec(seed=4, track_jitter_px=2.0))
    uv0, valid = ds.frames[6].tracks[1]
    uvc, _ = out.frames[6].tracks[1]
    d = (uvc - uv0)[valid]
    assert abs(d.mean()) < 0.3
    assert 1.5 < d.std() < 2.5


def test_corruption_swap_and_morph(default_bundle):
    _, ds, _ = default_bundle
    out, rec = sg.corrupt_priors(
        ds, sg.CorruptionSpec(seed=3, mask_swap_frames=(12, 13)))
    for t in (12, 13):
        assert np.array_equal(out.frames[t].mask == 1, ds.frames[t].mask == 2)
        assert np.array_equal(out.frames[t].mask == 2, ds.frames[t].mask == 1)
    assert np.array_equal(out.frames[11].mask, ds.frames[11].mask)
    assert rec.swapped_frames == (12, 13)

    out2, rec2 = sg.corrupt_priors(ds, sg.CorruptionSpec(seed=3, mask_morph_max=3))
    assert len(rec2.morph_ops) == ds.t_frames
    assert all(1 <= r <= 3 and op in (0, 1) for _, op, r in rec2.morph_ops)
    changed = sum((out2.frames[t].mask != ds.frames[t].mask).any() for t in range(24))
    assert changed >= 20


def test_corruption_record_round_trip(tmp_path, default_bundle):
    _, ds, _ = default_bundle
    cspec = sg.CorruptionSpec(seed=9, track_jitter_px=1.0, track_outlier_rate=0.05,
                              depth_scale_noise=0.02, mask_morph_max=2,
                              mask_swap_frames=(20, 21))
    _, rec = sg.corrupt_priors(ds, cspec)
    path = tmp_path / "rec.m4dc"
    sg.save_corruption_record(path, rec)
    back = sg.load_corruption_record(path)
    assert back.swapped_frames == rec.swapped_frames
    assert back.morph_ops == rec.morph_ops
    assert set(back.outlier_masks) == set(rec.outlier_masks)
    key = next(iter(rec.outlier_masks))
    assert np.array_equal(back.outlier_masks[key], rec.outlier_masks[key])
    np.testing.assert_allclose(back.depth_scales, rec.depth_scales)


def test_corruption_is_deterministic(default_bundle):
    _, ds, _ = default_bundle
    cspec = sg.CorruptionSpec(seed=7, track_jitter_px=2.0, track_outlier_rate=0.05,
                              depth_scale_noise=0.02, mask_morph_max=3,
                              mask_swap_frames=(12,))
    a, _ = sg.corrupt_priors(ds, cspec)
    b, _ = sg.corrupt_priors(ds, cspec)
    for t in (0, 12, 23):
        assert np.array_equal(a.frames[t].mask, b.frames[t].mask)
        assert np.array_equal(a.frames[t].depth, b.frames[t].depth)
        for d in a.frames[t].tracks:
            assert np.array_equal(a.frames[t].tracks[d][0], b.frames[t].tracks[d][0])


def _prompt(obj, box, points):
    return SimpleNamespace(object_id=obj, box=box, points=points)


class TestOracleSegmenter:
    def setup_method(self):
        gt = np.zeros((1, 12, 12), dtype=np.int32)
        gt[0, 2:6, 2:6] = 1
        gt[0, 7:11, 7:11] = 2
        self.gt = gt
        self.seg = sg.OracleSegmenter(gt)
        self.swapped = np.zeros((12, 12), dtype=np.int32)
        self.swapped[2:6, 2:6] = 2
        self.swapped[7:11, 7:11] = 1

    def test_positive_point_reveals_component(self):
        out = self.seg.segment(0, [_prompt(1, (1, 1, 6, 6), [(3, 3, True)])], self.swapped)
        assert (out[2:6, 2:6] == 1).all()

    def test_negative_point_clears_component(self):
        out = self.seg.segment(0, [_prompt(1, (6, 6, 11, 11), [(8, 8, False)])], self.swapped)
        assert (out[7:11, 7:11] == 0).all()
        assert (out[2:6, 2:6] == 2).all()  # untouched

    def test_swap_recovery_in_one_round(self):
        # positive fill overwrites whatever label sat on the true region,
        # so a label swap resolves in a single prompt round
        prompts = [
            _prompt(1, (1, 1, 6, 6), [(3, 3, True)]),
            _prompt(1, (6, 6, 11, 11), [(8, 8, False)]),
            _prompt(2, (6, 6, 11, 11), [(8, 8, True)]),
        ]
        out = self.seg.segment(0, prompts, self.swapped)
        assert np.array_equal(out, self.gt[0])

    def test_mismatched_positive_is_ignored(self):
        out = self.seg.segment(0, [_prompt(1, (0, 0, 11, 11), [(8, 8, True)])],
                               self.swapped)
        assert np.array_equal(out, self.swapped)

    def test_out_of_image_points_are_ignored(self):
        out = self.seg.segment(0, [_prompt(1, (0, 0, 11, 11), [(-1, 3, True), (3, 99, True)])],
                               self.swapped)
        assert np.array_equal(out, self.swapped)

    def test_box_limits_positive_fill(self):
        out = self.seg.segment(0, [_prompt(1, (1, 1, 3, 3), [(3, 3, True)])], self.swapped)
        assert (out[2:4, 2:4] == 1).all()
        assert (out[4:6, 2:6] == 2).all()  # outside box keeps prior label


def test_mask_from_render_counts_transmittance():
    probs = np.zeros((2, 2, 3))
    probs[0, 0] = (0.05, 0.55, 0.0)  # opaque pixel, object 1 wins
    probs[1, 0] = (0.2, 0.0, 0.3)    # translucent: transmittance tips it to bg
    probs[1, 1] = (0.1, 0.0, 0.8)
    alpha = np.array([[0.6, 0.0], [0.5, 0.9]])
    mask = sg.mask_from_render(probs, alpha)
    assert mask[0, 0] == 1
    assert mask[0, 1] == 0           # empty pixel falls to background
    assert mask[1, 0] == 0           # 0.3 object mass < 0.2 + 0.5 background
    assert mask[1, 1] == 2
