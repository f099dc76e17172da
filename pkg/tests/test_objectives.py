"""Loss terms: pinned values, edge cases, and end-to-end gradient checks."""
import numpy as np
import pytest

from m4d import rng
from m4d.objectives import (
    LossWeights, ObjectiveConfig, bilinear_sample, consistency_target,
    evaluate_supervision, loss_confidence, loss_depth, loss_rgb,
    loss_semantic, loss_track, project_traj, total_loss,
)
from m4d.render import rasterize, rasterize_backward
from m4d.render.raster import exact_config
from m4d.scene import Camera, GaussianSet, MotionBases

from helpers import random_scene


def test_loss_rgb_zero_on_match_and_scale():
    r = rng.stream(0, "rgb")
    img = r.uniform(size=(6, 5, 3))
    val, e = loss_rgb(img, img)
    assert val == 0.0 and np.all(e == 0.0)
    val, e = loss_rgb(img + 0.25, img)
    assert abs(val - 0.25) < 1e-12
    assert np.allclose(e, 0.25)


def test_loss_semantic_uniform_is_log_k():
    probs = np.full((4, 4, 4), 0.25)
    labels = np.zeros((4, 4), dtype=np.int64)
    val, e = loss_semantic(probs, labels)
    assert abs(val - np.log(4)) < 1e-12
    assert np.allclose(e, np.log(4))


def test_loss_semantic_clamps_zero_probability():
    probs = np.zeros((2, 2, 3))
    probs[..., 1] = 1.0
    labels = np.zeros((2, 2), dtype=np.int64)  # prior says class 0, prob 0
    val, _ = loss_semantic(probs, labels, clamp=1e-6)
    assert abs(val - (-np.log(1e-6))) < 1e-9


def test_loss_track_exact_and_validity():
    r = rng.stream(1, "track")
    pred = r.uniform(0, 10, size=(5, 5, 2))
    conf = np.ones((5, 5))
    valid = np.ones((5, 5), dtype=bool)
    assert loss_track(pred, pred.copy(), valid, conf) == 0.0
    prior = pred.copy()
    prior[0, 0] += 100.0  # corrupt only an invalid pixel
    valid[0, 0] = False
    assert loss_track(pred, prior, valid, conf) == 0.0
    assert loss_track(pred, prior, np.zeros_like(valid), conf) == 0.0


def test_loss_track_confidence_weighting():
    pred = np.zeros((1, 2, 2))
    prior = np.zeros((1, 2, 2))
    prior[0, 0] = (3.0, 4.0)  # distance 5
    conf = np.array([[0.5, 1.0]])
    valid = np.ones((1, 2), dtype=bool)
    # mean over valid of conf * dist = (0.5*5 + 1*0)/2
    assert abs(loss_track(pred, prior, valid, conf) - 1.25) < 1e-12


def test_loss_depth_exact_zero():
    r = rng.stream(2, "depth")
    depth_prior = r.uniform(2, 4, size=(6, 6))
    # tracks landing exactly on pixel centers sample the map exactly
    ys, xs = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
    tracks = np.stack([xs, ys], -1).astype(np.float64)
    valid = np.ones((6, 6), dtype=bool)
    conf = np.ones((6, 6))
    assert loss_depth(depth_prior, depth_prior, tracks, valid, conf) == 0.0


def test_consistency_identity_frames():
    r = rng.stream(3, "cons")
    img = r.uniform(size=(5, 5, 3))
    lab = r.integers(0, 3, size=(5, 5))
    ys, xs = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
    tracks = np.stack([xs, ys], -1).astype(np.float64)
    valid = np.ones((5, 5), dtype=bool)
    what = consistency_target(img, img, lab, lab, tracks, valid)
    assert np.all(what == 1.0)


def test_loss_confidence_half_is_ln2():
    conf = np.full((3, 3), 0.5)
    target = np.ones((3, 3))
    valid = np.ones((3, 3), dtype=bool)
    assert abs(loss_confidence(conf, target, valid) - np.log(2)) < 1e-12


def test_total_loss_weighting():
    terms = {"rgb": 1.0, "sem": 1.0, "track": 1.0, "depth": 1.0, "consistency": 1.0}
    w = LossWeights(rgb=1.0, sem=0.5, track=2.0, depth=0.5, consistency=0.1)
    assert abs(total_loss(terms, w) - 4.1) < 1e-12


def test_bilinear_sample_values_and_grads():
    r = rng.stream(4, "bilin")
    img = r.uniform(size=(7, 9))
    # exact at integer coordinates
    pts = np.array([[3.0, 2.0], [8.0, 6.0], [0.0, 0.0]])
    vals, _, _ = bilinear_sample(img, pts)
    assert np.allclose(vals, [img[2, 3], img[6, 8], img[0, 0]])
    # gradient vs finite differences at generic points
    pts = r.uniform(0.6, 5.4, size=(20, 2))
    vals, gx, gy = bilinear_sample(img, pts)
    h = 1e-6
    vx, _, _ = bilinear_sample(img, pts + [h, 0])
    vy, _, _ = bilinear_sample(img, pts + [0, h])
    assert np.allclose((vx - vals) / h, gx, atol=1e-5)
    assert np.allclose((vy - vals) / h, gy, atol=1e-5)


def test_project_traj_identity_for_centered_splat():
    # a single opaque Gaussian on the ray of pixel (5, 7): track equals the pixel
    cam = Camera.look_at(
        eye=[0.0, 0.0, -5.0], target=[0.0, 0.0, 0.0],
        fx=20.0, fy=20.0, cx=7.5, cy=7.5, width=16, height=16,
    )
    world = cam.unproject(np.array([[7.0, 5.0]]), np.array([5.0]))
    scene = GaussianSet(
        mu0=world, quat0=np.array([[1.0, 0, 0, 0]]), log_scale=np.full((1, 3), -1.0),
        opacity_logit=np.array([12.0]), color=np.ones((1, 3)) * 0.5,
        sem_logit=np.zeros((1, 2)), unc_logit=np.zeros(1),
        coeff_logit=np.zeros((1, 1)), is_dynamic=np.array([False]),
    )
    bases = MotionBases.identity(1, 2)
    out = rasterize(scene, bases, cam, t=0, t_target=0, config=exact_config())
    tracks, depth, valid = project_traj(out.traj3d, out.alpha, cam)
    assert valid[5, 7]
    assert abs(tracks[5, 7, 0] - 7.0) < 1e-6
    assert abs(tracks[5, 7, 1] - 5.0) < 1e-6
    assert abs(depth[5, 7] - 5.0) < 1e-6


def test_anchored_tracks_identity_when_target_is_self():
    # generic scene: anchored prediction at t'=t is the pixel grid exactly
    scene, bases, cam = random_scene(31, n=25)
    out = rasterize(scene, bases, cam, t=1, t_target=1, config=exact_config())
    h, w = out.alpha.shape
    ac = np.maximum(out.alpha, 1e-12)[..., None]
    assert np.allclose(out.traj3d, out.traj3d_anchor)
    from m4d.objectives import _pixel_grid, _project_with_jac  # intentional: internals
    Yt = (out.traj3d / ac).reshape(-1, 3)
    Ys = (out.traj3d_anchor / ac).reshape(-1, 3)
    uv_t, _, _, _ = _project_with_jac(cam, Ys, 0.01)
    uv_p, _, _, _ = _project_with_jac(cam, Yt, 0.01)
    u_pred = _pixel_grid(h, w).reshape(-1, 2) + uv_p - uv_t
    assert np.allclose(u_pred, _pixel_grid(h, w).reshape(-1, 2))


def _fake_priors(seed, h, w, k):
    r = rng.stream(seed, "fake-priors")
    return {
        "image_t": r.uniform(size=(h, w, 3)),
        "labels_t": r.integers(0, k + 1, size=(h, w)),
        "image_tp": r.uniform(size=(h, w, 3)),
        "labels_tp": r.integers(0, k + 1, size=(h, w)),
        "depth_tp": r.uniform(3.0, 6.0, size=(h, w)),
        "tracks_prior": r.uniform(1.0, min(h, w) - 2.0, size=(h, w, 2)),
        "valid_prior": r.uniform(size=(h, w)) < 0.8,
    }


def test_supervision_gradient_matches_fd():
    """Full objective through the renderer vs central differences."""
    scene, bases, cam = random_scene(41, n=6, k=2, b=2, spread=1.2)
    pri = _fake_priors(42, cam.height, cam.width, 2)
    weights, cfg = LossWeights(), ObjectiveConfig()

    def run():
        out = rasterize(scene, bases, cam, t=1, t_target=2, config=exact_config())
        sup = evaluate_supervision(
            out, cam, cam, pri["image_t"], pri["labels_t"],
            image_tp=pri["image_tp"], labels_tp=pri["labels_tp"],
            depth_tp=pri["depth_tp"], tracks_prior=pri["tracks_prior"],
            valid_prior=pri["valid_prior"], weights=weights, cfg=cfg,
        )
        return out, sup

    out, sup = run()
    assert set(sup.terms) == {"rgb", "sem", "track", "depth", "consistency"}
    grads = rasterize_backward(out, sup.grads)

    r = rng.stream(43, "fd")
    h = 1e-5
    for field in ["mu0", "quat0", "log_scale", "opacity_logit", "color",
                  "sem_logit", "unc_logit", "coeff_logit"]:
        flat = getattr(scene, field).reshape(-1)
        g = grads[field].reshape(-1)
        for c in r.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[c]
            flat[c] = orig + h
            lp = run()[1].total
            flat[c] = orig - h
            lm = run()[1].total
            flat[c] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(g[c]), 1e-4)
            assert abs(fd - g[c]) / denom < 2e-3, f"{field}[{c}]: fd={fd:.8g} an={g[c]:.8g}"
    for field in ["quat", "trans"]:
        arr = getattr(bases, field)
        g = grads[f"basis_{field}"]
        for _ in range(4):
            b = int(r.integers(arr.shape[0]))
            t = int(r.choice([1, 2]))
            j = int(r.integers(arr.shape[2]))
            orig = arr[b, t, j]
            arr[b, t, j] = orig + h
            lp = run()[1].total
            arr[b, t, j] = orig - h
            lm = run()[1].total
            arr[b, t, j] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(g[b, t, j]), 1e-4)
            assert abs(fd - g[b, t, j]) / denom < 2e-3, f"basis_{field}[{b},{t},{j}]"
