import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from m4d.optim import Adam


def test_single_step_matches_closed_form():
    # one scalar, g=1, lr=0.1: bias correction cancels at t=1, so
    # delta = -lr * 1 / (sqrt(1) + eps)
    p = {"x": np.array([1.0])}
    opt = Adam({"x": 0.1})
    opt.step(p, {"x": np.array([1.0])})
    expected = 1.0 - 0.1 * 1.0 / (math.sqrt(1.0) + 1e-8)
    assert abs(p["x"][0] - expected) < 1e-15


def _reference_adam(x0, gs, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    # scalar textbook Adam, written independently of the implementation
    x, m, v = x0, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
    return x


@settings(deadline=None, max_examples=50)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8),
       st.floats(1e-4, 0.5))
def test_matches_scalar_reference_over_steps(gs, lr):
    p = {"x": np.array([0.7])}
    opt = Adam({"x": lr})
    for g in gs:
        opt.step(p, {"x": np.array([g])})
    ref = _reference_adam(0.7, gs, lr)
    assert p["x"][0] == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_zero_grads_leave_params_unchanged():
    p = {"x": np.arange(6.0).reshape(2, 3)}
    before = p["x"].copy()
    opt = Adam({"x": 0.05})
    for _ in range(3):
        opt.step(p, {"x": np.zeros((2, 3))})
    np.testing.assert_array_equal(p["x"], before)


def test_nonfinite_grad_skips_group_and_flags():
    p = {"x": np.array([1.0]), "y": np.array([2.0])}
    opt = Adam({"x": 0.1, "y": 0.1})
    g = {"x": np.array([np.nan]), "y": np.array([1.0])}
    opt.step(p, g)
    assert p["x"][0] == 1.0
    assert p["y"][0] != 2.0
    assert opt.skipped == [(1, "x")]


def test_missing_group_untouched():
    p = {"x": np.array([1.0]), "y": np.array([2.0])}
    opt = Adam({"x": 0.1, "y": 0.1})
    opt.step(p, {"x": np.array([0.5])})
    assert p["y"][0] == 2.0
    assert "y" not in opt.m


def test_quaternion_groups_stay_unit():
    q = np.array([[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.5, 0.5]])
    p = {"quat0": q}
    opt = Adam({"quat0": 0.3})
    rng = np.random.default_rng(0)
    for _ in range(5):
        opt.step(p, {"quat0": rng.normal(size=(2, 4))})
    norms = np.linalg.norm(p["quat0"], axis=-1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_row_surgery_tracks_inserts_and_prunes():
    p = {"x": np.zeros((4, 2))}
    opt = Adam({"x": 0.1})
    opt.step(p, {"x": np.ones((4, 2))})
    p["x"] = np.concatenate([p["x"], np.zeros((2, 2))], axis=0)
    opt.extend_rows("x", 2)
    assert opt.m["x"].shape == (6, 2)
    assert np.all(opt.m["x"][4:] == 0.0)

    keep = np.array([True, False, True, True, False, True])
    p["x"] = p["x"][keep]
    opt.select_rows("x", keep)
    opt.step(p, {"x": np.ones((4, 2))})
    assert opt.v["x"].shape == (4, 2)


def test_snapshot_restore_round_trip():
    p = {"x": np.array([1.0])}
    opt = Adam({"x": 0.1})
    opt.step(p, {"x": np.array([1.0])})
    snap = opt.snapshot()
    x_at_snap = p["x"].copy()
    opt.step(p, {"x": np.array([1.0])})
    opt.halve_lrs()

    opt.restore(snap)
    p["x"] = x_at_snap.copy()
    opt.step(p, {"x": np.array([1.0])})
    assert opt.step_count == 2
    assert opt.lrs["x"] == 0.1

    # replaying the same grad from the restored state is bit-identical
    opt2 = Adam({"x": 0.1})
    p2 = {"x": np.array([1.0])}
    opt2.step(p2, {"x": np.array([1.0])})
    opt2.step(p2, {"x": np.array([1.0])})
    assert p["x"][0] == p2["x"][0]
