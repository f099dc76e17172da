import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m4d.regions import binary_dilate, binary_erode, boundary, connected_components, edt


def edt_brute(mask, border_false=True):
    """O(n^2) reference: distance from each pixel to the nearest False pixel,
    with the ring outside the image counting as False when border_false."""
    h, w = mask.shape
    out = np.full((h, w), np.inf)
    ys, xs = np.nonzero(~mask)
    pts = np.stack([ys, xs], axis=1).astype(float)
    if border_false:
        ring = []
        for c in range(-1, w + 1):
            ring.append((-1, c))
            ring.append((h, c))
        for r in range(h):
            ring.append((r, -1))
            ring.append((r, w))
        pts = np.vstack([pts, np.array(ring, dtype=float)]) if len(pts) else np.array(ring, dtype=float)
    if len(pts) == 0:
        return out
    for r in range(h):
        for c in range(w):
            d = np.hypot(pts[:, 0] - r, pts[:, 1] - c)
            out[r, c] = d.min()
    return out


def components_brute(mask):
    """Flood fill, 4-connectivity, labels in first-occurrence order."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    nxt = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and labels[r, c] == 0:
                nxt += 1
                stack = [(r, c)]
                labels[r, c] = nxt
                while stack:
                    y, x = stack.pop()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        ny, nx_ = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx_ < w and mask[ny, nx_] and labels[ny, nx_] == 0:
                            labels[ny, nx_] = nxt
                            stack.append((ny, nx_))
    return labels, nxt


masks = st.integers(0, 2**31 - 1).map(
    lambda s: np.random.default_rng(s).random((np.random.default_rng(s).integers(1, 12),
                                               np.random.default_rng(s + 1).integers(1, 12))) < 0.5
)


@settings(max_examples=60, deadline=None)
@given(masks, st.booleans())
def test_edt_matches_brute_force(mask, border):
    got = edt(mask, border_false=border)
    want = edt_brute(mask, border_false=border)
    finite = np.isfinite(want)
    assert np.array_equal(np.isfinite(got), finite)
    assert np.allclose(got[finite], want[finite], atol=1e-9)


def test_edt_single_true_pixel():
    mask = np.zeros((5, 7), dtype=bool)
    mask[2, 3] = True
    d = edt(mask, border_false=True)
    assert d[2, 3] == 1.0
    assert (d[~mask] == 0).all()


def test_edt_all_true_no_border():
    d = edt(np.ones((4, 4), dtype=bool), border_false=False)
    assert np.isinf(d).all()


@settings(max_examples=60, deadline=None)
@given(masks)
def test_components_match_brute_force(mask):
    got, n_got = connected_components(mask)
    want, n_want = components_brute(mask)
    assert n_got == n_want
    assert np.array_equal(got, want)


def test_components_eight_connectivity_merges_diagonal():
    mask = np.eye(4, dtype=bool)
    _, n4 = connected_components(mask, connectivity=4)
    _, n8 = connected_components(mask, connectivity=8)
    assert n4 == 4
    assert n8 == 1


@settings(max_examples=40, deadline=None)
@given(masks, st.sampled_from([1.0, 1.5, 2.0]))
def test_dilate_erode_match_distance_definition(mask, radius):
    dil = binary_dilate(mask, radius)
    ero = binary_erode(mask, radius)
    want_dil = edt_brute(~mask, border_false=False) <= radius
    want_ero = edt_brute(mask, border_false=True) > radius
    assert np.array_equal(dil, want_dil)
    assert np.array_equal(ero, want_ero)


def test_dilate_grows_erode_shrinks():
    mask = np.zeros((9, 9), dtype=bool)
    mask[3:6, 3:6] = True
    dil = binary_dilate(mask, 1.0)
    ero = binary_erode(mask, 1.0)
    assert dil.sum() > mask.sum()
    assert 0 < ero.sum() < mask.sum()
    assert (dil | mask).sum() == dil.sum()
    assert (ero & mask).sum() == ero.sum()


def test_boundary_square():
    mask = np.zeros((6, 6), dtype=bool)
    mask[1:5, 1:5] = True
    b = boundary(mask)
    inner = np.zeros_like(mask)
    inner[2:4, 2:4] = True
    assert np.array_equal(b, mask & ~inner)


def test_boundary_touching_image_edge_counts():
    mask = np.ones((3, 3), dtype=bool)
    b = boundary(mask)
    inner = np.zeros_like(mask)
    inner[1, 1] = True
    assert np.array_equal(b, ~inner)
