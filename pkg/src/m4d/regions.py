"""Pixel-region utilities: exact EDT, connected components, morphology.

The distance transform is the exact two-pass algorithm (per-column 1-D
distances, then the lower envelope of parabolas along rows), so results
equal the brute-force definition to float precision, not an approximation.
"""
from __future__ import annotations

import numpy as np


def _column_sq_dist(mask: np.ndarray) -> np.ndarray:
    """Per-column squared distance from each pixel to the nearest False."""
    h, w = mask.shape
    d = np.full((h, w), np.inf)
    d[~mask] = 0.0
    for r in range(1, h):
        d[r] = np.minimum(d[r], d[r - 1] + 1.0)
    for r in range(h - 2, -1, -1):
        d[r] = np.minimum(d[r], d[r + 1] + 1.0)
    return d * d


def _envelope_pass(f: np.ndarray) -> np.ndarray:
    """1-D squared EDT of sampled function f (lower envelope of parabolas)."""
    n = f.shape[0]
    out = np.empty(n)
    v = np.empty(n, dtype=np.int64)    # parabola sites
    z = np.empty(n + 1)                # envelope breakpoints
    k = 0
    v[0] = -1                          # sentinel until the first finite site
    z[0], z[1] = -np.inf, np.inf
    for q in range(n):
        if not np.isfinite(f[q]):
            continue
        if v[0] == -1:
            v[0] = q
            z[0], z[1] = -np.inf, np.inf
            continue
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if v[0] == -1:
        out[:] = np.inf
        return out
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        out[q] = (q - v[k]) ** 2 + f[v[k]]
    return out


def edt(mask: np.ndarray, border_false: bool = True) -> np.ndarray:
    """Euclidean distance from each True pixel to the nearest False pixel.

    False pixels get 0. With border_false, pixels outside the image count
    as False (a mask touching the border has distance 1 there); otherwise
    a mask with no False pixel yields inf everywhere.
    """
    mask = np.asarray(mask, dtype=bool)
    if border_false:
        padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = mask
        return edt(padded, border_false=False)[1:-1, 1:-1]
    f = _column_sq_dist(mask)
    out = np.empty_like(f)
    for r in range(f.shape[0]):
        if np.all(f[r] == 0.0):
            out[r] = 0.0
        else:
            out[r] = _envelope_pass(f[r])
    return np.sqrt(out)


def connected_components(mask: np.ndarray, connectivity: int = 4):
    """Label connected True regions 1..n in row-major discovery order.

    Returns (labels int32 [H,W], count). Background stays 0.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = [0]

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    nxt = 1
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            neigh = []
            if c > 0 and mask[r, c - 1]:
                neigh.append(labels[r, c - 1])
            if r > 0 and mask[r - 1, c]:
                neigh.append(labels[r - 1, c])
            if connectivity == 8 and r > 0:
                if c > 0 and mask[r - 1, c - 1]:
                    neigh.append(labels[r - 1, c - 1])
                if c + 1 < w and mask[r - 1, c + 1]:
                    neigh.append(labels[r - 1, c + 1])
            if not neigh:
                labels[r, c] = nxt
                parent.append(nxt)
                nxt += 1
            else:
                m = min(neigh)
                labels[r, c] = m
                for o in neigh:
                    union(m, o)

    # resolve unions and relabel compactly in first-occurrence order
    remap: dict[int, int] = {}
    count = 0
    for r in range(h):
        for c in range(w):
            if labels[r, c]:
                root = find(labels[r, c])
                if root not in remap:
                    count += 1
                    remap[root] = count
                labels[r, c] = remap[root]
    return labels, count


def binary_dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    """Disk dilation: pixels within `radius` of a True pixel."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    return edt(~mask, border_false=False) <= radius


def binary_erode(mask: np.ndarray, radius: float) -> np.ndarray:
    """Disk erosion; the image border counts as False."""
    return edt(np.asarray(mask, dtype=bool), border_false=True) > radius


def boundary(mask: np.ndarray) -> np.ndarray:
    """True pixels with a 4-neighbor outside the mask (image edge counts)."""
    mask = np.asarray(mask, dtype=bool)
    pad = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=bool)
    pad[1:-1, 1:-1] = mask
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return mask & ~interior
