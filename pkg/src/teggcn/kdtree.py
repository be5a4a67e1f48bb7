"""K-D tree under the Chebyshev (max-norm) metric.

Supports the two queries a KSG estimator needs: the distance from every
stored point to its k-th nearest other point, and strict-inequality range
counts around arbitrary centers.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_STACK = 256


@njit(cache=True)
def _select(points, perm, dim, lo, hi, kth):
    # partial sort of perm[lo..hi] so that position kth holds its order statistic
    while hi > lo:
        a, b, c = points[perm[lo], dim], points[perm[(lo + hi) // 2], dim], points[perm[hi], dim]
        pivot = max(min(a, b), min(max(a, b), c))
        i, j = lo, hi
        while i <= j:
            while points[perm[i], dim] < pivot:
                i += 1
            while points[perm[j], dim] > pivot:
                j -= 1
            if i <= j:
                perm[i], perm[j] = perm[j], perm[i]
                i += 1
                j -= 1
        if kth <= j:
            hi = j
        elif kth >= i:
            lo = i
        else:
            return


@njit(cache=True)
def _build(points, leaf_size):
    n, d = points.shape
    perm = np.arange(n)
    max_nodes = 2 * n + 1
    start = np.empty(max_nodes, np.int64)
    end = np.empty(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    lo = np.empty((max_nodes, d))
    hi = np.empty((max_nodes, d))
    start[0] = 0
    end[0] = n
    count = 1
    todo = np.empty(max_nodes, np.int64)
    todo[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = todo[top]
        s, e = start[node], end[node]
        for k in range(d):
            lo[node, k] = np.inf
            hi[node, k] = -np.inf
        for i in range(s, e):
            p = perm[i]
            for k in range(d):
                v = points[p, k]
                if v < lo[node, k]:
                    lo[node, k] = v
                if v > hi[node, k]:
                    hi[node, k] = v
        if e - s <= leaf_size:
            continue
        dim = 0
        spread = -1.0
        for k in range(d):
            if hi[node, k] - lo[node, k] > spread:
                spread = hi[node, k] - lo[node, k]
                dim = k
        if spread <= 0.0:
            continue
        mid = s + (e - s) // 2
        _select(points, perm, dim, s, e - 1, mid)
        a, b = count, count + 1
        count += 2
        start[a], end[a] = s, mid
        start[b], end[b] = mid, e
        left[node], right[node] = a, b
        todo[top] = a
        todo[top + 1] = b
        top += 2
    return perm, start[:count], end[:count], left[:count], right[:count], lo[:count], hi[:count]


@njit(cache=True)
def _count(pts, start, end, left, right, lo, hi, q, r, exclude):
    d = pts.shape[1]
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    top = 1
    total = 0
    while top > 0:
        top -= 1
        node = stack[top]
        near = 0.0
        far = 0.0
        for k in range(d):
            a = lo[node, k] - q[k]
            b = q[k] - hi[node, k]
            m = a if a > b else b
            if m > near:
                near = m
            fa = -a if -a > -b else -b
            if fa > far:
                far = fa
        if near >= r:
            continue
        s, e = start[node], end[node]
        if far < r:
            total += e - s
            if s <= exclude < e:
                total -= 1
            continue
        if left[node] < 0:
            for i in range(s, e):
                if i == exclude:
                    continue
                dist = 0.0
                for k in range(d):
                    v = abs(pts[i, k] - q[k])
                    if v > dist:
                        dist = v
                if dist < r:
                    total += 1
            continue
        stack[top] = left[node]
        stack[top + 1] = right[node]
        top += 2
    return total


@njit(cache=True)
def _count_many(pts, start, end, left, right, lo, hi, centers, radii, exclude):
    out = np.empty(centers.shape[0], np.int64)
    for i in range(centers.shape[0]):
        out[i] = _count(pts, start, end, left, right, lo, hi, centers[i], radii[i], exclude[i])
    return out


@njit(cache=True)
def _kth(pts, start, end, left, right, lo, hi, i, k):
    d = pts.shape[1]
    best = np.full(k, np.inf)
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        near = 0.0
        for j in range(d):
            a = lo[node, j] - pts[i, j]
            b = pts[i, j] - hi[node, j]
            m = a if a > b else b
            if m > near:
                near = m
        if near >= best[k - 1]:
            continue
        if left[node] < 0:
            for j in range(start[node], end[node]):
                if j == i:
                    continue
                dist = 0.0
                for c in range(d):
                    v = abs(pts[j, c] - pts[i, c])
                    if v > dist:
                        dist = v
                if dist < best[k - 1]:
                    pos = k - 1
                    while pos > 0 and best[pos - 1] > dist:
                        best[pos] = best[pos - 1]
                        pos -= 1
                    best[pos] = dist
            continue
        # visit the nearer child first
        l, r = left[node], right[node]
        nl = 0.0
        nr = 0.0
        for j in range(d):
            a = lo[l, j] - pts[i, j]
            b = pts[i, j] - hi[l, j]
            m = a if a > b else b
            if m > nl:
                nl = m
            a = lo[r, j] - pts[i, j]
            b = pts[i, j] - hi[r, j]
            m = a if a > b else b
            if m > nr:
                nr = m
        if nl <= nr:
            stack[top] = r
            stack[top + 1] = l
        else:
            stack[top] = l
            stack[top + 1] = r
        top += 2
    return best[k - 1]


@njit(cache=True)
def _kth_all(pts, start, end, left, right, lo, hi, k):
    out = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        out[i] = _kth(pts, start, end, left, right, lo, hi, i, k)
    return out


class KDTree:
    """Immutable K-D tree over ``points`` (n, d) with the max-norm metric."""

    def __init__(self, points, leaf_size: int = 16):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError(f"KDTree needs a non-empty (n, d) array, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("KDTree points must be finite")
        self.points = pts
        perm, *nodes = _build(np.ascontiguousarray(pts), max(int(leaf_size), 1))
        self._perm = perm
        self._pos = np.empty_like(perm)
        self._pos[perm] = np.arange(perm.size)
        self._pts = np.ascontiguousarray(pts[perm])
        self._nodes = tuple(nodes)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def count_within(self, centers, radii, exclude=None) -> np.ndarray:
        """Points strictly closer than ``radii[i]`` to ``centers[i]``.

        ``exclude[i]`` names a stored point (original index) left out of the
        i-th count, or -1 for none.
        """
        c = np.ascontiguousarray(np.atleast_2d(np.asarray(centers, dtype=np.float64)))
        if c.shape[1] != self.dim:
            raise ValueError(f"center dimension {c.shape[1]} != tree dimension {self.dim}")
        r = np.broadcast_to(np.asarray(radii, dtype=np.float64), (c.shape[0],))
        if exclude is None:
            ex = np.full(c.shape[0], -1, np.int64)
        else:
            ex = np.broadcast_to(np.asarray(exclude, dtype=np.int64), (c.shape[0],))
            ex = np.where(ex >= 0, self._pos[np.maximum(ex, 0)], -1)
        return _count_many(self._pts, *self._nodes, c, np.ascontiguousarray(r),
                           np.ascontiguousarray(ex))

    def count_around_points(self, radii) -> np.ndarray:
        """Range counts centred on every stored point, each excluding itself."""
        idx = np.arange(self.n)
        return self.count_within(self.points, radii, exclude=idx)

    def kth_neighbor_distances(self, k: int) -> np.ndarray:
        """Distance from each stored point to its k-th nearest other point."""
        if not 1 <= k < self.n:
            raise ValueError(f"k must lie in [1, {self.n - 1}], got {k}")
        out = _kth_all(self._pts, *self._nodes, int(k))
        return out[self._pos]


def kdtree_range_count(tree: KDTree, center, radius: float) -> int:
    """Stored points within Chebyshev distance strictly below ``radius``.

    If ``center`` coincides with a stored point, that point is not counted.
    """
    c = np.asarray(center, dtype=np.float64).reshape(1, -1)
    total = int(tree.count_within(c, radius)[0])
    if radius > 0 and tree.count_within(c, np.nextafter(0.0, 1.0))[0] > 0:
        total -= 1
    return total


def brute_force_range_count(points, center, radius: float) -> int:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    dist = np.abs(pts - np.asarray(center, dtype=np.float64)).max(axis=1)
    total = int((dist < radius).sum())
    if radius > 0 and (dist == 0).any():
        total -= 1
    return total
