"""Batched goodness evaluation over all triadic cubes of a box.

The partition builder needs well-connectedness for every triadic cube at
every scale of the working box; evaluating the reference predicates cube by
cube is far too slow at desk scale.  The kernels here run the same checks
(union-find components, crossing clusters, the default sub-cube family)
in one pass per scale.  They are cross-validated against
``geometry.is_well_connected`` / ``geometry.is_good`` in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy import ndimage

from .env import Environment
from .geometry import CheckDensity, _subcube_family

__all__ = ["GoodnessMap", "compute_goodness_map", "wc_grid"]


@njit(cache=True, inline="always")
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True, inline="always")
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    if ra < rb:
        parent[rb] = ra
    else:
        parent[ra] = rb


@njit(cache=True)
def _local_strides(s, d):
    lstr = np.empty(d, dtype=np.int64)
    acc = 1
    for k in range(d - 1, -1, -1):
        lstr[k] = acc
        acc *= s
    return lstr


@njit(cache=True)
def _label_box(open_flat, gstr, g0, s, d, lstr, parent, lc):
    """Union-find labels of the open subgraph of the box with corner flat
    index g0 and side s; roots are minimal vertex ids."""
    n = s ** d
    for v in range(n):
        parent[v] = v
    for v in range(n):
        rem = v
        g = g0
        for k in range(d):
            lc[k] = rem // lstr[k]
            rem -= lc[k] * lstr[k]
            g += lc[k] * gstr[k]
        for k in range(d):
            if lc[k] + 1 < s and open_flat[g, k]:
                _union(parent, v, v + lstr[k])
    return n


@njit(cache=True)
def _crossing_root(parent, s, d, lstr, lc, mask, cnt):
    """Root of the largest component touching all 2d faces, or -1.

    Ties break to the smallest root id, which is the lexicographically
    smallest contained vertex.
    """
    n = s ** d
    full = (1 << (2 * d)) - 1
    for v in range(n):
        mask[v] = 0
        cnt[v] = 0
    for v in range(n):
        r = _find(parent, v)
        cnt[r] += 1
        rem = v
        for k in range(d):
            lc[k] = rem // lstr[k]
            rem -= lc[k] * lstr[k]
        for k in range(d):
            if lc[k] == 0:
                mask[r] |= 1 << (2 * k)
            if lc[k] == s - 1:
                mask[r] |= 1 << (2 * k + 1)
    best = -1
    best_cnt = 0
    for v in range(n):
        if parent[v] == v and mask[v] == full and cnt[v] > best_cnt:
            best = v
            best_cnt = cnt[v]
    return best


@njit(cache=True)
def _subcube_clauses(open_flat, gstr, g0_parent, s, d, lstr_parent, in_cross,
                     sizes, spacing, tq_lo, tq_hi, thresh, min_cross,
                     parent2, lc, anchor, mask2, mn, mx, touch):
    """Gated clause (i)+(ii) over the default sub-cube family of one parent.

    ``in_cross`` flags parent-local vertices of the crossing cluster;
    ``tq_lo``/``tq_hi`` bound (3/4)cube in parent-local coordinates.
    Clause (i) applies to sub-cubes of size >= min_cross, clause (ii) to
    size >= 3.  Returns True when every tested sub-cube passes.
    """
    for si in range(len(sizes)):
        ell = sizes[si]
        check_cross = ell >= min_cross
        check_absorb = ell >= 3
        if not (check_cross or check_absorb):
            continue
        lstr2 = _local_strides(ell, d)
        n2 = ell ** d
        n_anchor = ((s - ell) // spacing) + 1
        total = n_anchor ** d
        for ai in range(total):
            rem = ai
            overlap = True
            for k in range(d):
                q = rem // (n_anchor ** (d - 1 - k))
                rem -= q * (n_anchor ** (d - 1 - k))
                anchor[k] = q * spacing
                if anchor[k] + ell - 1 < tq_lo[k] or anchor[k] > tq_hi[k]:
                    overlap = False
            if not overlap:
                continue
            g0 = g0_parent
            for k in range(d):
                g0 += anchor[k] * gstr[k]
            _label_box(open_flat, gstr, g0, ell, d, lstr2, parent2, lc)
            # per-root face masks, extents and crossing-cluster contact
            for v in range(n2):
                mask2[v] = 0
                touch[v] = False
                for k in range(d):
                    mn[v, k] = ell
                    mx[v, k] = -1
            for v in range(n2):
                r = _find(parent2, v)
                rem2 = v
                pv = 0
                for k in range(d):
                    lc[k] = rem2 // lstr2[k]
                    rem2 -= lc[k] * lstr2[k]
                    if lc[k] == 0:
                        mask2[r] |= 1 << (2 * k)
                    if lc[k] == ell - 1:
                        mask2[r] |= 1 << (2 * k + 1)
                    if lc[k] < mn[r, k]:
                        mn[r, k] = lc[k]
                    if lc[k] > mx[r, k]:
                        mx[r, k] = lc[k]
                    pv += (anchor[k] + lc[k]) * lstr_parent[k]
                if in_cross[pv]:
                    touch[r] = True
            # clause (i): each axis pair of opposite faces joined by some
            # component (components may differ between axes)
            crossed_axes = 0
            for v in range(n2):
                if parent2[v] != v:
                    continue
                for k in range(d):
                    if (mask2[v] >> (2 * k)) & 1 and (mask2[v] >> (2 * k + 1)) & 1:
                        crossed_axes |= 1 << k
                ext = 0
                for k in range(d):
                    if mx[v, k] - mn[v, k] > ext:
                        ext = mx[v, k] - mn[v, k]
                if check_absorb and ext >= thresh and not touch[v]:
                    return False  # clause (ii)
            if check_cross and crossed_axes != (1 << d) - 1:
                return False  # clause (i)
    return True


@njit(cache=True)
def _wc_scale(open_flat, L, d, s, corners, sizes, spacing, tq_lo_rel, tq_hi_rel, thresh, min_cross):
    """Well-connectedness flags for all cubes of side s whose lo-corner grid
    flat indices are ``corners``."""
    gstr = _local_strides(L, d)
    lstr = _local_strides(s, d)
    n = s ** d
    nmax = n
    parent = np.empty(nmax, dtype=np.int64)
    lc = np.empty(d, dtype=np.int64)
    mask = np.empty(nmax, dtype=np.int64)
    cnt = np.empty(nmax, dtype=np.int64)
    in_cross = np.empty(nmax, dtype=np.bool_)
    ell_max = 1
    for si in range(len(sizes)):
        if sizes[si] > ell_max:
            ell_max = sizes[si]
    n2max = ell_max ** d
    parent2 = np.empty(n2max, dtype=np.int64)
    anchor = np.empty(d, dtype=np.int64)
    mask2 = np.empty(n2max, dtype=np.int64)
    mn = np.empty((n2max, d), dtype=np.int64)
    mx = np.empty((n2max, d), dtype=np.int64)
    touch = np.empty(n2max, dtype=np.bool_)

    out = np.empty(len(corners), dtype=np.bool_)
    for ci in range(len(corners)):
        g0 = corners[ci]
        _label_box(open_flat, gstr, g0, s, d, lstr, parent, lc)
        root = _crossing_root(parent, s, d, lstr, lc, mask, cnt)
        if root < 0:
            out[ci] = False
            continue
        for v in range(n):
            in_cross[v] = _find(parent, v) == root
        out[ci] = _subcube_clauses(open_flat, gstr, g0, s, d, lstr, in_cross,
                                   sizes, spacing, tq_lo_rel, tq_hi_rel, thresh, min_cross,
                                   parent2, lc, anchor, mask2, mn, mx, touch)
    return out


@njit(cache=True)
def _cell_cross_and_reps(open_flat, L, d, corners, sides, centers, cross_out):
    """Crossing-cluster membership mask and representative per cell.

    For each cell (lo-corner flat index, side, center grid coords): marks the
    crossing cluster in ``cross_out`` (flat over the box) and returns the
    representative: the crossing-cluster vertex minimizing Manhattan distance
    to the center, ties to the lexicographically smallest vertex.  A cell
    without a crossing cluster gets representative flat index -1.
    """
    gstr = _local_strides(L, d)
    smax = 0
    for i in range(len(sides)):
        if sides[i] > smax:
            smax = sides[i]
    nmax = smax ** d
    parent = np.empty(nmax, dtype=np.int64)
    lc = np.empty(d, dtype=np.int64)
    mask = np.empty(nmax, dtype=np.int64)
    cnt = np.empty(nmax, dtype=np.int64)
    reps = np.full(len(corners), -1, dtype=np.int64)
    for ci in range(len(corners)):
        s = sides[ci]
        n = s ** d
        lstr = _local_strides(s, d)
        g0 = corners[ci]
        _label_box(open_flat, gstr, g0, s, d, lstr, parent, lc)
        root = _crossing_root(parent, s, d, lstr, lc, mask, cnt)
        if root < 0:
            continue
        best = -1
        best_dist = 1 << 60
        for v in range(n):
            if _find(parent, v) != root:
                continue
            rem = v
            g = g0
            dist = 0
            for k in range(d):
                lc[k] = rem // lstr[k]
                rem -= lc[k] * lstr[k]
                g += lc[k] * gstr[k]
                delta = g0 // gstr[k] % L + lc[k] - centers[ci, k]
                if delta < 0:
                    delta = -delta
                dist += delta
            cross_out[g] = True
            if dist < best_dist:  # ascending v = lexicographic tie-break
                best_dist = dist
                best = g
        reps[ci] = best
    return reps


def wc_grid(env: Environment, n: int, density: CheckDensity = CheckDensity()) -> np.ndarray:
    """Well-connectedness of every scale-n triadic cube of the box, as a
    boolean grid of shape (3^(M-n),)*d (C-order over cube positions)."""
    spec = env.spec
    L, d = spec.side, spec.d
    m = 3 ** (spec.M - n)
    s = 3 ** n
    if n == 0:
        return np.ones((m,) * d, dtype=bool)
    open_flat = np.ascontiguousarray(env.open_.reshape(-1, d))
    gstr = np.array([L ** (d - 1 - k) for k in range(d)], dtype=np.int64)
    pos = np.stack(np.meshgrid(*([np.arange(m) * s] * d), indexing="ij"), axis=-1).reshape(-1, d)
    corners = (pos @ gstr).astype(np.int64)
    if density.exhaustive:
        raise ValueError("the batched path implements the default density only")
    sizes, spacing = _subcube_family(s, density)
    sizes = np.array([x for x in sizes if density.cross_applies(x) or density.absorb_applies(x)],
                     dtype=np.int64)
    # (3/4)cube in parent-local coordinates: half-width 0.375*s about center
    hw = 0.375 * s
    c = (s - 1) // 2
    tq_lo = np.full(d, c - int(math.floor(hw)), dtype=np.int64)
    tq_hi = np.full(d, c + int(math.floor(hw)), dtype=np.int64)
    flags = _wc_scale(open_flat, L, d, s, corners, sizes,
                      np.int64(spacing), tq_lo, tq_hi, max(s / 10.0, 2.0),
                      np.int64(density.min_cross_size))
    return flags.reshape((m,) * d)


class GoodnessMap:
    """Per-scale well-connectedness and goodness grids of a box.

    ``wc[n]`` and ``good[n]`` are boolean arrays over the scale-n cube grid;
    ``good[n]`` requires the cube and all its successors well-connected.
    """

    def __init__(self, env: Environment, density: CheckDensity = CheckDensity()):
        self.env = env
        self.density = density
        self.wc = {}
        self.good = {}
        M, d = env.spec.M, env.spec.d
        for n in range(0, M + 1):
            self.wc[n] = wc_grid(env, n, density)
        for n in range(1, M + 1):
            fine = self.wc[n - 1]
            m = 3 ** (M - n)
            shape = sum(([m, 3] for _ in range(d)), [])
            blocks = fine.reshape(shape)
            axes = tuple(2 * k + 1 for k in range(d))
            self.good[n] = self.wc[n] & blocks.all(axis=axes)

    def good_with_neighbors(self, n: int) -> np.ndarray:
        """True where the cube and every in-box cube within one cube step of
        it (l-infinity distance <= 3^n) are good."""
        g = self.good[n].astype(np.uint8)
        return ndimage.minimum_filter(g, size=3, mode="constant", cval=1).astype(bool)

    def is_good_cube(self, n: int, grid_pos) -> bool:
        return bool(self.good[n][tuple(grid_pos)])


def compute_goodness_map(env: Environment, density: CheckDensity = CheckDensity()) -> GoodnessMap:
    return GoodnessMap(env, density)
