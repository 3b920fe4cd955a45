"""Norms, Gaussian spatial averages, the multiscale functional, moment
calibration and resampling sensitivity.

The Gaussian kernel follows the unnormalized convention
Phi_r(x) = r^{-d} exp(-|x|^2 / r^2) with the Euclidean norm, whose total
mass is pi^(d/2) (tests pin this).  Balls B_R used to restrict lattice and
grid sums are l-infinity balls.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .env import Environment, resample_edge
from .geometry import TriadicCube, dilated_bounds
from .rng import nested_seed
from .solver import vertex_magnitude

__all__ = [
    "osc",
    "lq_centered",
    "GridField",
    "gaussian_average",
    "multiscale_lhs",
    "multiscale_rhs",
    "meyers_ratio",
    "caccioppoli_ratio",
    "MomentEstimate",
    "estimate_Os",
    "tail_exponent",
    "resampling_sensitivity",
    "EstimationError",
]


class EstimationError(ValueError):
    pass


def osc(values) -> float:
    """sup - inf over the given values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("oscillation of an empty set")
    return float(values.max() - values.min())


def lq_centered(values, q: float, R: float = None, d: int = None) -> float:
    """Centered L^q norm; with R and d given, uses the R^{-d} sum
    normalization instead of the empirical mean."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("norm of an empty set")
    centered = np.abs(values - values.mean()) ** q
    if R is not None:
        if d is None:
            raise ValueError("R normalization needs the dimension d")
        return float((centered.sum() / R ** d) ** (1.0 / q))
    return float(centered.mean() ** (1.0 / q))


# ---------------------------------------------------------------------------
# grid fields and Gaussian averages
# ---------------------------------------------------------------------------


@dataclass
class GridField:
    """Samples on a regular grid: value[i1,...,id] sits at
    origin + (i1,...,id) * h.  Vector fields carry a trailing axis d."""

    origin: np.ndarray
    h: float
    values: np.ndarray

    @property
    def d(self) -> int:
        return len(self.origin)

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == self.d + 1

    def axis_coords(self, k: int) -> np.ndarray:
        n = self.values.shape[k]
        return self.origin[k] + np.arange(n) * self.h

    @staticmethod
    def regular(d: int, radius: float, h: float, n_components: int = 0) -> "GridField":
        n = int(np.floor(2 * radius / h)) + 1
        origin = np.full(d, -(n - 1) / 2.0 * h)
        shape = (n,) * d + ((n_components,) if n_components else ())
        return GridField(origin=origin, h=h, values=np.zeros(shape))


def gaussian_average(F: GridField, r: float, x0=None):
    """sum over grid points of Phi_r(x - x0) F(x) h^d, truncated at
    Euclidean distance 6r; raises when the truncation ball escapes the grid.
    """
    d = F.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    if r < F.h:
        raise ValueError(f"kernel scale r={r} below grid resolution h={F.h}")
    for k in range(d):
        coords = F.axis_coords(k)
        if x0[k] - 6 * r < coords[0] - 1e-9 or x0[k] + 6 * r > coords[-1] + 1e-9:
            raise ValueError(f"truncation ball of radius 6r={6*r} escapes the grid on axis {k}")
    windows = []
    for k in range(d):
        coords = F.axis_coords(k)
        sel = np.nonzero(np.abs(coords - x0[k]) <= 6 * r)[0]
        windows.append((sel[0], sel[-1] + 1))
    sl = tuple(slice(a, b) for a, b in windows)
    sq = np.zeros([b - a for a, b in windows])
    for k in range(d):
        coords = F.axis_coords(k)[windows[k][0]:windows[k][1]] - x0[k]
        shape = [1] * d
        shape[k] = len(coords)
        sq = sq + (coords ** 2).reshape(shape)
    w = np.where(sq <= (6 * r) ** 2, np.exp(-sq / r ** 2) / r ** d, 0.0)
    vals = F.values[sl]
    if F.is_vector:
        return np.tensordot(w, vals, axes=d) * F.h ** d
    return float((w * vals).sum() * F.h ** d)


# ---------------------------------------------------------------------------
# multiscale functional
# ---------------------------------------------------------------------------


def _gauss_convolve(field: np.ndarray, h: float, r: float, d: int) -> np.ndarray:
    """Separable convolution with Phi_r (Riemann sum with measure h^d),
    truncated at 6r per axis, zero beyond the grid."""
    half = int(np.floor(6 * r / h))
    t = np.arange(-half, half + 1) * h
    w = np.exp(-t ** 2 / r ** 2) * (h / r)
    out = field
    for k in range(d):
        out = ndimage.correlate1d(out, w, axis=k, mode="constant", cval=0.0)
    return out


def multiscale_lhs(u: GridField, R: float, q: float, center=None) -> float:
    """|| u - (u)_{B_R} ||_{L^q normalized} over grid points of the
    l-infinity ball B_R."""
    d = u.d
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    sel = []
    for k in range(d):
        coords = u.axis_coords(k)
        idx = np.nonzero(np.abs(coords - center[k]) <= R + 1e-9)[0]
        if idx.size == 0:
            raise ValueError("ball B_R contains no grid points")
        sel.append(slice(idx[0], idx[-1] + 1))
    vals = u.values[tuple(sel)]
    return float((np.abs(vals - vals.mean()) ** q).mean() ** (1.0 / q))


def multiscale_rhs(u: GridField, R: float, q: float, center=None, n_r: int = 32) -> float:
    """The heat-kernel multiscale functional: spatial quadrature of
    ( int_0^{2R} r |Phi_r * grad u(x)|^2 dr )^{q/2} against the weight
    R^{-d} exp(-|x|/(2R)) truncated at |x| <= 12R, all to the power 1/q.

    The r-integral uses trapezoid quadrature in log r on [h, 2R] plus the
    constant extrapolation of the integrand below the grid resolution.
    """
    d = u.d
    h = u.h
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    for k in range(d):
        coords = u.axis_coords(k)
        if center[k] - 12 * R < coords[0] - 1e-9 or center[k] + 12 * R > coords[-1] + 1e-9:
            raise ValueError("grid too small for the 12R truncation; shrink R")
    grads = np.gradient(u.values, h)
    grads = [grads] if d == 1 else grads
    rs = np.exp(np.linspace(np.log(h), np.log(2 * R), n_r))
    sq_norm = []
    for r in rs:
        acc = np.zeros_like(u.values)
        for k in range(d):
            acc += _gauss_convolve(grads[k], h, r, d) ** 2
        sq_norm.append(acc)
    # trapezoid in log r of r^2 |F_r|^2, plus the small-r cap (h^2 / 2) |F_h|^2
    logr = np.log(rs)
    integrand = np.stack([r ** 2 * s for r, s in zip(rs, sq_norm)])
    inner = np.trapezoid(integrand, x=logr, axis=0) + 0.5 * h ** 2 * sq_norm[0]
    dist = np.zeros_like(u.values)
    for k in range(d):
        coords = u.axis_coords(k) - center[k]
        shape = [1] * d
        shape[k] = len(coords)
        dist = dist + (coords ** 2).reshape(shape)
    dist = np.sqrt(dist)
    weight = np.where(dist <= 12 * R, np.exp(-dist / (2 * R)) / R ** d, 0.0)
    val = float((weight * inner ** (q / 2.0)).sum() * h ** d)
    return val ** (1.0 / q)


# ---------------------------------------------------------------------------
# Meyers and Caccioppoli ratio checks
# ---------------------------------------------------------------------------


def _in_range_mask(vertices: np.ndarray, lo, hi) -> np.ndarray:
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    return np.all((vertices >= lo) & (vertices <= hi), axis=1)


def meyers_ratio(env: Environment, cube: TriadicCube, graph, v: np.ndarray,
                 xi: np.ndarray, eps_list) -> dict:
    """Reverse-Holder ratio per epsilon: the normalized L^{2+eps} norm of
    grad v over the cube against the L^2 norm of grad v plus the L^{2+eps}
    norm of xi over the (4/3)-dilated cube (center-preserving dilation).

    ``v`` solves the divergence problem for ``xi`` on the cluster carried
    by ``graph`` (the maximal cluster of (4/3)cube).
    """
    from .solver import gradient

    if graph.n_vertices == 0:
        raise ValueError("empty cluster")
    mag_v = vertex_magnitude(graph, gradient(graph, v))
    mag_xi = vertex_magnitude(graph, xi)
    lo43, hi43 = dilated_bounds(cube, 4.0 / 3.0)
    in_cube = _in_range_mask(graph.vertices, cube.lo, cube.hi)
    in_43 = _in_range_mask(graph.vertices, lo43, hi43)
    vol_cube = float(cube.volume)
    vol_43 = float(np.prod(np.asarray(hi43) - np.asarray(lo43) + 1))
    out = {}
    for eps in eps_list:
        pw = 2.0 + eps
        lhs = (np.sum(mag_v[in_cube] ** pw) / vol_cube) ** (1.0 / pw)
        rhs = (np.sum(mag_v[in_43] ** 2) / vol_43) ** 0.5 \
            + (np.sum(mag_xi[in_43] ** pw) / vol_43) ** (1.0 / pw)
        out[float(eps)] = 0.0 if rhs == 0 else float(lhs / rhs)
    return out


def caccioppoli_ratio(graph, u: np.ndarray, xi: np.ndarray,
                      v_lo, v_hi, u_lo, u_hi, r: float) -> float:
    """LHS / RHS of the energy inequality for -div a grad u = -div xi:
    sum over the inner region of |grad u|^2 against (1/r^2) sum of u^2 over
    the annulus plus the sum of |xi|^2 over the outer region."""
    from .solver import gradient

    mag_u = vertex_magnitude(graph, gradient(graph, u))
    mag_xi = vertex_magnitude(graph, xi)
    in_v = _in_range_mask(graph.vertices, v_lo, v_hi)
    in_u = _in_range_mask(graph.vertices, u_lo, u_hi)
    annulus = in_u & ~in_v
    lhs = float(np.sum(mag_u[in_v] ** 2))
    rhs = float(np.sum(np.asarray(u)[annulus] ** 2) / r ** 2 + np.sum(mag_xi[in_u] ** 2))
    if rhs == 0:
        return 0.0 if lhs == 0 else np.inf
    return lhs / rhs


# ---------------------------------------------------------------------------
# stretched-exponential moment calibration
# ---------------------------------------------------------------------------


@dataclass
class MomentEstimate:
    """Calibration of E[exp((X/theta)^s)] <= 2 from samples."""

    s: float
    theta: float
    n_samples: int
    achieved: float

    def __post_init__(self):
        if self.theta > 0 and not self.achieved <= 2.0 + 1e-6:
            raise ValueError(f"achieved moment {self.achieved} exceeds 2")


def _exp_moment(x: np.ndarray, theta: float, s: float) -> float:
    z = (x / theta) ** s
    with np.errstate(over="ignore"):
        return float(np.mean(np.exp(np.minimum(z, 700.0))))


def estimate_Os(samples, s: float, rel_tol: float = 1e-6) -> MomentEstimate:
    """Minimal theta with empirical E[exp((X/theta)^s)] <= 2, by bisection.

    Samples must be nonnegative with at least 30 entries; an all-zero
    sample reports theta = 0.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 30:
        raise EstimationError(f"need at least 30 samples, got {x.size}")
    if np.any(x < 0):
        raise EstimationError("samples must be nonnegative")
    top = float(x.max())
    if top == 0.0:
        return MomentEstimate(s=s, theta=0.0, n_samples=x.size, achieved=1.0)
    lo, hi = top / 50.0, top * 50.0
    while _exp_moment(x, hi, s) > 2.0:
        hi *= 4.0
        if hi > top * 1e9:
            raise EstimationError("no finite theta reaches the moment bound")
    if _exp_moment(x, lo, s) <= 2.0:
        hi = lo
    else:
        while (hi - lo) > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if _exp_moment(x, mid, s) <= 2.0:
                hi = mid
            else:
                lo = mid
    return MomentEstimate(s=s, theta=float(hi), n_samples=x.size,
                          achieved=_exp_moment(x, hi, s))


def tail_exponent(samples) -> float:
    """Stretched-exponential tail exponent: least-squares slope of
    log(-log P[X > t]) against log t over the upper quartile."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 100:
        raise EstimationError(f"need at least 100 samples, got {n}")
    exceed = (n - 1 - np.arange(n)) / n
    q75 = x[int(0.75 * n)]
    sel = (x >= q75) & (exceed > 0) & (x > 0)
    if sel.sum() < 5 or x[sel].max() <= x[sel].min():
        raise EstimationError("degenerate tail; exponent undefined")
    t = np.log(x[sel])
    y = np.log(-np.log(exceed[sel]))
    slope = np.polyfit(t, y, 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# Efron-Stein resampling sensitivity
# ---------------------------------------------------------------------------


def resampling_sensitivity(env: Environment, functional, edges, K: int,
                           seed: int = 0, strict: bool = False,
                           return_contributions: bool = False):
    """sum over the edge set of (X(env) - mean_k X(resample(env, e, k)))^2,
    the vertical-derivative estimate with the conditional expectation
    approximated by K independent redraws per edge."""
    if K < 8:
        msg = f"K={K} resamples give a noisy conditional-expectation estimate"
        if strict:
            raise EstimationError(msg)
        warnings.warn(msg)
    base = functional(env)
    contribs = []
    for i, e in enumerate(edges):
        vals = [functional(resample_edge(env, e, nested_seed(seed, i, k)))
                for k in range(K)]
        contribs.append((base - float(np.mean(vals))) ** 2)
    total = float(np.sum(contribs))
    if return_contributions:
        return total, np.asarray(contribs)
    return total
