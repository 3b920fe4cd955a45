"""The validation suite: structural invariants and inequality checks.

Each check returns a dict with a ``passed`` flag and the measured
quantities; ``full_suite`` aggregates them.  Structural identities are
exact (tolerance-level); inequality checks report fitted constants and
pass when those are finite and stable.
"""

from __future__ import annotations

import numpy as np

from .analysis import (
    GridField,
    estimate_Os,
    gaussian_average,
    caccioppoli_ratio,
    meyers_ratio,
    multiscale_lhs,
    multiscale_rhs,
)
from .env import EdgeRef, EnvironmentSpec, generate, resample_edge
from .geometry import TriadicCube, dilated_bounds, maximal_cluster
from .partition import (
    MollifierSpec,
    PartitionError,
    build_partition,
    coarsen,
    coarsening_ratio,
    gradient_coarsening_ratio,
    mollify,
    partition_resample_stability,
)
from .rng import nested_seed, sample_seed
from .solver import (
    a_gradient,
    corrector,
    edge_value,
    gradient,
    greens_gradient,
    laplacian,
    solve_dirichlet,
    solve_divergence_rhs,
)


def _spec(cfg, seed, **kw):
    base = dict(d=cfg.d, M=cfg.M, p=cfg.p, lam=cfg.lam, law=cfg.law, seed=seed)
    base.update(kw)
    return EnvironmentSpec(**base)


def check_partition_invariants(cfg, n=None):
    """build_partition runs its exact invariant verification internally;
    count clean builds and surfaced violations."""
    n = n or min(cfg.n_samples, 20)
    violations, built = 0, 0
    for i in range(n):
        try:
            build_partition(generate(_spec(cfg, sample_seed(cfg.base_seed, i))))
            built += 1
        except PartitionError:
            violations += 1
    return {"passed": violations == 0, "built": built, "violations": violations}


def check_partition_negative_control(cfg):
    """A corrupted partition must fail the invariant checker loudly."""
    from .goodness_fast import GoodnessMap
    from .partition import _verify

    env = generate(_spec(cfg, sample_seed(cfg.base_seed, 0xBAD), p=0.95))
    gm = GoodnessMap(env)
    P = build_partition(env, goodness=gm)
    if P.n_cells < 2:
        return {"passed": True, "skipped": "degenerate partition"}
    scales = P.scales.copy()
    scales[0] = 0  # below minimal scale: must be rejected
    try:
        _verify(gm, scales, P.centers, P.cell_index)
        return {"passed": False, "error": "corrupted partition accepted"}
    except PartitionError:
        return {"passed": True}


def check_green_symmetry(cfg, n_pairs=20, tol=1e-8):
    rng = np.random.default_rng(cfg.base_seed)
    worst = 0.0
    for i in range(n_pairs):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 7000 + i), M=min(cfg.M, 3)))
        g = maximal_cluster(env, TriadicCube(min(cfg.M, 3), (0,) * cfg.d))
        if g.n_edges < 2:
            continue
        i1, i2 = rng.choice(g.n_edges, size=2, replace=False)
        e1 = EdgeRef.of(g.vertices[g.edges[i1, 0]], g.vertices[g.edges[i1, 1]])
        e2 = EdgeRef.of(g.vertices[g.edges[i2, 0]], g.vertices[g.edges[i2, 1]])
        v12 = edge_value(g, greens_gradient(g, e1), e2)
        v21 = edge_value(g, greens_gradient(g, e2), e1)
        worst = max(worst, abs(v12 - v21) / max(1.0, abs(v12)))
    return {"passed": worst <= tol, "max_relative_asymmetry": worst}


def check_representation_formula(cfg, n_clusters=3, tol=1e-6):
    worst = 0.0
    done = 0
    i = 0
    while done < n_clusters and i < 50:
        i += 1
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 8000 + i), M=1, p=0.9))
        g = maximal_cluster(env, TriadicCube(1, (0,) * cfg.d))
        if g.n_vertices < 4 or g.n_vertices > 300:
            continue
        rng = np.random.default_rng(i)
        xi = rng.normal(size=g.n_edges)
        w, _ = solve_divergence_rhs(g, xi)
        acc = np.zeros(g.n_edges)
        for j in range(g.n_edges):
            e = EdgeRef.of(g.vertices[g.edges[j, 0]], g.vertices[g.edges[j, 1]])
            acc += xi[j] * greens_gradient(g, e)
        worst = max(worst, float(np.abs(gradient(g, w) - acc).max()))
        done += 1
    return {"passed": worst <= tol, "max_edge_error": worst, "clusters": done}


def check_trivial_correctors(cfg, tol=1e-8):
    spec = EnvironmentSpec(d=cfg.d, M=min(cfg.M, 3), p=1.0, lam=cfg.lam,
                           law="constant-one", seed=0)
    env = generate(spec)
    box = TriadicCube(spec.M, (0,) * cfg.d)
    chi, g, _ = corrector(env, box, cfg.direction, tol=1e-10)
    sup = float(np.abs(chi).max())
    # linearity on a seeded random environment
    env2 = generate(_spec(cfg, sample_seed(cfg.base_seed, 31), M=min(cfg.M, 3)))
    g2 = maximal_cluster(env2, box)
    p = np.eye(cfg.d)[0]
    q = np.eye(cfg.d)[min(1, cfg.d - 1)]
    tol_lin = 1e-10
    cp, _, _ = corrector(env2, box, p, tol_lin, graph=g2)
    cq, _, _ = corrector(env2, box, q, tol_lin, graph=g2)
    cpq, _, _ = corrector(env2, box, p + q, tol_lin, graph=g2)
    lin = float(np.abs(cpq - cp - cq).max())
    lin_ok = lin <= 10 * tol_lin * g2.n_vertices
    return {"passed": sup <= tol and lin_ok, "sup_trivial": sup, "linearity_defect": lin}


def check_solver_oracle(cfg, tol=1e-8):
    worst = 0.0
    rng = np.random.default_rng(cfg.base_seed)
    checked = 0
    for i in range(40):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 9000 + i), M=1, p=0.8))
        g = maximal_cluster(env, TriadicCube(1, (0,) * cfg.d))
        if g.n_vertices < 3 or g.n_vertices > 100:
            continue
        shell = np.array([0, g.n_vertices - 1])
        vals = rng.normal(size=2)
        rhs = rng.normal(size=g.n_vertices)
        u, _ = solve_dirichlet(g, shell, vals, rhs)
        L = laplacian(g).toarray()
        probe = np.zeros(g.n_vertices)
        probe[shell] = vals
        mask = np.ones(g.n_vertices, dtype=bool)
        mask[shell] = False
        I = np.nonzero(mask)[0]
        probe[I] = np.linalg.solve(L[np.ix_(I, I)], rhs[I] - L[np.ix_(I, shell)] @ vals)
        worst = max(worst, float(np.abs(u - probe).max()))
        checked += 1
        if checked >= 10:
            break
    return {"passed": worst <= tol, "max_error": worst, "graphs": checked}


def check_coarsening_inequalities(cfg, n=4):
    """Finite fitted constants for the coarsening and coarse-gradient
    ratio bounds."""
    worst_a, worst_b = 0.0, 0.0
    for i in range(n):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 1100 + i), p=max(cfg.p, 0.9)))
        P = build_partition(env)
        box = TriadicCube(cfg.M, (0,) * cfg.d)
        g = maximal_cluster(env, box)
        chi, _, _ = corrector(env, box, cfg.direction, tol=cfg.tol, graph=g)
        w = chi + g.vertices @ np.asarray(cfg.direction)
        worst_a = max(worst_a, coarsening_ratio(env, P, g, w, 2.0))
        worst_b = max(worst_b, gradient_coarsening_ratio(env, P, g, w, 2.0))
    finite = np.isfinite(worst_a) and np.isfinite(worst_b)
    return {"passed": bool(finite), "coarsening_C": worst_a, "gradient_C": worst_b}


def check_caccioppoli(cfg, n=5):
    ratios = []
    for i in range(n):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 1200 + i)))
        g = maximal_cluster(env, TriadicCube(cfg.M, (0,) * cfg.d))
        rng = np.random.default_rng(i)
        xi = rng.normal(size=g.n_edges)
        u, _ = solve_divergence_rhs(g, xi)
        h = (3 ** cfg.M - 1) // 2
        r = max(h // 3, 1)
        v_lo, v_hi = (-h + 2 * r,) * cfg.d, (h - 2 * r,) * cfg.d
        u_lo, u_hi = (-h + r,) * cfg.d, (h - r,) * cfg.d
        ratios.append(caccioppoli_ratio(g, u, xi, v_lo, v_hi, u_lo, u_hi, r=r))
    c = float(np.max(ratios))
    return {"passed": bool(np.isfinite(c)), "fitted_C": c}


def check_meyers(cfg, n=4, eps_list=(0.125, 0.25, 0.5, 1.0)):
    per_eps = {e: [] for e in eps_list}
    for i in range(n):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 1300 + i)))
        cube = TriadicCube(max(cfg.M - 1, 1), (0,) * cfg.d)
        lo, hi = dilated_bounds(cube, 4 / 3)
        pts = np.stack(np.meshgrid(*[np.arange(l, u + 1) for l, u in zip(lo, hi)],
                                   indexing="ij"), axis=-1).reshape(-1, cfg.d)
        g = maximal_cluster(env, pts)
        rng = np.random.default_rng(i)
        xi = rng.normal(size=g.n_edges)
        v, _ = solve_divergence_rhs(g, xi)
        for e, r in meyers_ratio(env, cube, g, v, xi, eps_list).items():
            per_eps[e].append(r)
    maxima = {str(e): float(np.max(v)) for e, v in per_eps.items()}
    bounded = [e for e in eps_list if maxima[str(e)] < 50]
    return {"passed": len(bounded) > 0, "max_ratio_per_eps": maxima,
            "empirical_meyers_eps": max(bounded) if bounded else 0.0}


def check_multiscale(cfg, n_funcs=5, radii=(8, 16)):
    rng = np.random.default_rng(cfg.base_seed)
    worst = 0.0
    radius = 12 * max(radii)
    n = int(2 * radius) + 1
    axes = np.arange(n) - radius
    X, Y = np.meshgrid(axes, axes, indexing="ij")
    for _ in range(n_funcs):
        ks = rng.uniform(0.1, 0.8, size=(3, 2))
        ph = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(0.5, 1.5, size=3)
        vals = sum(a * np.cos(k[0] * X + k[1] * Y + f) for a, k, f in zip(amp, ks, ph))
        F = GridField(origin=np.array([-radius, -radius], dtype=float), h=1.0, values=vals)
        ratios = [multiscale_lhs(F, R, 2) / multiscale_rhs(F, R, 2) for R in radii]
        worst = max(worst, max(ratios) / min(ratios))
    return {"passed": worst < 2.0, "max_ratio_spread": worst}


def check_resample_partition(cfg, n=5):
    ok = True
    ratios = []
    for i in range(n):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 1400 + i), p=max(cfg.p, 0.9)))
        e = EdgeRef((0,) * cfg.d, (1,) + (0,) * (cfg.d - 1))
        rep = partition_resample_stability(env, e, aux_seed=i, c0=4.0)
        ok = ok and rep["far_cells_equal"]
        ratios.append(rep["max_near_ratio"])
    return {"passed": ok, "max_near_ratio": float(np.max(ratios))}


def check_stationarity(cfg, n=24):
    """Two-sample moment comparison of coarse corrector gradients at an
    edge and its translate."""
    a_vals, b_vals = [], []
    box = TriadicCube(cfg.M, (0,) * cfg.d)
    shift = 3  # one minimal cell
    for i in range(n):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 1500 + i), p=max(cfg.p, 0.9)))
        P = build_partition(env)
        g = maximal_cluster(env, box)
        try:
            chi, _, _ = corrector(env, box, cfg.direction, tol=cfg.tol, graph=g)
            cf = coarsen(P, g, chi).grid()
        except Exception:
            continue
        h = (3 ** cfg.M - 1) // 2
        # the edge (1,0)-(2,0) crosses a minimal-cell boundary; intra-cell
        # edges carry zero coarse gradient by construction
        a_vals.append(cf[h + 2, h] - cf[h + 1, h])
        b_vals.append(cf[h + 2 + shift, h] - cf[h + 1 + shift, h])
    a_vals, b_vals = np.array(a_vals), np.array(b_vals)
    if len(a_vals) < 8:
        return {"passed": False, "error": "too few clean samples"}
    se = np.sqrt(a_vals.var() / len(a_vals) + b_vals.var() / len(b_vals))
    diff = abs(a_vals.mean() - b_vals.mean())
    return {"passed": bool(diff <= 4 * se + 1e-12), "mean_difference": float(diff),
            "pooled_se": float(se)}


def check_coarse_gradient_moments(cfg, n=30):
    """theta* calibration of |grad [chi_p]_P(e)| samples."""
    box = TriadicCube(cfg.M, (0,) * cfg.d)
    h = (3 ** cfg.M - 1) // 2
    samples = []
    for i in range(n):
        env = generate(_spec(cfg, sample_seed(cfg.base_seed, 1600 + i), p=max(cfg.p, 0.9)))
        P = build_partition(env)
        g = maximal_cluster(env, box)
        try:
            chi, _, _ = corrector(env, box, cfg.direction, tol=cfg.tol, graph=g)
            cf = coarsen(P, g, chi).grid()
        except Exception:
            continue
        samples.append(abs(cf[h + 2, h] - cf[h + 1, h]))  # cell-boundary edge
    if len(samples) < 30:
        return {"passed": False, "error": "too few clean samples"}
    est = estimate_Os(np.array(samples), s=1.0)
    return {"passed": bool(np.isfinite(est.theta)), "theta_star": est.theta}


def check_mollifier_consistency(cfg):
    """The fast decay weights agree with the two-stage mollify +
    gaussian_average route (dual-route consistency)."""
    from .experiments import decay_weights, spatial_average_fast

    env = generate(_spec(cfg, sample_seed(cfg.base_seed, 1700), p=0.95, M=4))
    P = build_partition(env)
    box = TriadicCube(env.spec.M, (0,) * cfg.d)
    g = maximal_cluster(env, box)
    chi, _, _ = corrector(env, box, cfg.direction, tol=1e-10, graph=g)
    cf = coarsen(P, g, chi)
    R = 4.0
    eta = MollifierSpec(h=cfg.mollifier_h)
    w, W = decay_weights(R, cfg.d, eta)
    fast = spatial_average_fast(cf.grid(), env.spec.half, w, W)
    # op route: sample grad [chi]^eta on a grid and average with Phi_R
    gh = 0.25
    radius = 6 * R + 0.5
    n = int(2 * radius / gh) + 1
    ax = np.linspace(-radius, radius, n)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    _, grads = mollify(cf, eta, pts)
    F = GridField(origin=np.array([-radius, -radius]), h=ax[1] - ax[0],
                  values=grads.reshape(n, n, 2))
    slow = gaussian_average(F, R)
    err = float(np.abs(fast - slow).max() / max(np.abs(slow).max(), 1e-12))
    return {"passed": err < 0.05, "relative_error": err,
            "fast": [float(v) for v in fast], "op_route": [float(v) for v in slow]}


def full_suite(cfg) -> dict:
    checks = {
        "partition_invariants": check_partition_invariants,
        "partition_negative_control": check_partition_negative_control,
        "green_symmetry": check_green_symmetry,
        "representation_formula": check_representation_formula,
        "trivial_correctors": check_trivial_correctors,
        "solver_oracle": check_solver_oracle,
        "coarsening_inequalities": check_coarsening_inequalities,
        "caccioppoli": check_caccioppoli,
        "meyers": check_meyers,
        "multiscale_poincare": check_multiscale,
        "resample_partition": check_resample_partition,
        "stationarity": check_stationarity,
        "coarse_gradient_moments": check_coarse_gradient_moments,
        "mollifier_consistency": check_mollifier_consistency,
    }
    out = {}
    for name, fn in checks.items():
        try:
            out[name] = fn(cfg)
        except Exception as exc:
            out[name] = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
    return out
