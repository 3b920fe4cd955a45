import numpy as np
import pytest

from percolab.env import Environment, EnvironmentSpec, generate


def open_env(M: int, d: int = 2, lam: float = 0.5) -> Environment:
    """Fully open constant-one environment on the box of scale M."""
    spec = EnvironmentSpec(d=d, M=M, p=1.0, lam=lam, law="constant-one", seed=0)
    return generate(spec)


def close_bonds(env: Environment, bonds) -> Environment:
    """Copy of env with the listed (vertex, axis) bonds closed."""
    cond = env.cond.copy()
    for x, axis in bonds:
        cond[env.to_grid(x) + (axis,)] = 0.0
    return Environment(env.spec, cond, check=False)


def close_all(env: Environment) -> Environment:
    return Environment(env.spec, np.zeros_like(env.cond), check=False)


def bfs_reachable(env: Environment, start, region_pts) -> set:
    """Independent reachability oracle: plain BFS over open bonds within a
    region given as a set of coordinate tuples."""
    region = {tuple(p) for p in region_pts}
    seen = {tuple(start)}
    queue = [tuple(start)]
    d = env.spec.d
    while queue:
        x = queue.pop()
        for k in range(d):
            for sgn in (+1, -1):
                y = tuple(x[j] + (sgn if j == k else 0) for j in range(d))
                if y in seen or y not in region:
                    continue
                a, b = (x, y) if x <= y else (y, x)
                try:
                    val = env.cond[env.to_grid(a) + (k,)]
                except Exception:
                    continue
                if val > 0:
                    seen.add(y)
                    queue.append(y)
    return seen


def bfs_clusters(env: Environment, region_pts):
    """All components of the open subgraph on the region, via the BFS oracle."""
    remaining = {tuple(p) for p in region_pts}
    comps = []
    while remaining:
        start = min(remaining)
        comp = bfs_reachable(env, start, remaining)
        comps.append(comp)
        remaining -= comp
    return comps


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
