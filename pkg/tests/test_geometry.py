import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bfs_clusters, bfs_reachable, close_all, close_bonds, open_env
from percolab.env import EnvironmentSpec, generate
from percolab.geometry import (
    CheckDensity,
    TriadicCube,
    crossing_cluster,
    cube_of,
    dilated_bounds,
    is_crossable,
    is_good,
    is_well_connected,
    maximal_cluster,
    open_clusters,
    predecessor,
    successors,
)

EXH = CheckDensity(exhaustive=True)


# -- cube algebra -----------------------------------------------------------


def test_predecessor_of_unit_cube():
    assert predecessor(TriadicCube(1, (0, 0))) == TriadicCube(2, (0, 0))


def test_successors_of_unit_cube():
    got = {c.z for c in successors(TriadicCube(1, (0, 0)))}
    want = {(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)}
    assert got == want


def test_cube_of_examples():
    assert cube_of((4, 4), 2) == TriadicCube(2, (0, 0))
    assert cube_of((5, 4), 2) == TriadicCube(2, (9, 0))
    assert cube_of((-5, 0), 2) == TriadicCube(2, (-9, 0))


@given(
    x=st.tuples(st.integers(-400, 400), st.integers(-400, 400)),
    n=st.integers(0, 5),
)
@settings(max_examples=200, deadline=None)
def test_cube_of_contains_and_nesting(x, n):
    c = cube_of(x, n)
    assert c.contains(x)
    p = predecessor(c)
    assert p.contains_cube(c)
    assert cube_of(x, n + 1) == p
    if n >= 1:
        subs = successors(c)
        assert sum(1 for s in subs if s.contains(x)) == 1


def test_successors_tile_predecessor_exactly():
    c = TriadicCube(2, (9, -9))
    pts = c.points()
    tiles = [s.points() for s in successors(c)]
    stacked = np.concatenate(tiles)
    assert len(stacked) == len(pts)
    assert {tuple(p) for p in stacked} == {tuple(p) for p in pts}


def test_triadic_dichotomy_exhaustive_small_scales():
    cubes = []
    for n in range(0, 4):
        step = 3 ** n
        h = (27 - 1) // 2
        centers = range(-h + (step - 1) // 2, h + 1, step)
        cubes += [TriadicCube(n, (a, b)) for a in centers for b in centers]
    for i, a in enumerate(cubes):
        alo, ahi = np.array(a.lo), np.array(a.hi)
        for b in cubes[i + 1:]:
            blo, bhi = np.array(b.lo), np.array(b.hi)
            disjoint = np.any(ahi < blo) or np.any(bhi < alo)
            nested = (np.all(alo <= blo) and np.all(bhi <= ahi)) or (
                np.all(blo <= alo) and np.all(ahi <= bhi))
            assert disjoint or nested, (a, b)


def test_dilated_bounds():
    c = TriadicCube(2, (0, 0))  # size 9
    lo, hi = dilated_bounds(c, 0.75)  # half-width 3.375 -> +-3
    assert lo == [-3, -3] and hi == [3, 3]
    lo, hi = dilated_bounds(c, 4 / 3)  # half-width 6.0, open interval -> +-5
    assert lo == [-5, -5] and hi == [5, 5]


# -- clusters ---------------------------------------------------------------


def test_open_clusters_fully_open():
    env = open_env(2)
    comps = open_clusters(env, TriadicCube(2, (0, 0)))
    assert len(comps) == 1 and len(comps[0]) == 81


def test_open_clusters_fully_closed():
    env = close_all(open_env(2))
    comps = open_clusters(env, TriadicCube(2, (0, 0)))
    assert len(comps) == 81
    assert all(len(c) == 1 for c in comps)


def test_open_clusters_two_islands_vs_bfs_oracle():
    # wall the box into left and right halves at x = 0
    env = open_env(2)
    wall = [((0, y), 0) for y in range(-4, 5)]
    env = close_bonds(env, wall)
    cube = TriadicCube(2, (0, 0))
    comps = open_clusters(env, cube)
    oracle = bfs_clusters(env, cube.points())
    got = sorted({frozenset(map(tuple, c)) for c in comps}, key=lambda s: min(s))
    want = sorted({frozenset(c) for c in oracle}, key=lambda s: min(s))
    assert got == want
    assert len(comps) == 2


def test_maximal_cluster_selects_biggest():
    env = open_env(2)
    wall = [((1, y), 0) for y in range(-4, 5)]  # left part 6 columns, right 3
    env = close_bonds(env, wall)
    g = maximal_cluster(env, TriadicCube(2, (0, 0)))
    assert g.n_vertices == 6 * 9
    assert g.vertices[:, 0].max() == 1


def test_cluster_graph_structure():
    env = open_env(1)
    g = maximal_cluster(env, TriadicCube(1, (0, 0)))
    assert g.n_vertices == 9
    assert g.n_edges == 12
    assert np.all(g.conductances == 1.0)
    assert np.all(g.edges[:, 0] < g.edges[:, 1])
    # vertex lookup round-trips
    for i, v in enumerate(g.vertices):
        assert g.index_of(v) == i
    assert g.index_of((7, 7)) == -1


# -- crossability -----------------------------------------------------------


def test_crossable_fully_open_and_closed():
    env = open_env(2)
    assert is_crossable(env, TriadicCube(2, (0, 0)))
    assert is_crossable(env, TriadicCube(0, (2, 2)))  # single vertex
    envc = close_all(env)
    assert not is_crossable(envc, TriadicCube(2, (0, 0)))
    assert not is_crossable(envc, TriadicCube(1, (0, 0)))


def test_crossable_column_configurations():
    env = open_env(2)
    cube = TriadicCube(2, (0, 0))
    # closing every vertical bond in column x=0 leaves both crossings intact
    col_vertical = [((0, y), 1) for y in range(-4, 4)]
    env_a = close_bonds(env, col_vertical)
    assert is_crossable(env_a, cube)
    # additionally severing horizontal bonds into the column isolates it
    col_incident = col_vertical + [((-1, y), 0) for y in range(-4, 5)] + [
        ((0, y), 0) for y in range(-4, 5)]
    env_b = close_bonds(env, col_incident)
    assert not is_crossable(env_b, cube)
    # oracle: no left-right path
    reach = bfs_reachable(env_b, (-4, 0), cube.points())
    assert all(p[0] < 0 for p in reach)


def test_crossing_cluster_fully_open_and_closed():
    env = open_env(2)
    cube = TriadicCube(2, (0, 0))
    cc = crossing_cluster(env, cube)
    assert len(cc) == 81
    assert crossing_cluster(close_all(env), cube) is None


def test_crossing_cluster_explicit_configuration():
    # left 6 columns form the crossing cluster only if they touch all faces;
    # severing at x=1 means neither side touches both x-faces -> None
    env = close_bonds(open_env(2), [((1, y), 0) for y in range(-4, 5)])
    cube = TriadicCube(2, (0, 0))
    assert crossing_cluster(env, cube) is None
    # a single open row reconnecting them restores a crossing cluster
    env2 = close_bonds(open_env(2), [((1, y), 0) for y in range(-4, 4)])
    cc = crossing_cluster(env2, cube)
    assert cc is not None and len(cc) == 81


# -- well-connectedness and goodness ---------------------------------------


def test_well_connected_fully_open():
    env = open_env(2)
    assert is_well_connected(env, TriadicCube(2, (0, 0)), EXH)
    assert is_well_connected(env, TriadicCube(1, (0, 0)))


def test_well_connected_requires_crossing_cluster():
    env = close_all(open_env(2))
    assert not is_well_connected(env, TriadicCube(2, (0, 0)), EXH)


def test_well_connected_size_precondition():
    env = open_env(2)
    with pytest.raises(ValueError):
        is_well_connected(env, TriadicCube(0, (0, 0)))


def _pocket_walls(pocket):
    walls = []
    pocket = [tuple(p) for p in pocket]
    for (x, y) in pocket:
        for k, (dx, dy) in enumerate([(1, 0), (0, 1)]):
            if (x + dx, y + dy) not in pocket:
                walls.append(((x, y), k))
            if (x - dx, y - dy) not in pocket:
                walls.append(((x - dx, y - dy), k))
    return walls


def test_isolated_pocket_fails_clause_ii():
    # open 3-vertex column walled off by closed bonds: extent 2 >= the
    # large-path threshold, detached from the crossing cluster
    env = open_env(2)
    env = close_bonds(env, _pocket_walls([(2, 2), (2, 3), (2, 4)]))
    cube = TriadicCube(2, (0, 0))
    assert not is_well_connected(env, cube, EXH)
    assert not is_well_connected(env, cube)  # default density catches it too


def test_small_pocket_caught_only_by_exhaustive():
    # a detached 2x2 pocket (extent 1) is below the default large-path
    # floor of 2 lattice steps but trips the literal exhaustive threshold
    env = open_env(2)
    env = close_bonds(env, _pocket_walls([(2, 2), (2, 3), (3, 2), (3, 3)]))
    cube = TriadicCube(2, (0, 0))
    assert not is_well_connected(env, cube, EXH)
    assert is_well_connected(env, cube)


def test_is_good_examples():
    env = open_env(2)
    assert is_good(env, TriadicCube(2, (0, 0)))
    assert not is_good(env, TriadicCube(0, (0, 0)))  # size 1
    assert not is_good(close_all(env), TriadicCube(1, (0, 0)))


def test_good_cube_unique_maximal_crossing_cluster():
    # on sampled good cubes no other face-touching component ties the maximum
    for seed in range(8):
        env = generate(EnvironmentSpec(d=2, M=2, p=0.8, seed=seed))
        cube = TriadicCube(2, (0, 0))
        if not is_good(env, cube):
            continue
        comps = open_clusters(env, cube)
        touching = []
        for c in comps:
            cs = {tuple(p) for p in c}
            if all(any(p[k] == f for p in cs) for k in range(2) for f in (-4, 4)):
                touching.append(len(c))
        assert len(touching) >= 1
        touching.sort(reverse=True)
        assert len(touching) == 1 or touching[0] > touching[1]


def test_crossability_monotone_under_edge_opening(rng):
    spec = EnvironmentSpec(d=2, M=2, p=0.5, seed=3, allow_subcritical=True)
    env = generate(spec)
    cube = TriadicCube(2, (0, 0))
    closed = np.argwhere((env.cond == 0) & env.in_box_bond_mask())
    rng.shuffle(closed)
    was = is_crossable(env, cube)
    cond = env.cond.copy()
    from percolab.env import Environment

    for b in closed[:60]:
        cond[tuple(b)] = 1.0
        env = Environment(spec, cond.copy(), check=False)
        now = is_crossable(env, cube)
        assert now or not was  # never true -> false
        was = now
    assert was  # fully reopened patch of this size must cross eventually


@pytest.mark.slow
def test_goodness_probability_monotone_in_p():
    freqs = []
    for p in (0.55, 0.75, 0.95):
        good = 0
        n = 60
        for seed in range(n):
            env = generate(EnvironmentSpec(d=2, M=2, p=p, seed=seed))
            good += is_good(env, TriadicCube(2, (0, 0)))
        freqs.append(good / n)
    assert freqs[0] <= freqs[1] + 0.1 and freqs[1] <= freqs[2] + 0.1
