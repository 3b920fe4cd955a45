"""Fast batched goodness kernels must agree exactly with the reference
predicates on every cube of random environments."""

import numpy as np
import pytest

from conftest import close_all, close_bonds, open_env
from percolab.env import EnvironmentSpec, generate
from percolab.geometry import TriadicCube, is_good
from percolab.geometry import _well_connected, DEFAULT_DENSITY
from percolab.goodness_fast import GoodnessMap, wc_grid


def _cube_at(env, n, grid_pos):
    s = 3 ** n
    h = env.spec.half
    z = tuple(int(g) * s - h + (s - 1) // 2 for g in grid_pos)
    return TriadicCube(n, z)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("p", [0.55, 0.75, 0.9])
def test_wc_grid_matches_reference_d2(seed, p):
    env = generate(EnvironmentSpec(d=2, M=2, p=p, seed=seed))
    for n in (1, 2):
        grid = wc_grid(env, n)
        m = 3 ** (env.spec.M - n)
        for pos in np.ndindex(*(m,) * 2):
            cube = _cube_at(env, n, pos)
            assert grid[pos] == _well_connected(env, cube, DEFAULT_DENSITY), (n, pos)


@pytest.mark.parametrize("seed", [0, 1])
def test_wc_grid_matches_reference_d3(seed):
    env = generate(EnvironmentSpec(d=3, M=2, p=0.5, seed=seed))
    for n in (1, 2):
        grid = wc_grid(env, n)
        m = 3 ** (env.spec.M - n)
        for pos in np.ndindex(*(m,) * 3):
            cube = _cube_at(env, n, pos)
            assert grid[pos] == _well_connected(env, cube, DEFAULT_DENSITY), (n, pos)


@pytest.mark.slow
def test_goodness_map_matches_reference_scale3():
    env = generate(EnvironmentSpec(d=2, M=3, p=0.7, seed=4))
    gm = GoodnessMap(env)
    for n in (1, 2, 3):
        m = 3 ** (env.spec.M - n)
        for pos in np.ndindex(*(m,) * 2):
            cube = _cube_at(env, n, pos)
            assert gm.good[n][pos] == is_good(env, cube), (n, pos)


def test_goodness_map_fully_open_and_closed():
    env = open_env(3)
    gm = GoodnessMap(env)
    for n in (1, 2, 3):
        assert gm.good[n].all()
    envc = close_all(env)
    gmc = GoodnessMap(envc)
    for n in (1, 2, 3):
        assert not gmc.good[n].any()


def test_goodness_map_pocket_configuration():
    # an isolated 3-vertex column breaks well-connectedness of the
    # containing scale-2 cube and thus goodness of it and its predecessor
    env = open_env(3)
    pocket = [(2, 2), (2, 3), (2, 4)]
    walls = []
    for (x, y) in pocket:
        for k, (dx, dy) in enumerate([(1, 0), (0, 1)]):
            if (x + dx, y + dy) not in pocket:
                walls.append(((x, y), k))
            if (x - dx, y - dy) not in pocket:
                walls.append(((x - dx, y - dy), k))
    env = close_bonds(env, walls)
    gm = GoodnessMap(env)
    assert not gm.wc[2][1, 1]  # cube centered at origin
    assert not gm.good[2][1, 1]
    assert not gm.good[3][0, 0]
