import numpy as np
import pytest

from ucvol.atlas import ACRDescriptor
from ucvol.cayley import cayley_of_poses, flips_of_poses
from ucvol.core import Configuration, ConstraintSystem, GridSpec, PointSet, Pose, check_c1, cube_indices
from ucvol.errors import EmptyACR
from ucvol.uc import ACRSampler, easal_cayley_volume, sample_acr, seed_cubes

from conftest import GENERIC_ORIGIN, triangle_sets

BOTTOM = ((0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2))
GRID = GridSpec.from_counts((4.0, 4.0, 4.0), (8, 8, 8), GENERIC_ORIGIN)
SYS = ConstraintSystem()


@pytest.fixture(scope="module")
def runs():
    A, B = triangle_sets()
    out = {}
    for Q in (((0, 0),), ((0, 0), (1, 1))):
        for v in ("simplicial", "hybrid", "basis", "face"):
            out[Q, v] = ACRSampler(A, B, ACRDescriptor(Q), v, GRID, None, SYS)
            out[Q, v].run()
    return out


def test_rigid_bottom_counts_cubes_of_its_realizations():
    A, B = triangle_sets()
    r = sample_acr(A, B, BOTTOM, "hybrid", GRID, None, SYS)
    ev = easal_cayley_volume(A, B, BOTTOM, GRID, 0.5, SYS)
    assert ev.preimages <= 2 ** 3
    assert r.counted_cubes == set(ev.cubes)
    assert r.volume == 8  # 4 feasible flips, each seen under both angle triples


@pytest.mark.parametrize("Q", [((0, 0),), ((0, 0), (1, 1))])
@pytest.mark.parametrize("variant", ["simplicial", "hybrid", "basis", "face"])
def test_counted_configurations_are_valid(runs, Q, variant):
    s = runs[Q, variant]
    res = s.result
    assert res.volume > 0
    A, B = res.A, res.B
    tree = s.tree
    keys = np.array(list(res.counted))
    poses = np.array([p for _, p in res.counted.values()])
    assert np.array_equal(cube_indices(poses, GRID), keys)
    C = cayley_of_poses(tree, poses)
    assert np.abs(C[:, : len(Q)] - tree.acg.targets).max() <= 1e-6
    for (flip, pose), sign in zip(res.counted.values(), flips_of_poses(tree, poses)):
        assert check_c1(Configuration(A, B, Pose.from_array(pose)), SYS) == []
        free = sign != 0
        assert np.array_equal(np.array(flip)[free], sign[free])


@pytest.mark.parametrize("Q", [((0, 0),), ((0, 0), (1, 1))])
def test_hybrid_contains_simplicial(runs, Q):
    assert runs[Q, "simplicial"].result.counted_cubes <= runs[Q, "hybrid"].result.counted_cubes


def test_no_cube_processed_twice_per_flip(runs):
    s = runs[((0, 0), (1, 1)), "hybrid"]
    visited = s.result.per_flip_visited
    assert sum(len(v) for v in visited.values()) == s.result.stats["processed"]


def test_runs_are_deterministic():
    A, B = triangle_sets()
    r1 = sample_acr(A, B, [(0, 0), (1, 1)], "hybrid", GRID, None, SYS)
    r2 = sample_acr(A, B, [(0, 0), (1, 1)], "hybrid", GRID, None, SYS)
    assert list(r1.counted) == list(r2.counted)
    rows1 = [(f, k, p.tobytes()) for f, k, p in r1.rows()]
    rows2 = [(f, k, p.tobytes()) for f, k, p in r2.rows()]
    assert rows1 == rows2


def test_thick_needs_one_contact():
    A, B = triangle_sets()
    with pytest.raises(ValueError):
        ACRSampler(A, B, ACRDescriptor(((0, 0), (1, 1))), "thick", GRID, None, SYS)


def test_thick_covers_at_least_simplicial_for_one_contact(runs):
    A, B = triangle_sets()
    thick = sample_acr(A, B, [(0, 0)], "thick", GRID, None, SYS, thick_subdivisions=4)
    assert len(thick.counted_cubes & runs[((0, 0),), "simplicial"].result.counted_cubes) > 0
    assert thick.volume >= runs[((0, 0),), "simplicial"].result.volume


def test_seeds_exist_for_every_flip():
    A, B = triangle_sets()
    seeds = seed_cubes(A, B, [(0, 0)], GRID, 0.5, SYS)
    assert len(seeds) == 8
    assert all(len(v) >= 1 for v in seeds.values())


def test_unreachable_contacts_give_an_empty_result():
    A = PointSet.from_arrays("A", [[0, 0, 0], [40, 0, 0], [0, 40, 0]], 0.5)
    B, _ = triangle_sets()
    r = sample_acr(A, B, [(0, 0), (1, 0)], "hybrid", GRID, None, SYS)
    assert r.volume == 0 and r.diagnostic
    with pytest.raises(EmptyACR):
        sample_acr(A, B, [(0, 0), (1, 0)], "hybrid", GRID, None, SYS, strict=True)


def test_cube_far_from_the_region_has_no_intersections(runs):
    s = ACRSampler(*triangle_sets(), ACRDescriptor(((0, 0),)), "simplicial", GRID, None, SYS)
    before = s.result.stats["accepted"]
    out = s.process_cubes(np.array([[10, 10, 10, 0, 0, 0]]), np.zeros(1, dtype=np.int64), s.flips[0])
    assert out[0] == 0 and s.result.stats["accepted"] == before


def test_seed_cube_straddles_the_region():
    s = ACRSampler(*triangle_sets(), ACRDescriptor(((0, 0),)), "hybrid", GRID, None, SYS)
    seeds = s.seed_cubes()
    f = s.flips[0]
    keys = np.array(seeds[f][:20])
    out = s.process_cubes(keys, np.zeros(len(keys), dtype=np.int64), f)
    assert (out != 0).any()


def test_halving_the_cayley_step_doubles_a_one_dimensional_count():
    A, B = triangle_sets()
    n = [easal_cayley_volume(A, B, BOTTOM[:5], GRID, st, SYS).preimages for st in (0.2, 0.1, 0.05)]
    assert 1.6 <= n[1] / n[0] <= 2.5
    assert 1.6 <= n[2] / n[1] <= 2.5
