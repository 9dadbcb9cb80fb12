"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import hashlib
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

import mc_cases
from conftest import GENERIC_ORIGIN, acceptance, triangle_sets
from test_cayley import NICE_BOTTOM, TREES, make_tree, random_poses
from test_cli import make_run, run
from test_frontier import ball_process
from test_measure import DISJOINT, SHARED5, _rot_unit, UNIT, _unit_counts
from ucvol.atlas import ACRDescriptor, basin_from_bottom, partition_mc_sample
from ucvol.cayley import cayley_of_poses, flips_of_poses, realize_batch, tree_vertex_positions
from ucvol.cli import EXIT_OK
from ucvol.core import ConstraintSystem, GridSpec, Pose
from ucvol.errors import InfeasibleSample
from ucvol.measure import (
    baseline_enumerate,
    coverage_error,
    coverage_histogram,
    gamma,
    shape_distribution,
    volume_report,
    weighted_basin_volume,
)
from ucvol.uc.frontier import FrontierGraph, traverse
from ucvol.uc.intersect import solve_parallelepipeds, solve_simplices
from ucvol.uc.sampler import ACRSampler, Variant, sample_acr

REFERENCE_GRID = GridSpec.uniform(2.0, math.pi / 9, GENERIC_ORIGIN)
CONTACT_SETS = {1: ((0, 0),), 2: ((0, 0), (1, 1))}
TIME_LIMIT = 300.0


@pytest.fixture(scope="module")
def grid_runs():
    """Hybrid and simplicial runs plus the fine-grid oracle, per contact count."""
    A, B = triangle_sets()
    sys = ConstraintSystem()
    out = {}
    for q, Q in CONTACT_SETS.items():
        acr = ACRDescriptor(Q)
        oracle = baseline_enumerate(A, B, sys, REFERENCE_GRID.refine(2), [acr], mode="crossing")
        row = {"oracle": oracle.derived_cubes(REFERENCE_GRID, acr)}
        for v in (Variant.Hybrid, Variant.Simplicial):
            t0 = time.perf_counter()
            res = sample_acr(A, B, acr, v, REFERENCE_GRID, None, sys)
            row[v] = (res.counted_cubes, time.perf_counter() - t0)
        out[q] = row
    return out


@pytest.mark.parametrize("q", sorted(CONTACT_SETS))
def test_oracle_equivalence(grid_runs, q):
    row = grid_runs[q]
    truth = row["oracle"]
    got, secs = row[Variant.Hybrid]
    rel = len(got) / len(truth) - 1
    jac = len(got & truth) / len(got | truth)
    ok = abs(rel) <= 0.10 and jac >= 0.85 and secs < TIME_LIMIT
    assert acceptance(f"oracle |Q|={q}", ok,
                      f"{len(got)} vs {len(truth)} cubes, {rel:+.1%}, Jaccard {jac:.3f}, {secs:.0f} s")


def test_hybrid_contains_simplicial_and_basis_is_cheaper(grid_runs):
    missing = {q: len(row[Variant.Simplicial][0] - row[Variant.Hybrid][0]) for q, row in grid_runs.items()}
    A, B = triangle_sets()
    grid = GridSpec.from_counts((4.0, 4.0, 4.0), (8, 8, 8), GENERIC_ORIGIN)
    solves = {}
    for v in (Variant.Basis, Variant.Simplicial):
        smp = ACRSampler(A, B, ACRDescriptor(TREES[3]), v, grid, None, ConstraintSystem(), project_misses=False)
        flip, keys = next((f, k) for f, k in smp.seed_cubes().items() if k)
        keys = np.array(keys[:20], dtype=np.int64)
        smp.process_cubes(keys, np.zeros(len(keys), dtype=np.int64), flip)
        solves[v] = smp.result.stats["solves"]
    ok = not any(missing.values()) and solves[Variant.Basis] <= solves[Variant.Simplicial] / math.factorial(3)
    assert acceptance("hybrid superset and basis solve count", ok,
                      f"simplicial-only cubes {missing}, basis {solves[Variant.Basis]} vs "
                      f"simplicial {solves[Variant.Simplicial]} solves at |Q|=3")


def test_cayley_round_trip(rng):
    trees = dict(TREES) | {4: NICE_BOTTOM[:4], 5: NICE_BOTTOM[:5]}
    worst = 0.0
    exact_flips = True
    for q, Q in trees.items():
        tree = make_tree(Q)
        poses = random_poses(rng, 1000)
        C = cayley_of_poses(tree, poses)
        flips = flips_of_poses(tree, poses)
        P, ok, res = realize_batch(tree, C, flips)
        exact_flips &= bool(ok.all()) and np.array_equal(flips_of_poses(tree, P), flips)
        X = tree_vertex_positions(tree, P)
        for e in tree.edges:
            want = e.length if e.kind == "intra" else C[:, e.index if e.kind == "active" else q + e.index]
            worst = max(worst, float(np.abs(np.linalg.norm(X[:, e.u] - X[:, e.v], axis=1) - want).max()))
        worst = max(worst, float(np.abs(cayley_of_poses(tree, P) - C).max()))
    ok = exact_flips and worst <= 1e-9
    assert acceptance("Cayley round trip", ok, f"{len(trees)} trees x 1000 poses, worst residual {worst:.1e}")


def _well_conditioned(rng, m, shape, system, limit=1e4):
    """``m`` random arrays of ``shape`` whose linear ``system`` has condition number below ``limit``."""
    out, have = [], 0
    while have < m:
        M = rng.normal(size=(m, *shape))
        M = M[np.linalg.cond(system(M)) < limit]
        out.append(M)
        have += len(M)
    return np.concatenate(out)[:m]


def _simplex_system(img):
    q = img.shape[1] - 1
    aff = np.ones((len(img), q + 1, q + 1))
    aff[:, 1:, :] = np.swapaxes(img[:, :, :q], 1, 2)
    return aff


def test_slice_intersections(rng):
    n = 10_000
    worst = 0.0
    false_accepts = 0
    for q in range(1, 6):
        m = n // 5
        img = _well_conditioned(rng, m, (q + 1, 6), _simplex_system)
        lam = rng.dirichlet(np.ones(q + 1), m)
        targets = np.einsum("mk,mkd->md", lam, img)[:, :q]
        w, acc, _ = solve_simplices(img, targets)
        X = np.einsum("mk,mkd->md", w[acc], img[acc])[:, :q]
        worst = max(worst, float(np.abs(X - targets[acc]).max()))
        false_accepts += int(m - acc.sum())
        margin = 10 ** rng.uniform(-5.9, -0.5, m)
        out = rng.dirichlet(np.ones(q + 1), m) * (1 + margin)[:, None]
        out[np.arange(m), rng.integers(q + 1, size=m)] = -margin
        out /= out.sum(axis=1, keepdims=True)
        _, acc_out, _ = solve_simplices(img, np.einsum("mk,mkd->md", out, img)[:, :q])
        false_accepts += int(acc_out.sum())
    for q in range(1, 6):
        m = n // 5
        basis = _well_conditioned(rng, m, (q, 6), lambda b: b[:, :, :q])
        center = rng.normal(size=(m, 6))
        alpha = rng.uniform(-1, 1, (m, q))
        targets = center[:, :q] + np.einsum("mj,mjd->md", alpha, basis)[:, :q]
        a, acc, _ = solve_parallelepipeds(center, basis, targets)
        X = center[acc, :q] + np.einsum("mj,mjd->md", a[acc], basis[acc])[:, :q]
        worst = max(worst, float(np.abs(X - targets[acc]).max()))
        false_accepts += int(m - acc.sum())
        margin = 10 ** rng.uniform(-5.9, -0.5, m)
        bad = alpha.copy()
        bad[np.arange(m), rng.integers(q, size=m)] = rng.choice([-1, 1], m) * (1 + margin)
        _, acc_out, _ = solve_parallelepipeds(center, basis, center[:, :q] + np.einsum("mj,mjd->md", bad, basis)[:, :q])
        false_accepts += int(acc_out.sum())
    ok = worst <= 1e-10 and false_accepts == 0
    assert acceptance("slice intersections", ok,
                      f"2 x {n} elements, worst residual {worst:.1e}, misclassified {false_accepts}")


def test_frontier_scaling():
    detail = []
    ok = True
    for D, radii in ((2, (8, 16, 32, 64)), (3, (4, 8, 16, 32))):
        counted, peaks = [], []
        for r in radii:
            fr = FrontierGraph(D)
            fr.add_seed((0,) * D)
            process, seen, inside = ball_process(fr, r)
            traverse(fr, process)
            counted.append(sum(1 for k in seen if inside(k)))
            peaks.append(fr.peak_size)
        slope = np.polyfit(np.log(counted), np.log(peaks), 1)[0]
        ok &= abs(slope - (D - 1) / D) <= 0.1
        detail.append(f"D={D} slope {slope:.3f} vs {(D - 1) / D:.3f}")
    assert acceptance("frontier scaling", ok, ", ".join(detail))


def test_weighted_volume_formula(rng):
    worst = 0
    for i in range(50):
        V = [int(v) for v in rng.integers(0, 10**6, 5)]
        B = 1.068 if i == 0 else float(rng.uniform(0.5, 2.0))
        exact = float(sum(Fraction(B) ** (5 - k) * v for k, v in enumerate(V, 1)))
        worst = max(worst, abs(weighted_basin_volume(V, B) - exact) / math.ulp(exact))
    basin = basin_from_bottom(NICE_BOTTOM)
    flat = {m: 1 / math.comb(6, len(m)) for m in basin.members if 1 <= m.energy_level <= 5}
    fractions = shape_distribution(flat, basin, [basin], 1.0, 1).fractions
    flat_ok = all(abs(fractions[k] - 0.2) <= 1e-12 for k in range(1, 6))
    ok = worst <= 4 and flat_ok
    assert acceptance("weighted basin volume", ok,
                      f"50 tuples within {worst:.0f} ulp, flat shape {[round(fractions[k], 3) for k in range(1, 6)]}")


def test_basin_lattice_and_relative_volumes():
    basin = basin_from_bottom(NICE_BOTTOM)
    levels = [len(basin.level(k)) for k in range(7)]
    lattice_ok = (len(basin.members) == 64 and levels == [math.comb(6, k) for k in range(7)]
                  and len(basin.edges) == 192)
    same = volume_report(_unit_counts(NICE_BOTTOM), {"x": basin, "y": basin}, 1.0)
    three = volume_report(_unit_counts(NICE_BOTTOM, SHARED5, DISJOINT),
                          {"a": basin, "b": basin_from_bottom(SHARED5), "c": basin_from_bottom(DISJOINT)}, 1.0)
    rel_ok = (same.relative_union == {"x": 1.0, "y": 1.0} and same.relative_sum == {"x": 0.5, "y": 0.5}
              and three.union == 155 and three.basin_volumes == {"a": 62, "b": 62, "c": 62})
    ok = lattice_ok and rel_ok
    assert acceptance("basin lattice", ok,
                      f"members {len(basin.members)}, levels {levels}, edges {len(basin.edges)}, "
                      f"three-basin union {three.union}")


def test_mc_partition():
    A, B, poses = mc_cases.build()
    sys = ConstraintSystem()
    wrong, nested, checked = 0, True, 0
    for line, pose in enumerate(poses):
        expected = mc_cases.EXPECTED[mc_cases.LINES[line]]
        got = {}
        for variant, exp in expected.items():
            try:
                got[variant] = partition_mc_sample(Pose.from_array(pose), A, B, sys, variant)
            except InfeasibleSample:
                got[variant] = "collision"
            if exp == "collision":
                wrong += got[variant] != "collision"
            elif exp != "interval":
                wrong += got[variant] != ACRDescriptor(exp)
        if all(isinstance(got.get(v), ACRDescriptor) for v in ("MC1", "MC2", "MC3")):
            q1, q2, q3 = (set(got[v].Q) for v in ("MC1", "MC2", "MC3"))
            nested &= q1 <= q2 <= q3
            checked += 1
    ok = wrong == 0 and nested
    assert acceptance("Monte Carlo partition", ok,
                      f"{len(poses)} lines, {wrong} misclassified, nesting checked on {checked}")


def test_coverage_metrics(rng):
    g_ok = gamma(4096, 64) == 2.0
    monotone = True
    for _ in range(100):
        base = _rot_unit(rng.uniform(0, 8, (rng.integers(1, 60), 6)))
        s1 = _rot_unit(rng.uniform(0, 8, (rng.integers(0, 40), 6)))
        s2 = np.concatenate([s1, _rot_unit(rng.uniform(0, 8, (rng.integers(1, 40), 6)))])
        g = float(rng.uniform(0.5, 3))
        monotone &= coverage_error(base, s2, g, UNIT) <= coverage_error(base, s1, g, UNIT)
    keys = np.array(list(itertools.product(range(0, 8, 2), repeat=6)), dtype=float)
    hist = coverage_histogram(_rot_unit(keys), _rot_unit(keys + 0.3), 1.0, UNIT)
    ok = g_ok and monotone and hist == {1: 1.0}
    assert acceptance("coverage metrics", ok, f"gamma(4096, 64) = {gamma(4096, 64)}, monotone {monotone}, "
                                              f"perfect histogram {hist}")


def _digest(out):
    return {p.relative_to(out).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*")) if p.is_file() and not p.name.startswith("manifest_")}


def test_determinism(tmp_path):
    digests = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        d.mkdir()
        cfg = make_run(d)
        codes = [run(cfg, cmd)[0] for cmd in ("sample-basin", "baseline", "measure")]
        assert codes == [EXIT_OK] * 3
        digests.append(_digest(d / "out"))
    differ = sorted(k for k in digests[0].keys() | digests[1].keys() if digests[0].get(k) != digests[1].get(k))
    ok = not differ and len(digests[0]) > 0
    assert acceptance("determinism", ok, f"{len(digests[0])} artifacts, differing {differ[:5]}")
