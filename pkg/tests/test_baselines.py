"""Baseline tests: the confidence formula, both solvers against constructed
fixtures and a grid-search oracle, and the outer localization loop."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmer.baselines import (
    BaselineResult,
    ConfidenceInput,
    TriangulationFailure,
    TrilaterationFailure,
    confidence,
    initial_error_radius,
    run_baseline,
    triangulate,
    trilaterate,
)
from swarmer.geometry import Vec3


# ---------------------------------------------------------------- confidence


def test_confidence_zero_radius_is_perfect():
    inp = ConfidenceInput(0.0, ((True, 3.0), (True, 7.0)))
    assert confidence(inp) == 1.0


def test_confidence_worked_example_exact():
    inp = ConfidenceInput(1.0, ((True, 10.0), (True, 4.0)))
    # 1 - (min(0.5, 0.1) + min(0.5, 0.25)) = 0.65
    assert abs(confidence(inp) - 0.65) <= 1e-12


def test_confidence_all_missing_neighbors():
    inp = ConfidenceInput(1.0, ((False, 1.0), (False, 1.0), (False, 1.0)))
    assert confidence(inp) == pytest.approx(0.0, abs=1e-12)


def test_confidence_input_validation():
    with pytest.raises(ValueError):
        ConfidenceInput(-1.0, ((True, 1.0),))
    with pytest.raises(ValueError):
        ConfidenceInput(1.0, ())
    with pytest.raises(ValueError):
        ConfidenceInput(1.0, ((True, 0.0),))


@given(
    st.lists(st.floats(0.5, 50.0), min_size=1, max_size=8),
    st.floats(0.0, 10.0),
    st.floats(0.0, 10.0),
)
@settings(max_examples=100, deadline=None)
def test_confidence_monotone_in_radius_and_bounded(dists, r1, r2):
    nbrs = tuple((True, d) for d in dists)
    lo, hi = sorted((r1, r2))
    c_lo = confidence(ConfidenceInput(lo, nbrs))
    c_hi = confidence(ConfidenceInput(hi, nbrs))
    assert c_hi <= c_lo + 1e-12
    for c in (c_lo, c_hi):
        assert -1e-12 <= c <= 1.0 + 1e-12


def test_initial_error_radius_modes():
    legs = [10.0, 20.0]
    worst = initial_error_radius(legs, 5.0, "worst")
    avg = initial_error_radius(legs, 5.0, "average")
    chord = 2 * 20 * math.sin(math.radians(2.5))
    assert worst == pytest.approx(chord)
    assert avg == pytest.approx(chord * 0.75)
    with pytest.raises(ValueError):
        initial_error_radius(legs, 5.0, "median")


# ------------------------------------------------------------- triangulation


SQUARE_GT = (Vec3(2, 0, 0), Vec3(2, 2, 0), Vec3(0, 2, 0))


def test_triangulate_self_consistent_reproduces_position():
    # localizer well off the anchors' circumcircle: a well-posed configuration
    loc = Vec3(2.0, 1.5, 0)
    anchors = (Vec3(4, 0, 0), Vec3(4, 4, 0), Vec3(0, 4, 0))
    got = triangulate(loc, anchors, anchors)
    assert got.dist(loc) <= 1e-9


def test_triangulate_concyclic_fixture_fails():
    # localizer exactly on the circumcircle of its anchors: the two
    # constructed circles coincide
    with pytest.raises(TriangulationFailure):
        triangulate(Vec3(0, 0, 0), SQUARE_GT, SQUARE_GT)


def test_triangulate_random_configs_exact():
    rng = random.Random(5)
    solved = 0
    while solved < 300:
        loc = Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), 0)
        anchors = tuple(
            Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), 0) for _ in range(3)
        )
        try:
            got = triangulate(loc, anchors, anchors)
        except TriangulationFailure:
            continue
        assert got.dist(loc) <= 1e-6
        solved += 1


def grid_search_oracle(localizer_gt, anchors_est, anchors_gt, step=0.001):
    """Brute-force minimizer of the squared angle mismatch over a one-cell
    box around the assigned point."""

    def signed(ax, ay, bx, by):
        return np.arctan2(ax * by - ay * bx, ax * bx + ay * by)

    g1, g2, g3 = anchors_gt
    a12 = signed(g1.l - localizer_gt.l, g1.h - localizer_gt.h,
                 g2.l - localizer_gt.l, g2.h - localizer_gt.h)
    a23 = signed(g2.l - localizer_gt.l, g2.h - localizer_gt.h,
                 g3.l - localizer_gt.l, g3.h - localizer_gt.h)
    xs = np.arange(localizer_gt.l - 1.0, localizer_gt.l + 1.0 + step / 2, step)
    ys = np.arange(localizer_gt.h - 1.0, localizer_gt.h + 1.0 + step / 2, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    e1, e2, e3 = anchors_est
    got12 = signed(e1.l - gx, e1.h - gy, e2.l - gx, e2.h - gy)
    got23 = signed(e2.l - gx, e2.h - gy, e3.l - gx, e3.h - gy)
    cost = (got12 - a12) ** 2 + (got23 - a23) ** 2
    k = np.unravel_index(np.argmin(cost), cost.shape)
    return Vec3(float(gx[k]), float(gy[k]), 0.0)


def test_triangulate_perturbed_anchors_match_grid_oracle():
    # well-posed fixture (localizer off the circumcircle); the perturbed
    # solve must land near the brute-force angle-mismatch minimizer
    rng = random.Random(9)
    loc = Vec3(2.0, 1.5, 0)
    anchors_gt = (Vec3(4, 0, 0), Vec3(4, 4, 0), Vec3(0, 4, 0))
    perturbed = tuple(
        a + Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0) for a in anchors_gt
    )
    got = triangulate(loc, perturbed, anchors_gt)
    oracle = grid_search_oracle(loc, perturbed, anchors_gt)
    assert got.dist(oracle) <= 0.5


def test_triangulate_collinear_fixture_fails():
    # localizer on the line through the anchors: subtended angles are zero
    loc = Vec3(-1, 0, 0)
    anchors = (Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0))
    with pytest.raises(TriangulationFailure):
        triangulate(loc, anchors, anchors)


# -------------------------------------------------------------- trilateration


def test_trilaterate_worked_example():
    anchors = (Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(0, 4, 0))
    got = trilaterate(Vec3(1, 1, 0), anchors, anchors, dim=2)
    assert got.dist(Vec3(1, 1, 0)) <= 1e-9


def test_trilaterate_unperturbed_identity():
    rng = random.Random(3)
    for dim in (2, 3):
        solved = 0
        while solved < 200:
            z = rng.uniform(-10, 10) if dim == 3 else 0.0
            loc = Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), z)
            anchors = tuple(
                Vec3(
                    rng.uniform(-10, 10),
                    rng.uniform(-10, 10),
                    rng.uniform(-10, 10) if dim == 3 else 0.0,
                )
                for _ in range(3)
            )
            try:
                got = trilaterate(loc, anchors, anchors, dim=dim)
            except TrilaterationFailure:
                continue
            assert got.dist(loc) <= 1e-9
            solved += 1


def test_trilaterate_disjoint_circles_fail():
    anchors_gt = (Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(0, 4, 0))
    # move anchor 1 so far that D1 + D2 < |a1 - a2|
    anchors_est = (Vec3(-100, 0, 0), Vec3(4, 0, 0), Vec3(0, 4, 0))
    with pytest.raises(TrilaterationFailure):
        trilaterate(Vec3(1, 1, 0), anchors_est, anchors_gt, dim=2)


def test_trilaterate_third_distance_mismatch_fails():
    anchors_gt = (Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(0, 4, 0))
    anchors_est = (Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(40, 40, 0))
    with pytest.raises(TrilaterationFailure):
        trilaterate(Vec3(1, 1, 0), anchors_est, anchors_gt, dim=2)


def test_trilaterate_collinear_3d_fails():
    anchors = (Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0))
    with pytest.raises(TrilaterationFailure):
        trilaterate(Vec3(1, 1, 1), anchors, anchors, dim=3)


# ----------------------------------------------------------------- main loop


def square_lattice(n_side, spacing=1.0):
    pts = [
        Vec3(i * spacing, j * spacing, 0.0)
        for i in range(n_side)
        for j in range(n_side)
    ]
    return pts


def k_nearest(points, k):
    out = []
    for i, p in enumerate(points):
        order = sorted(
            (j for j in range(len(points)) if j != i), key=lambda j: p.dist(points[j])
        )
        out.append(order[:k])
    return out


def test_run_baseline_exits_immediately_when_exact():
    gt = square_lattice(4)
    nbrs = k_nearest(gt, 4)
    res = run_baseline(
        cloud_gt=gt,
        cloud_est=list(gt),
        neighbors=nbrs,
        error_radii=[0.0] * len(gt),
        method="trilateration",
        hd_fn=lambda pts: 0.0,
        rng=random.Random(1),
    )
    assert res.iterations == 0
    assert res.stopped_by_threshold


def test_run_baseline_skips_underconnected_fls():
    gt = square_lattice(4)
    nbrs = k_nearest(gt, 4)
    nbrs[0] = nbrs[0][:2]  # two neighbors only
    res = run_baseline(
        cloud_gt=gt,
        cloud_est=list(gt),
        neighbors=nbrs,
        error_radii=[0.0] * len(gt),
        method="trilateration",
        hd_fn=lambda pts: 0.0,
        rng=random.Random(1),
    )
    assert res.skipped == 1


def test_run_baseline_runs_and_traces():
    rng = random.Random(7)
    gt = square_lattice(5)
    est = [p + Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 0) for p in gt]
    nbrs = k_nearest(gt, 5)
    radii = [0.5] * len(gt)
    res = run_baseline(
        cloud_gt=gt,
        cloud_est=est,
        neighbors=nbrs,
        error_radii=radii,
        method="trilateration",
        hd_fn=lambda pts: max(a.dist(b) for a, b in zip(pts, gt)),
        rng=rng,
        max_iters=40,
    )
    assert isinstance(res, BaselineResult)
    assert len(res.hd_trace) == res.iterations > 0


def test_run_baseline_rejects_unknown_method():
    with pytest.raises(ValueError):
        run_baseline([Vec3()], [Vec3()], [[0]], [0.0], "dead-reckoning",
                     lambda p: 0.0, random.Random(0))
