"""Geometry tests: dead reckoning bounds, Hausdorff vs a brute-force oracle,
and both translation procedures."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmer.geometry import (
    DeadReckoningModel,
    PointCloud,
    Vec3,
    chord_error_bound,
    cloud_from_points,
    dead_reckon,
    hausdorff_raw,
    hd,
    load_cloud,
    read_points,
    save_cloud,
    translate_centroid,
    translate_stochastic,
)


def euclid(p, q):
    return math.sqrt((p.l - q.l) ** 2 + (p.h - q.h) ** 2 + (p.d - q.d) ** 2)


def brute_hausdorff(a, b):
    """O(n*m) oracle, pure Python loops."""

    def directed(xs, ys):
        return max(min(euclid(x, y) for y in ys) for x in xs)

    return max(directed(a, b), directed(b, a))


def random_cloud(rng, n, dim=3, span=20.0):
    pts = set()
    while len(pts) < n:
        pts.add(
            (
                rng.uniform(0, span),
                rng.uniform(0, span),
                rng.uniform(0, span) if dim == 3 else 0.0,
            )
        )
    return PointCloud(tuple(Vec3(*t) for t in sorted(pts)), dim)


class _FixedDraw:
    """rng stub returning scripted uniform() values."""

    def __init__(self, values):
        self.values = list(values)

    def uniform(self, a, b):
        return self.values.pop(0)


# ---------------------------------------------------------------- Vec3


def test_vec3_rejects_non_finite():
    with pytest.raises(ValueError):
        Vec3(float("nan"), 0, 0)
    with pytest.raises(ValueError):
        Vec3(0, float("inf"), 0)


def test_vec3_arithmetic():
    a = Vec3(1, 2, 3)
    b = Vec3(4, 5, 6)
    assert (a + b) == Vec3(5, 7, 9)
    assert (b - a) == Vec3(3, 3, 3)
    assert a.scaled(2) == Vec3(2, 4, 6)
    assert a.dot(b) == 32
    assert a.cross(b) == Vec3(-3, 6, -3)
    assert Vec3(3, 4, 0).norm() == 5


def test_point_cloud_invariants():
    with pytest.raises(ValueError):
        PointCloud((), 2)
    with pytest.raises(ValueError):
        PointCloud((Vec3(0, 0, 0), Vec3(0, 0, 0)), 3)
    with pytest.raises(ValueError):
        PointCloud((Vec3(0, 0, 1),), 2)
    c = PointCloud((Vec3(0, 0, 0), Vec3(1, 0, 0)), 2)
    assert len(c) == 2


# ---------------------------------------------------------- dead reckoning


def test_dead_reckon_zero_epsilon_is_exact():
    m = DeadReckoningModel(0.0, rng_seed=1)
    assert dead_reckon(Vec3(0, 0, 0), Vec3(10, 0, 0), m, dim=2) == Vec3(10, 0, 0)
    assert dead_reckon(Vec3(1, 2, 3), Vec3(4, 5, 6), m, dim=3) == Vec3(4, 5, 6)


def test_dead_reckon_zero_length_noop():
    m = DeadReckoningModel(5.0, rng_seed=1)
    p = Vec3(2, 2, 2)
    before = m.rng.getstate()
    assert dead_reckon(p, p, m) == p
    assert m.rng.getstate() == before  # no draw consumed


def test_dead_reckon_forced_full_deflection():
    # delta forced to +5 degrees: endpoint misses the target by the full
    # chord 2 * L * sin(eps / 2) while preserving the travel length.
    m = DeadReckoningModel(5.0)
    m.rng = _FixedDraw([math.radians(5.0)])
    end = dead_reckon(Vec3(0, 0, 0), Vec3(10, 0, 0), m, dim=2)
    chord = 2 * 10 * math.sin(math.radians(2.5))
    assert end.dist(Vec3(10, 0, 0)) == pytest.approx(chord, abs=1e-12)
    assert end.norm() == pytest.approx(10.0, abs=1e-12)
    assert chord == pytest.approx(0.8724, abs=5e-4)


def test_dead_reckon_epsilon_zero_consumes_draws():
    # Stream shape does not depend on epsilon.
    m0 = DeadReckoningModel(0.0, rng_seed=7)
    dead_reckon(Vec3(0, 0, 0), Vec3(1, 0, 0), m0, dim=3)
    m5 = DeadReckoningModel(5.0, rng_seed=7)
    dead_reckon(Vec3(0, 0, 0), Vec3(1, 0, 0), m5, dim=3)
    assert m0.rng.random() == m5.rng.random()


def test_dead_reckon_3d_sampling_bounds():
    # 10k draws: travel length preserved, angular deviation within epsilon.
    m = DeadReckoningModel(3.0, rng_seed=42)
    start, dest = Vec3(0, 0, 0), Vec3(0, 20, 0)
    for _ in range(10_000):
        end = dead_reckon(start, dest, m, dim=3)
        assert abs(end.dist(start) - 20.0) <= 1e-9
        cosang = end.dot(dest) / (end.norm() * dest.norm())
        ang = math.degrees(math.acos(max(-1.0, min(1.0, cosang))))
        assert ang <= 3.0 + 1e-9


def test_dead_reckon_2d_stays_planar():
    m = DeadReckoningModel(10.0, rng_seed=3)
    for _ in range(100):
        end = dead_reckon(Vec3(1, 1, 0), Vec3(5, -2, 0), m, dim=2)
        assert end.d == 0.0


def test_dead_reckon_determinism():
    a = DeadReckoningModel(5.0, rng_seed=9)
    b = DeadReckoningModel(5.0, rng_seed=9)
    legs = [(Vec3(0, 0, 0), Vec3(3, 4, 5)), (Vec3(1, 1, 1), Vec3(-2, 0, 7))]
    outs_a = [dead_reckon(s, d, a, dim=3) for s, d in legs]
    outs_b = [dead_reckon(s, d, b, dim=3) for s, d in legs]
    assert outs_a == outs_b


@given(
    st.floats(0.1, 90.0),
    st.floats(-50, 50),
    st.floats(-50, 50),
    st.floats(-50, 50),
    st.integers(0, 2**32),
)
@settings(max_examples=200, deadline=None)
def test_dead_reckon_chord_bound_property(eps, x, y, z, seed):
    dest = Vec3(x, y, z)
    if dest == Vec3(0, 0, 0):
        dest = Vec3(1, 0, 0)
    m = DeadReckoningModel(eps, rng_seed=seed)
    length = dest.norm()
    end = dead_reckon(Vec3(0, 0, 0), dest, m, dim=3)
    assert abs(end.norm() - length) <= 1e-9 * max(1.0, length)
    assert end.dist(dest) <= chord_error_bound(length, eps) + 1e-9


# --------------------------------------------------------------- Hausdorff


def test_hausdorff_identical_is_zero():
    rng = random.Random(1)
    c = random_cloud(rng, 40)
    assert hausdorff_raw(c, c) == 0.0


def test_hausdorff_single_pair():
    e = PointCloud((Vec3(0, 0, 0),), 3)
    g = PointCloud((Vec3(3, 4, 0),), 3)
    assert hausdorff_raw(e, g) == pytest.approx(5.0)


def test_hausdorff_asymmetric_sets():
    e = PointCloud((Vec3(0, 0, 0), Vec3(1, 0, 0)), 3)
    g = PointCloud((Vec3(0, 0, 0),), 3)
    # {EG} = {0, 1}, {GE} = {0}
    assert hausdorff_raw(e, g) == pytest.approx(1.0)
    assert hausdorff_raw(g, e) == pytest.approx(1.0)


def test_hausdorff_matches_brute_force():
    rng = random.Random(7)
    for _ in range(20):
        a = random_cloud(rng, rng.randint(1, 60))
        b = random_cloud(rng, rng.randint(1, 60))
        assert hausdorff_raw(a, b) == brute_hausdorff(a.points, b.points)
        assert hausdorff_raw(a, b) == hausdorff_raw(b, a)


# ------------------------------------------------------------- translations


def test_translate_centroid_pure_shift():
    rng = random.Random(5)
    g = random_cloud(rng, 25)
    shift = Vec3(2, 0, 0)
    e = g.translated(shift)
    t = translate_centroid(e, g)
    assert t.l == pytest.approx(-2.0, abs=1e-9)
    assert t.h == pytest.approx(0.0, abs=1e-9)
    assert hd(e, g, method="centroid") <= 1e-9


def test_translate_centroid_identity_and_arith():
    g = PointCloud((Vec3(1, 1, 0), Vec3(3, 1, 0)), 2)
    e = PointCloud((Vec3(0, 0, 0), Vec3(2, 0, 0)), 2)
    assert translate_centroid(g, g) == Vec3(0, 0, 0)
    assert translate_centroid(e, g) == Vec3(1, 1, 0)
    with pytest.raises(ValueError, match="size mismatch"):
        translate_centroid(e, PointCloud((Vec3(0, 0, 0),), 2))


def test_translate_stochastic_exact_match():
    rng = random.Random(2)
    g = random_cloud(rng, 30)
    t = translate_stochastic(g, g, rng=random.Random(0))
    assert t == Vec3(0, 0, 0)
    assert hd(g, g, method="stochastic", rng=random.Random(0)) == 0.0


def test_translate_stochastic_uniform_shift():
    rng = random.Random(3)
    g = random_cloud(rng, 30)
    e = g.translated(Vec3(0, 0, 5))
    t = translate_stochastic(e, g, rng=random.Random(0))
    assert t.d == pytest.approx(-5.0, abs=1e-9)
    assert abs(t.l) <= 1e-9 and abs(t.h) <= 1e-9


def test_translate_stochastic_minimizes_residual():
    # One outlier; exhaustive check that the winner has minimal residual.
    rng = random.Random(11)
    g = random_cloud(rng, 20)
    pts = list(g.points)
    pts[7] = pts[7] + Vec3(10, 0, 0)
    e = PointCloud(tuple(pts), 3)
    pick_rng = random.Random(4)
    t = translate_stochastic(e, g, r=20, rng=pick_rng)

    # oracle: residual of every candidate translation
    def residual(cand):
        tv = g.points[cand] - e.points[cand]
        return sum((e.points[j] + tv).dist(g.points[j]) for j in range(20))

    best = min(range(20), key=residual)
    expected = g.points[best] - e.points[best]
    assert t.dist(expected) <= 1e-9
    # the winner is a non-outlier candidate, so t cancels a regular error
    assert best != 7


def test_translate_stochastic_returns_a_candidate_vector():
    rng = random.Random(13)
    e = random_cloud(rng, 15)
    g = random_cloud(rng, 15)
    t = translate_stochastic(e, g, rng=random.Random(1))
    cands = [g.points[i] - e.points[i] for i in range(15)]
    assert any(t.dist(c) <= 1e-12 for c in cands)


def test_hd_centroid_invariant_under_uniform_translation():
    rng = random.Random(17)
    e = random_cloud(rng, 30)
    g = random_cloud(rng, 30)
    base = hd(e, g, method="centroid")
    shifted = hd(e.translated(Vec3(5, -3, 2)), g, method="centroid")
    assert shifted == pytest.approx(base, abs=1e-9)


def test_hd_rotated_cloud_matches_independent_pipeline():
    # E = G rotated 90 degrees about the H axis; compare hd() against a
    # from-scratch centroid alignment plus brute-force Hausdorff.
    rng = random.Random(23)
    g = random_cloud(rng, 25)

    def rot_h(p):
        # (l, h, d) -> (d, h, -l)
        return Vec3(p.d, p.h, -p.l)

    e = PointCloud(tuple(rot_h(p) for p in g.points), 3)
    got = hd(e, g, method="centroid")

    ce = Vec3(*np.mean([p.as_tuple() for p in e.points], axis=0))
    cg = Vec3(*np.mean([p.as_tuple() for p in g.points], axis=0))
    t = cg - ce
    aligned = [p + t for p in e.points]
    want = brute_hausdorff(aligned, list(g.points))
    assert got == pytest.approx(want, abs=1e-9)


def test_hd_never_mutates_inputs():
    rng = random.Random(29)
    e = random_cloud(rng, 10)
    g = random_cloud(rng, 10)
    before = [p.as_tuple() for p in e.points]
    hd(e, g, method="stochastic", rng=random.Random(0))
    assert [p.as_tuple() for p in e.points] == before


# ------------------------------------------------------------- file format


def test_cloud_file_round_trip(tmp_path):
    rng = random.Random(31)
    cloud = random_cloud(rng, 40)
    path = tmp_path / "c.xyz"
    save_cloud(cloud.points, path)
    back = load_cloud(path)
    assert back.points == cloud.points
    assert back.dim == 3


def test_cloud_file_comments_and_2d(tmp_path):
    path = tmp_path / "c2.xyz"
    path.write_text("# header\n1 2\n3 4\n\n# tail\n5 6\n")
    cloud = load_cloud(path)
    assert cloud.dim == 2
    assert cloud.points == (Vec3(1, 2, 0), Vec3(3, 4, 0), Vec3(5, 6, 0))


def test_cloud_file_bad_column_count(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n1 2 3 4\n")
    with pytest.raises(ValueError, match="line 2"):
        read_points(path)


def test_cloud_file_duplicate_handling(tmp_path):
    path = tmp_path / "dup.xyz"
    path.write_text("1 2 3\n1 2 3\n4 5 6\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_cloud(path)
    cloud = load_cloud(path, dedup=True)
    assert len(cloud) == 2


def test_cloud_from_points_infers_dim():
    assert cloud_from_points([Vec3(0, 1, 0), Vec3(2, 3, 0)]).dim == 2
    assert cloud_from_points([Vec3(0, 1, 0), Vec3(2, 3, 1)]).dim == 3
