"""Comparison baselines: per-FLS confidence, three-object triangulation by
geometric circle intersection, and three-object trilateration.

Both solvers receive exact ground-truth measurements (angles or distances)
and exact movement; their weakness is that they compound the position error
of their anchors.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from swarmer.geometry import Vec3, chord_error_bound

CENTER_PROXIMITY_LIMIT = 1.0  # cells; closer circle centers are degenerate
DEGENERATE_SIN = 1e-9


class TriangulationFailure(Exception):
    """Circle construction or intersection was degenerate."""


class TrilaterationFailure(Exception):
    """No point matches the three ground-truth distances within tolerance."""


@dataclass(frozen=True)
class ConfidenceInput:
    """Eq. inputs: dead-reckoning error radius and the known neighbors."""

    r: float
    neighbors: tuple[tuple[bool, float], ...]  # (present, ground-truth distance)

    def __post_init__(self) -> None:
        if self.r < 0:
            raise ValueError("error radius must be nonnegative")
        if not self.neighbors:
            raise ValueError("at least one neighbor required")
        if any(present and dist <= 0 for present, dist in self.neighbors):
            raise ValueError("present neighbors need a positive distance")

    @property
    def n(self) -> int:
        return len(self.neighbors)


def confidence(inp: ConfidenceInput) -> float:
    """C = 1 - sum_k min(1/n, R / dist_k); a missing neighbor costs 1/n."""
    n = inp.n
    total = 0.0
    for present, dist in inp.neighbors:
        if not present:
            total += 1.0 / n
        else:
            total += min(1.0 / n, inp.r / dist)
    return 1.0 - total


def _signed_angle_2d(a: Vec3, b: Vec3) -> float:
    """Signed angle from a to b in the L-H plane."""
    return math.atan2(a.l * b.h - a.h * b.l, a.l * b.l + a.h * b.h)


def _rot90(v: Vec3) -> Vec3:
    return Vec3(-v.h, v.l, 0.0)


def _inscribed_circle(p: Vec3, q: Vec3, angle: float) -> tuple[Vec3, float]:
    """Circle through p and q whose inscribed angle over the chord is `angle`.

    Center sits on the chord's perpendicular bisector at cot(angle)/2 chord
    lengths; points on the correct arc see the chord under the signed angle.
    """
    s = math.sin(angle)
    if abs(s) < DEGENERATE_SIN:
        raise TriangulationFailure("subtended angle is degenerate")
    chord = q - p
    mid = (p + q).scaled(0.5)
    center = mid + _rot90(chord).scaled(math.cos(angle) / (2.0 * s))
    radius = chord.norm() / (2.0 * abs(s))
    return center, radius


def _circle_intersections(c1: Vec3, r1: float, c2: Vec3, r2: float) -> list[Vec3]:
    d = c2 - c1
    dist = d.norm()
    if dist < 1e-12:
        return []
    a = (dist * dist + r1 * r1 - r2 * r2) / (2.0 * dist)
    h_sq = r1 * r1 - a * a
    if h_sq < -1e-9:
        return []
    h = math.sqrt(max(h_sq, 0.0))
    u = d.scaled(1.0 / dist)
    base = c1 + u.scaled(a)
    off = _rot90(u).scaled(h)
    return [base + off, base - off]


def triangulate(
    localizer_gt: Vec3,
    anchors_est: Sequence[Vec3],
    anchors_gt: Sequence[Vec3],
) -> Vec3:
    """Solve the 2D position whose subtended anchor angles match ground truth.

    Builds the circle through estimated anchors 1-2 with the ground-truth
    inscribed angle A12, likewise for anchors 2-3, and intersects them; the
    intersection that is not the shared anchor is the answer.
    """
    a1, a2, a3 = anchors_est
    g1, g2, g3 = anchors_gt
    ang12 = _signed_angle_2d(g1 - localizer_gt, g2 - localizer_gt)
    ang23 = _signed_angle_2d(g2 - localizer_gt, g3 - localizer_gt)
    c12, r12 = _inscribed_circle(a1, a2, ang12)
    c23, r23 = _inscribed_circle(a2, a3, ang23)
    # Near-concyclic configurations put the second crossing in the shared
    # anchor's neighborhood instead of at the localizer; close centers are
    # the cheap detector for that failure mode.
    if c12.dist(c23) < CENTER_PROXIMITY_LIMIT:
        raise TriangulationFailure("circle centers too close")
    points = _circle_intersections(c12, r12, c23, r23)
    # both circles pass through the shared anchor; keep the other crossing
    candidates = [p for p in points if p.dist(a2) > 1e-6]
    if not candidates:
        raise TriangulationFailure("circles only meet at the shared anchor")
    best = max(candidates, key=lambda p: p.dist(a2))
    got12 = _signed_angle_2d(a1 - best, a2 - best)
    got23 = _signed_angle_2d(a2 - best, a3 - best)
    if abs(got12 - ang12) > 1e-6 or abs(got23 - ang23) > 1e-6:
        raise TriangulationFailure("solution lies on the wrong arc")
    return Vec3(best.l, best.h, 0.0)


def trilaterate(
    localizer_gt: Vec3,
    anchors_est: Sequence[Vec3],
    anchors_gt: Sequence[Vec3],
    dim: int = 2,
    tol: float = 0.01,
) -> Vec3:
    """Solve the point whose distances to the estimated anchors equal the
    ground-truth distances."""
    a1, a2, a3 = anchors_est
    d1, d2, d3 = (localizer_gt.dist(g) for g in anchors_gt)
    if dim == 2:
        points = _circle_intersections(a1, d1, a2, d2)
        if not points:
            raise TrilaterationFailure("first two circles do not intersect")
        best = min(points, key=lambda p: abs(p.dist(a3) - d3))
        if abs(best.dist(a3) - d3) > tol:
            raise TrilaterationFailure("no point matches the third distance")
        return Vec3(best.l, best.h, 0.0)

    # 3D: spheres 1-2 meet in a circle; pick its point nearest the third
    # distance, mirror ambiguity resolved toward the assigned point.
    ex_raw = a2 - a1
    d12 = ex_raw.norm()
    if d12 < 1e-12:
        raise TrilaterationFailure("coincident anchors")
    ex = ex_raw.scaled(1.0 / d12)
    rel3 = a3 - a1
    i = ex.dot(rel3)
    ey_raw = rel3 - ex.scaled(i)
    j = ey_raw.norm()
    if j < 1e-9:
        raise TrilaterationFailure("collinear anchors")
    ey = ey_raw.scaled(1.0 / j)
    ez = ex.cross(ey)
    x = (d1 * d1 - d2 * d2 + d12 * d12) / (2.0 * d12)
    rho_sq = d1 * d1 - x * x
    if rho_sq < -tol * tol:
        raise TrilaterationFailure("first two spheres do not intersect")
    rho = math.sqrt(max(rho_sq, 0.0))
    if rho == 0.0:
        candidates = [a1 + ex.scaled(x)]
    else:
        cos_t = (x * x - 2 * x * i + i * i + j * j + rho * rho - d3 * d3) / (2.0 * j * rho)
        cos_t = max(-1.0, min(1.0, cos_t))
        sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
        y = rho * cos_t
        z = rho * sin_t
        base = a1 + ex.scaled(x) + ey.scaled(y)
        candidates = [base + ez.scaled(z), base - ez.scaled(z)]
    best = min(candidates, key=lambda p: (p.dist(localizer_gt), -ez.dot(p - a1)))
    if abs(best.dist(a3) - d3) > tol:
        raise TrilaterationFailure("no point matches the third distance")
    return best


@dataclass
class BaselineResult:
    """Final cloud plus the per-iteration fidelity trace."""

    positions: list[Vec3]
    hd_trace: list[float]
    iterations: int
    failures: int
    skipped: int
    stopped_by_threshold: bool


def initial_error_radius(leg_lengths: Sequence[float], epsilon_deg: float, mode: str) -> float:
    """Dead-reckoning chord bound over the FLS's deployment legs."""
    bounds = [chord_error_bound(l, epsilon_deg) for l in leg_lengths] or [0.0]
    if mode == "worst":
        return max(bounds)
    if mode == "average":
        return sum(bounds) / len(bounds)
    raise ValueError(f"unknown confidence mode: {mode!r}")


def run_baseline(
    cloud_gt: Sequence[Vec3],
    cloud_est: Sequence[Vec3],
    neighbors: Sequence[Sequence[int]],
    error_radii: Sequence[float],
    method: str,
    hd_fn: Callable[[Sequence[Vec3]], float],
    rng: random.Random,
    confidence_mode: str = "worst",
    threshold: float = 0.9,
    max_iters: int | None = None,
    dim: int = 2,
    tol: float = 0.01,
) -> BaselineResult:
    """Iteratively localize the minimum-confidence FLS until every
    confidence clears the threshold or the iteration budget runs out.

    Movement is exact (measurements and flight are assumed perfect); after a
    successful solve the mover's error radius is inherited from its anchors,
    which is how anchor error compounds through the cloud.
    """
    if method not in ("triangulation", "trilateration"):
        raise ValueError(f"unknown baseline method: {method!r}")
    n = len(cloud_gt)
    positions = list(cloud_est)
    radii = list(error_radii)
    if max_iters is None:
        max_iters = 50 * n
    eligible = [len(neighbors[i]) >= 3 for i in range(n)]
    skipped = sum(1 for e in eligible if not e)
    last_localized = [-1] * n

    def conf(i: int) -> float:
        entries = tuple((True, cloud_gt[i].dist(cloud_gt[k])) for k in neighbors[i])
        if not entries:
            return 0.0
        return confidence(ConfidenceInput(radii[i], entries))

    confs = [conf(i) for i in range(n)]
    trace: list[float] = []
    failures = 0
    iterations = 0
    stopped = False
    for it in range(max_iters):
        if min(confs) > threshold:
            stopped = True
            break
        order = sorted(range(n), key=lambda i: (confs[i], last_localized[i], i))
        moved = False
        for f in order:
            if not eligible[f]:
                continue
            picked = rng.sample(list(neighbors[f]), 3)
            anchors_est = [positions[k] for k in picked]
            anchors_gt = [cloud_gt[k] for k in picked]
            try:
                if method == "triangulation":
                    new_pos = triangulate(cloud_gt[f], anchors_est, anchors_gt)
                else:
                    new_pos = trilaterate(cloud_gt[f], anchors_est, anchors_gt, dim=dim, tol=tol)
            except (TriangulationFailure, TrilaterationFailure):
                failures += 1
                continue
            positions[f] = new_pos
            inherited = [radii[k] for k in picked]
            radii[f] = max(inherited) if confidence_mode == "worst" else sum(inherited) / 3
            confs[f] = conf(f)
            last_localized[f] = it
            moved = True
            break
        iterations += 1
        trace.append(hd_fn(positions))
        if not moved:
            break  # nothing left that can localize
    else:
        stopped = min(confs) > threshold
    return BaselineResult(
        positions=positions,
        hd_trace=trace,
        iterations=iterations,
        failures=failures,
        skipped=skipped,
        stopped_by_threshold=stopped,
    )
