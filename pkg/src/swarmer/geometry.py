"""Coordinates, point clouds, the dead-reckoning error model, and
translation-corrected Hausdorff distance.

All lengths are in display cells (one cell is a 5 cm cube); axes are
named L, H, D.  2D clouds live in the d = 0 plane.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ABS_TOL = 1e-9

# Reference axes for building a perpendicular basis in 3D dead reckoning.
# The second axis is the documented fallback when the ideal direction is
# parallel to the first.
_BASIS_SEED = (0.0, 0.0, 1.0)
_BASIS_SEED_ALT = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class Vec3:
    """A point or displacement on the (L, H, D) axes, in display cells."""

    l: float = 0.0
    h: float = 0.0
    d: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.l) and math.isfinite(self.h) and math.isfinite(self.d)):
            raise ValueError(f"non-finite coordinate: ({self.l}, {self.h}, {self.d})")

    def __add__(self, other: Vec3) -> Vec3:
        return Vec3(self.l + other.l, self.h + other.h, self.d + other.d)

    def __sub__(self, other: Vec3) -> Vec3:
        return Vec3(self.l - other.l, self.h - other.h, self.d - other.d)

    def __neg__(self) -> Vec3:
        return Vec3(-self.l, -self.h, -self.d)

    def scaled(self, k: float) -> Vec3:
        return Vec3(self.l * k, self.h * k, self.d * k)

    def dot(self, other: Vec3) -> float:
        return self.l * other.l + self.h * other.h + self.d * other.d

    def cross(self, other: Vec3) -> Vec3:
        return Vec3(
            self.h * other.d - self.d * other.h,
            self.d * other.l - self.l * other.d,
            self.l * other.h - self.h * other.l,
        )

    def norm(self) -> float:
        return math.sqrt(self.l * self.l + self.h * self.h + self.d * self.d)

    def dist(self, other: Vec3) -> float:
        return math.dist((self.l, self.h, self.d), (other.l, other.h, other.d))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.l, self.h, self.d)


@dataclass(frozen=True)
class PointCloud:
    """Ordered, duplicate-free collection of points with a declared dimension."""

    points: tuple[Vec3, ...]
    dim: int

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError("empty point cloud")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.dim == 2 and any(p.d != 0.0 for p in self.points):
            raise ValueError("2D cloud contains points with d != 0")
        if len(set(p.as_tuple() for p in self.points)) != len(self.points):
            raise ValueError("duplicate points in cloud")

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def _array(self) -> np.ndarray:
        arr = np.array([p.as_tuple() for p in self.points], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    def as_array(self) -> np.ndarray:
        """(n, 3) float64 view of the points; read-only."""
        return self._array

    def centroid(self) -> Vec3:
        c = self._array.mean(axis=0)
        return Vec3(float(c[0]), float(c[1]), float(c[2]))

    def translated(self, v: Vec3) -> PointCloud:
        return PointCloud(tuple(p + v for p in self.points), self.dim)


@dataclass
class DeadReckoningModel:
    """Bounded angular flight error: every leg deviates by at most epsilon."""

    epsilon_deg: float
    rng_seed: int = 0
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon_deg < 180.0:
            raise ValueError(f"epsilon must be in [0, 180), got {self.epsilon_deg}")
        self.rng = random.Random(self.rng_seed)


def _perp_basis(u: Vec3) -> tuple[Vec3, Vec3]:
    # Orthonormal pair perpendicular to u; falls back to the alternate seed
    # axis when u is parallel to the primary one.
    seed = Vec3(*_BASIS_SEED)
    p1 = seed.cross(u)
    if p1.norm() < 1e-12:
        seed = Vec3(*_BASIS_SEED_ALT)
        p1 = seed.cross(u)
    p1 = p1.scaled(1.0 / p1.norm())
    p2 = u.cross(p1)
    return p1, p2


def dead_reckon(start: Vec3, intended_dest: Vec3, model: DeadReckoningModel, dim: int = 3) -> Vec3:
    """Fly from start toward intended_dest with bounded angular error.

    The returned endpoint is at exactly the intended travel length from
    start; only the direction is perturbed.  In 2D the direction is rotated
    in the L-H plane by a uniform draw in [-epsilon, +epsilon].  In 3D the
    same draw tilts the direction inside a plane whose roll around the ideal
    axis is a second uniform draw in [0, 2*pi).  Zero-length travel returns
    start unchanged without consuming any draws.
    """
    if start == intended_dest:
        return start
    ideal = intended_dest - start
    length = ideal.norm()
    if length == 0.0:  # components too small to square without underflow
        return start
    u = ideal.scaled(1.0 / length)
    eps = math.radians(model.epsilon_deg)
    delta = model.rng.uniform(-eps, eps)
    if delta == 0.0:
        if dim == 3:
            model.rng.uniform(0.0, 2.0 * math.pi)
        return intended_dest
    if dim == 2:
        c, s = math.cos(delta), math.sin(delta)
        v = Vec3(u.l * c - u.h * s, u.l * s + u.h * c, u.d)
    else:
        theta = model.rng.uniform(0.0, 2.0 * math.pi)
        p1, p2 = _perp_basis(u)
        tilt = p1.scaled(math.cos(theta)) + p2.scaled(math.sin(theta))
        v = u.scaled(math.cos(delta)) + tilt.scaled(math.sin(delta))
    return start + v.scaled(length)


def chord_error_bound(length: float, epsilon_deg: float) -> float:
    """Upper bound on |endpoint - intended| for one dead-reckoned leg."""
    return 2.0 * length * math.sin(math.radians(epsilon_deg) / 2.0)


def _as_arrays(e: PointCloud, g: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    if e.dim != g.dim:
        raise ValueError(f"dimension mismatch: {e.dim} vs {g.dim}")
    return e.as_array(), g.as_array()


def hausdorff_arrays(e: np.ndarray, g: np.ndarray) -> float:
    """Hausdorff distance between two (n, 3) coordinate arrays, no translation."""
    if len(e) == 0 or len(g) == 0:
        raise ValueError("empty point cloud")
    diff = e[:, None, :] - g[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=-1))
    return float(max(dmat.min(axis=1).max(), dmat.min(axis=0).max()))


def hausdorff_raw(e: PointCloud, g: PointCloud) -> float:
    """Max over both directed max-min distance sets; symmetric, zero iff equal sets."""
    ea, ga = _as_arrays(e, g)
    return hausdorff_arrays(ea, ga)


def translate_centroid(e: PointCloud, g: PointCloud) -> Vec3:
    """Translation vector moving E's centroid onto G's centroid."""
    if len(e) != len(g):
        raise ValueError(f"cloud size mismatch: {len(e)} vs {len(g)}")
    return g.centroid() - e.centroid()


def stochastic_offset_arrays(
    e: np.ndarray,
    g: np.ndarray,
    assignment: Sequence[int],
    rng: random.Random,
    r: int = 90,
) -> np.ndarray:
    """Minimum-residual candidate translation over r sampled points.

    Each sampled point i proposes the vector that puts it exactly on its
    assigned counterpart; the proposal whose application leaves the sampled
    set with the smallest summed residual wins.  Ties go to the lowest
    sampled index.
    """
    n = len(e)
    if n <= r:
        idx = list(range(n))
    else:
        idx = sorted(rng.sample(range(n), r))
    w = e[idx] - g[np.asarray(assignment)[idx]]
    # residual of candidate i is sum_j |w_j - w_i|: row sums of the pairwise
    # distance matrix of the error vectors.
    diff = w[:, None, :] - w[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=-1))
    k = int(np.argmin(dmat.sum(axis=1)))
    return -w[k]


def translate_stochastic(
    e: PointCloud,
    g: PointCloud,
    assignment: Sequence[int] | None = None,
    r: int = 90,
    rng: random.Random | None = None,
) -> Vec3:
    """Stochastic translation: best of r per-point candidate vectors."""
    if len(e) != len(g):
        raise ValueError(f"cloud size mismatch: {len(e)} vs {len(g)}")
    if assignment is None:
        assignment = range(len(e))
    if rng is None:
        rng = random.Random(0)
    ea, ga = _as_arrays(e, g)
    off = stochastic_offset_arrays(ea, ga, list(assignment), rng, r)
    return Vec3(float(off[0]), float(off[1]), float(off[2]))


def hd(
    e: PointCloud,
    g: PointCloud,
    assignment: Sequence[int] | None = None,
    method: str = "centroid",
    rng: random.Random | None = None,
    r: int = 90,
) -> float:
    """Hausdorff distance after the selected translation; inputs untouched."""
    if method == "centroid":
        t = translate_centroid(e, g)
    elif method == "stochastic":
        t = translate_stochastic(e, g, assignment, r=r, rng=rng)
    else:
        raise ValueError(f"unknown translation method: {method!r}")
    ea, ga = _as_arrays(e, g)
    return hausdorff_arrays(ea + np.array(t.as_tuple()), ga)


def _parse_point_line(line: str, lineno: int) -> Vec3:
    parts = line.split()
    if len(parts) == 2:
        parts = parts + ["0"]
    if len(parts) != 3:
        raise ValueError(f"line {lineno}: expected 2 or 3 columns, got {len(parts)}")
    try:
        return Vec3(float(parts[0]), float(parts[1]), float(parts[2]))
    except ValueError as exc:
        raise ValueError(f"line {lineno}: {exc}") from exc


def read_points(path: str | Path) -> list[Vec3]:
    """Parse the point-cloud text format: one 'L H D' per line, '#' comments.

    Duplicates are kept; callers decide whether to reject or drop them.
    """
    points: list[Vec3] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            points.append(_parse_point_line(line, lineno))
    return points


def cloud_from_points(points: Iterable[Vec3], dedup: bool = False) -> PointCloud:
    """Build a cloud, inferring dim 2 when every point lies in the d = 0 plane."""
    pts = list(points)
    if dedup:
        seen: dict[tuple[float, float, float], None] = {}
        for p in pts:
            seen.setdefault(p.as_tuple(), None)
        pts = [Vec3(*t) for t in seen]
    dim = 2 if all(p.d == 0.0 for p in pts) else 3
    return PointCloud(tuple(pts), dim)


def load_cloud(path: str | Path, dedup: bool = False) -> PointCloud:
    """Read a point-cloud file; raises on duplicates unless dedup is set."""
    return cloud_from_points(read_points(path), dedup=dedup)


def save_cloud(points: Iterable[Vec3], path: str | Path) -> None:
    """Write points in the text format; floats use shortest round-trip form."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in points:
            fh.write(f"{p.l!r} {p.h!r} {p.d!r}\n")
