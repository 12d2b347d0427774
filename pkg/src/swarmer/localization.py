"""Relative-localization plugins.

Both techniques compute the correction vector V = d - D, where d is the
measured displacement from the localizing FLS to its anchor and D is the
same displacement in the ground truth.  Signal Strength senses d in place;
Physical Movement first flies next to the anchor, paying a long
dead-reckoned leg for a short measured one.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from swarmer.geometry import DeadReckoningModel, Vec3, dead_reckon

PLUGINS = ("ss", "pm")


@dataclass(frozen=True)
class MeasurementNoise:
    """Optional perturbation of the sensed displacement; defaults to ideal."""

    distance_rel_error: float = 0.0
    angle_error_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.distance_rel_error < 0 or self.angle_error_deg < 0:
            raise ValueError("noise magnitudes must be nonnegative")

    @property
    def enabled(self) -> bool:
        return self.distance_rel_error > 0 or self.angle_error_deg > 0


def _perturb(d: Vec3, noise: MeasurementNoise, rng: random.Random, dim: int) -> Vec3:
    if not noise.enabled or d.norm() == 0.0:
        return d
    scale = 1.0 + rng.uniform(-noise.distance_rel_error, noise.distance_rel_error)
    ang = math.radians(rng.uniform(-noise.angle_error_deg, noise.angle_error_deg))
    if dim == 2:
        c, s = math.cos(ang), math.sin(ang)
        rotated = Vec3(d.l * c - d.h * s, d.l * s + d.h * c, d.d)
    else:
        # rotate about a random axis in the plane normal to d
        model = DeadReckoningModel(abs(math.degrees(ang)) % 180.0)
        model.rng = rng
        rotated = dead_reckon(Vec3(), d, model, dim=3) if ang else d
    return rotated.scaled(scale)


def ss_localize(
    localizer_est: Vec3,
    anchor_est: Vec3,
    localizer_gt: Vec3,
    anchor_gt: Vec3,
    noise: MeasurementNoise | None = None,
    rng: random.Random | None = None,
    dim: int = 3,
) -> Vec3:
    """Signal Strength: sense the anchor, correct the relative displacement.

    After moving along the returned V the localizer's displacement to the
    anchor equals the ground-truth displacement, up to measurement noise and
    the dead-reckoning error of the move itself.
    """
    d = anchor_est - localizer_est
    if noise is not None and noise.enabled:
        if rng is None:
            raise ValueError("measurement noise needs an rng")
        d = _perturb(d, noise, rng, dim)
    big_d = anchor_gt - localizer_gt
    return d - big_d


@dataclass(frozen=True)
class PmResult:
    """Outcome of the approach leg plus the correction still to fly."""

    intermediate: Vec3
    v: Vec3
    approach_distance: float


def pm_localize(
    localizer_est: Vec3,
    anchor_est: Vec3,
    localizer_gt: Vec3,
    anchor_gt: Vec3,
    model: DeadReckoningModel,
    standoff: float = 1.0,
    dim: int = 3,
) -> PmResult:
    """Physical Movement: fly next to the anchor, then correct from there.

    The approach leg is dead-reckoned and its full error lands in the final
    position; the believed displacement next to the anchor is the intended
    standoff vector, not a sensed one.  Total travel is the approach leg
    plus |v|, which is why this plugin travels farther than Signal Strength.
    """
    toward = localizer_est - anchor_est
    n = toward.norm()
    if n < 1e-12:
        toward = Vec3(1.0, 0.0, 0.0)  # coincident: approach along a fixed axis
        n = 1.0
    target = anchor_est + toward.scaled(standoff / n)
    intermediate = dead_reckon(localizer_est, target, model, dim)
    believed_d = anchor_est - target
    big_d = anchor_gt - localizer_gt
    v = believed_d - big_d
    return PmResult(
        intermediate=intermediate,
        v=v,
        approach_distance=intermediate.dist(localizer_est),
    )
