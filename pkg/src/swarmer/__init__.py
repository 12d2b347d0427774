"""Swarm-merging localization: protocol library and deterministic simulator.

Flying light specks (FLSs) render a point cloud by repeatedly localizing
relative to one another and merging their swarms.  This package contains the
per-FLS protocol state machine, the two relative-localization plugins, the
simulated lossy broadcast network, the round-based and event-driven engines,
and the triangulation/trilateration comparison baselines.
"""

from swarmer.geometry import (
    PointCloud,
    Vec3,
    DeadReckoningModel,
    dead_reckon,
    hausdorff_raw,
    hd,
    load_cloud,
    save_cloud,
    translate_centroid,
    translate_stochastic,
)

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "Vec3",
    "DeadReckoningModel",
    "dead_reckon",
    "hausdorff_raw",
    "hd",
    "load_cloud",
    "save_cloud",
    "translate_centroid",
    "translate_stochastic",
    "__version__",
]
