"""Command-line front end: run simulations, compare against the baseline
localizers, generate synthetic fixture clouds, and validate cloud files.

Exit codes: 0 success, 1 validation warnings, 2 bad configuration or
arguments, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import random
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from swarmer import baselines, engine, geometry
from swarmer.engine import ConfigError, RunConfig
from swarmer.geometry import PointCloud, Vec3

EXIT_OK = 0
EXIT_WARNINGS = 1
EXIT_CONFIG = 2
EXIT_IO = 3

log = logging.getLogger("swarmer")

GEN_KINDS = ("grid", "line", "ring", "blob")
_BASE = (10.0, 10.0)  # L, H offset of generated shapes; 3D shapes sit at d >= 10


def gen_cloud(kind: str, n: int, dim: int = 2, spacing: float = 1.0, seed: int = 0) -> PointCloud:
    """Deterministic synthetic clouds used as desk-scale test shapes."""
    if kind not in GEN_KINDS:
        raise ValueError(f"unknown cloud kind: {kind!r}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    bl, bh = _BASE
    bd = 10.0 if dim == 3 else 0.0
    pts: list[Vec3] = []
    if kind == "line":
        pts = [Vec3(bl + i * spacing, bh, bd) for i in range(n)]
    elif kind == "grid":
        if dim == 2:
            side = math.ceil(math.sqrt(n))
            pts = [
                Vec3(bl + (i % side) * spacing, bh + (i // side) * spacing, bd)
                for i in range(n)
            ]
        else:
            side = math.ceil(n ** (1.0 / 3.0))
            pts = [
                Vec3(
                    bl + (i % side) * spacing,
                    bh + ((i // side) % side) * spacing,
                    bd + (i // (side * side)) * spacing,
                )
                for i in range(n)
            ]
    elif kind == "ring":
        radius = spacing * n / (2.0 * math.pi)
        cl, ch = bl + radius, bh + radius
        pts = [
            Vec3(
                cl + radius * math.cos(2.0 * math.pi * i / n),
                ch + radius * math.sin(2.0 * math.pi * i / n),
                bd,
            )
            for i in range(n)
        ]
    else:  # blob: uniform ball (disc in 2D) at unit density per spacing cell
        rng = random.Random(seed)
        if dim == 2:
            radius = spacing * math.sqrt(n / math.pi)
        else:
            radius = spacing * (3.0 * n / (4.0 * math.pi)) ** (1.0 / 3.0)
        center = (bl + radius, bh + radius, bd + (radius if dim == 3 else 0.0))
        seen: set[tuple[float, float, float]] = set()
        while len(seen) < n:
            g = [rng.gauss(0.0, 1.0) for _ in range(dim)]
            norm = math.sqrt(sum(x * x for x in g)) or 1.0
            r = radius * rng.random() ** (1.0 / dim)
            coords = [center[k] + g[k] / norm * r for k in range(dim)]
            if dim == 2:
                coords.append(0.0)
            seen.add((round(coords[0], 6), round(coords[1], 6), round(coords[2], 6)))
        pts = [Vec3(*t) for t in sorted(seen)]
    return geometry.cloud_from_points(pts)


# ------------------------------------------------------------------ helpers


def _write_summary(summary: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in summary.items():
            if isinstance(value, list):
                value = len(value)
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{key} = {value}\n")


def _write_trace(rows: list[float], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("iteration", "hd"))
        for i, hd in enumerate(rows):
            writer.writerow((i, repr(hd)))


def _overrides(args) -> list[str]:
    ov = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        ov.append(f"seed={args.seed}")
    return ov


# --------------------------------------------------------------- subcommands


def cmd_run(args) -> int:
    cfg = engine.load_config(args.config, overrides=_overrides(args))
    if not cfg.cloud_path:
        raise ConfigError("cloud_path is not set")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud = geometry.load_cloud(cfg.cloud_path, dedup=True)
    log.info("running %s mode on %d points", cfg.mode, len(cloud))
    if cfg.mode == "rounds":
        result = engine.run_rounds(cfg, cloud)
    else:
        result = engine.run_events(cfg, cloud)
    engine.emit_metrics(result.rows, out / "metrics.csv")
    for idx, (_, points) in enumerate(result.snapshots):
        engine.emit_snapshot(points, idx, out)
    _write_summary(result.summary, out / "summary.txt")
    log.info("final hd %.6f (%s)", result.summary["final_hd"], result.status)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = engine.load_config(args.config, overrides=_overrides(args))
    if not cfg.cloud_path:
        raise ConfigError("cloud_path is not set")
    cloud = geometry.load_cloud(cfg.cloud_path, dedup=True)
    if cloud.dim != 2:
        raise ConfigError("compare needs a 2D cloud (triangulation is 2D-only)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    swarmer_cfg = engine.parse_config_items([], base=cfg)
    swarmer_cfg.mode = "rounds"
    swarmer_cfg.localizer = "ss"
    result = engine.run_rounds(swarmer_cfg, cloud)
    _write_trace([r.hd for r in result.rows], out / "hd_swarmer.csv")

    # the baselines start from the exact same deployment
    agents = engine.provision(cloud, cfg)
    est = [a.state.est_coord for a in agents]
    gt = list(cloud.points)
    neighbors = [sorted(f - 1 for f in a.state.known_neighbors) for a in agents]
    radii = [
        baselines.initial_error_radius(a.deploy_legs, cfg.epsilon_deg, cfg.confidence_mode)
        for a in agents
    ]
    g_arr = cloud.as_array()
    hd_rng = engine.substream(cfg.seed, "hd-baseline")
    method_t = cfg.translation_method

    def hd_fn(points) -> float:
        e = np.array([p.as_tuple() for p in points])
        if method_t == "centroid":
            t = g_arr.mean(axis=0) - e.mean(axis=0)
        else:
            t = geometry.stochastic_offset_arrays(e, g_arr, list(range(len(points))), hd_rng)
        return geometry.hausdorff_arrays(e + t, g_arr)

    summary = {
        "cloud": cfg.cloud_path,
        "points": len(cloud),
        "seed": cfg.seed,
        "swarmer_final_hd": result.summary["final_hd"],
        "swarmer_rounds": result.summary["rounds"],
    }
    for method in ("triangulation", "trilateration"):
        res = baselines.run_baseline(
            cloud_gt=gt,
            cloud_est=list(est),
            neighbors=neighbors,
            error_radii=list(radii),
            method=method,
            hd_fn=hd_fn,
            rng=engine.substream(cfg.seed, f"baseline-{method}"),
            confidence_mode=cfg.confidence_mode,
            threshold=cfg.confidence_threshold,
            max_iters=cfg.max_iters or None,
            dim=2,
            tol=cfg.baseline_tol,
        )
        trace = res.hd_trace or [hd_fn(est)]
        _write_trace(trace, out / f"hd_{method}.csv")
        summary[f"{method}_final_hd"] = trace[-1]
        summary[f"{method}_iterations"] = res.iterations
        summary[f"{method}_failures"] = res.failures
        summary[f"{method}_skipped"] = res.skipped
    best = min(("swarmer", "triangulation", "trilateration"),
               key=lambda m: summary[f"{m}_final_hd"])
    summary["best_method"] = best
    _write_summary(summary, out / "compare_summary.txt")
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        cloud = gen_cloud(args.kind, args.n, args.dim, args.spacing, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    geometry.save_cloud(cloud.points, args.out)
    log.info("wrote %d points to %s", len(cloud), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        points = geometry.read_points(args.path)
    except OSError as exc:
        print(f"unreadable: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"malformed: {exc}")
        return EXIT_CONFIG
    if not points:
        print("malformed: empty point cloud")
        return EXIT_CONFIG
    unique = {p.as_tuple() for p in points}
    dupes = len(points) - len(unique)
    dims = 2 if all(p.d == 0.0 for p in points) else 3
    print(f"{len(points)} points, dim {dims}")
    if dupes:
        print(f"{dupes} duplicates (removed on load)")
        return EXIT_WARNINGS
    print("clean")
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmer",
        description="Swarm-merging localization simulator",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="run a simulation from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--set", action="append", metavar="KEY=VALUE", default=[])
    run.add_argument("--out", default="out")
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare against triangulation and trilateration")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--set", action="append", metavar="KEY=VALUE", default=[])
    cmp_.add_argument("--out", default="out")
    cmp_.add_argument("--seed", type=int, default=None)
    cmp_.set_defaults(func=cmd_compare)

    gen = sub.add_parser("gen", help="generate a synthetic point cloud")
    gen.add_argument("--kind", required=True, choices=GEN_KINDS)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--dim", type=int, default=2, choices=(2, 3))
    gen.add_argument("--spacing", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    val = sub.add_parser("validate", help="check a point-cloud file")
    val.add_argument("path")
    val.set_defaults(func=cmd_validate)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SWARMER_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
