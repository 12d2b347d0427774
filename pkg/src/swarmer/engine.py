"""Simulation engines: deployment, the synchronous round loop, the
discrete-event loop with leases/thaw/failures, and metrics emission.

Both engines are fully deterministic for a fixed RunConfig: every random
draw flows through a named substream derived from the run seed, and event
ordering is a total order.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from swarmer import geometry, localization, netsim, protocol
from swarmer.geometry import DeadReckoningModel, PointCloud, Vec3, dead_reckon
from swarmer.localization import MeasurementNoise, pm_localize, ss_localize
from swarmer.netsim import LossModel, Medium, RadioConfig, dedup_filter, wrapper_filter
from swarmer.protocol import (
    AnchorCandidate,
    AnchorPolicy,
    DeclineReason,
    Discovered,
    FlsState,
    LeaseConfig,
    Message,
    MsgKind,
    Role,
    Status,
    accepts_challenge,
    apply_move_and_rejoin,
    complete_localization,
    draw_thaw_deadline,
    expire_leases,
    grant_lease,
    issue_challenge,
    on_deploy,
    pick_join_target,
    rank_foreign_swarms,
    release_lease,
    renew_lease,
    select_anchor,
    thaw_reset,
    update_r_complete,
)

REPLACEMENT_DISPATCH_DELAY_S = 2.0
HD_SAMPLE_PERIOD_S = 0.25
HD_CONVERGED_FLOOR = 0.001


class ConfigError(Exception):
    """Bad run configuration; the message names the offending key."""


@dataclass(frozen=True)
class VelocityProfile:
    v_max: float = 3.0   # m/s
    a_max: float = 3.0   # m/s^2

    def __post_init__(self) -> None:
        if self.v_max <= 0 or self.a_max <= 0:
            raise ConfigError("velocity profile values must be positive")


def travel_time(distance_cells: float, profile: VelocityProfile, cell_size_m: float) -> float:
    """Trapezoidal (or triangular) profile time to cover a distance,
    arriving at zero speed."""
    if distance_cells < 0:
        raise ValueError("distance must be nonnegative")
    d = distance_cells * cell_size_m
    if d == 0.0:
        return 0.0
    d_ramp = profile.v_max**2 / profile.a_max  # accel + decel distance
    if d >= d_ramp:
        return 2.0 * profile.v_max / profile.a_max + (d - d_ramp) / profile.v_max
    return 2.0 * math.sqrt(d / profile.a_max)


@dataclass
class RunConfig:
    """Flat run configuration; file keys match the field names below
    (dotted keys map into the nested models)."""

    cloud_path: str = ""
    epsilon_deg: float = 5.0
    m: float = math.inf
    eta: int = 5
    anchor_policy: str = "lowest_swarm_id"
    localizer: str = "ss"
    translation: str = ""          # empty: stochastic in rounds, centroid in events
    mode: str = "rounds"
    lambda_ms: float = 500.0
    lease_delta_s: float = 1.0
    thaw: str = "auto"             # "auto" (H = log2 F) or a fixed H in seconds
    loss_mode: str = "none"
    loss_rate: float = 0.0
    radio_default: float = 4.0
    radio_max: float = 4096.0
    latency_ms: float = 1.0
    failure_rate_per_fls_per_s: float = 0.0
    hd_stop_threshold: float = 0.09
    round_limit: int = 60
    duration_s: float = 120.0
    seed: int = 1
    dispatcher_origin: Vec3 = field(default_factory=Vec3)
    velocity_v_max: float = 3.0
    velocity_a_max: float = 3.0
    cell_size_m: float = 0.05
    oracle_mode: bool = False
    placement: str = "deploy"
    move_threshold: float = 0.01
    r_complete_tol: float = 0.25
    neighbor_k: int = 0            # 0: max(eta + 2, 8)
    pm_standoff: float = 1.0
    renew_fraction: float = 0.5
    noise_distance_rel: float = 0.0
    noise_angle_deg: float = 0.0
    confidence_mode: str = "worst"
    confidence_threshold: float = 0.9
    max_iters: int = 0             # 0: 50 * F
    baseline_tol: float = 0.01

    def validate(self) -> None:
        if self.mode not in ("rounds", "events"):
            raise ConfigError(f"mode must be rounds or events, got {self.mode!r}")
        if self.m < 2:
            raise ConfigError("m must be at least 2")
        if self.hd_stop_threshold <= 0:
            raise ConfigError("hd_stop_threshold must be positive")
        if self.mode == "events" and self.lambda_ms <= 0:
            raise ConfigError("lambda_ms must be positive in event mode")
        if self.localizer not in localization.PLUGINS:
            raise ConfigError(f"localizer must be one of {localization.PLUGINS}")
        if self.translation not in ("", "centroid", "stochastic"):
            raise ConfigError(f"unknown translation: {self.translation!r}")
        if self.placement not in ("deploy", "random"):
            raise ConfigError(f"placement must be deploy or random, got {self.placement!r}")
        if self.anchor_policy not in [p.value for p in AnchorPolicy]:
            raise ConfigError(f"unknown anchor_policy: {self.anchor_policy!r}")
        if self.thaw != "auto":
            try:
                if float(self.thaw) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError("thaw must be 'auto' or a positive number of seconds")
        try:
            LossModel(self.loss_mode, self.loss_rate)
            RadioConfig(self.radio_default, self.radio_max)
            VelocityProfile(self.velocity_v_max, self.velocity_a_max)
            LeaseConfig(self.lease_delta_s, self.renew_fraction)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- resolved accessors ----------------------------------------------

    @property
    def translation_method(self) -> str:
        if self.translation:
            return self.translation
        return "stochastic" if self.mode == "rounds" else "centroid"

    @property
    def policy(self) -> AnchorPolicy:
        return AnchorPolicy(self.anchor_policy)

    @property
    def fixed_thaw_h(self) -> Optional[float]:
        return None if self.thaw == "auto" else float(self.thaw)

    def neighbor_count(self) -> int:
        return self.neighbor_k if self.neighbor_k > 0 else max(self.eta + 2, 8)

    def velocity(self) -> VelocityProfile:
        return VelocityProfile(self.velocity_v_max, self.velocity_a_max)

    def lease_cfg(self) -> LeaseConfig:
        return LeaseConfig(self.lease_delta_s, self.renew_fraction)

    def noise(self) -> Optional[MeasurementNoise]:
        n = MeasurementNoise(self.noise_distance_rel, self.noise_angle_deg)
        return n if n.enabled else None


# Config file keys: dotted aliases keep the wire-facing names stable.
_KEY_ALIASES = {
    "loss.mode": "loss_mode",
    "loss.rate": "loss_rate",
    "radio.default": "radio_default",
    "radio.max": "radio_max",
    "velocity.v_max": "velocity_v_max",
    "velocity.a_max": "velocity_a_max",
}

_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _parse_value(field_name: str, raw: str, lineno: int):
    ftype = {f.name: f.type for f in fields(RunConfig)}[field_name]
    raw = raw.strip()
    try:
        if field_name == "dispatcher_origin":
            parts = [float(x) for x in raw.split(",")]
            if len(parts) == 2:
                parts.append(0.0)
            if len(parts) != 3:
                raise ValueError("expected 'L,H,D'")
            return Vec3(*parts)
        if field_name == "m":
            return math.inf if raw.lower() in ("inf", "infinity") else float(int(raw))
        if field_name == "thaw":
            return raw
        if ftype in ("bool",):
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(f"expected a boolean, got {raw!r}")
            return _BOOL_WORDS[raw.lower()]
        if ftype in ("int",):
            return int(raw)
        if ftype in ("float",):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {field_name!r} on line {lineno}: {exc}") from exc


def parse_config_items(items: Iterable[tuple[str, str, int]], base: RunConfig | None = None) -> RunConfig:
    """Apply (key, value, lineno) pairs on top of defaults; last wins."""
    cfg = base or RunConfig()
    valid = {f.name for f in fields(RunConfig)}
    for key, value, lineno in items:
        name = _KEY_ALIASES.get(key, key)
        if name not in valid:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        setattr(cfg, name, _parse_value(name, value, lineno))
    return cfg


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> RunConfig:
    """Read a flat key = value file, then apply KEY=VALUE overrides in order."""
    items: list[tuple[str, str, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value' on line {lineno}: {line!r}")
            key, _, value = line.partition("=")
            items.append((key.strip(), value.strip(), lineno))
    for n, ov in enumerate(overrides, start=1):
        if "=" not in ov:
            raise ConfigError(f"override {n} is not KEY=VALUE: {ov!r}")
        key, _, value = ov.partition("=")
        items.append((key.strip(), value.strip(), 0))
    cfg = parse_config_items(items)
    cfg.validate()
    return cfg


def substream(seed: int, name: str) -> random.Random:
    """Independent deterministic rng stream for one subsystem."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


# ---------------------------------------------------------------- metrics


METRIC_COLUMNS = (
    "round_or_time",
    "hd",
    "swarm_count",
    "localizing_min",
    "localizing_avg",
    "localizing_max",
    "anchor_count",
    "merged_swarms_per_anchor_min",
    "merged_swarms_per_anchor_avg",
    "merged_swarms_per_anchor_max",
    "dist_localizing",
    "dist_swarm_follow",
    "dist_total",
    "bytes_tx",
    "localizations",
    "anchors_served",
    "thawed_swarms",
    "leases_expired",
)


@dataclass
class RoundMetrics:
    """One trace row; counter fields cover the round (or sample window)."""

    round_or_time: float
    hd: float
    swarm_count: int
    localizing_min: int = 0
    localizing_avg: float = 0.0
    localizing_max: int = 0
    anchor_count: int = 0
    merged_swarms_per_anchor_min: int = 0
    merged_swarms_per_anchor_avg: float = 0.0
    merged_swarms_per_anchor_max: int = 0
    dist_localizing: float = 0.0
    dist_swarm_follow: float = 0.0
    bytes_tx: int = 0
    localizations: int = 0
    anchors_served: int = 0
    thawed_swarms: int = 0
    leases_expired: int = 0

    @property
    def dist_total(self) -> float:
        return self.dist_localizing + self.dist_swarm_follow

    def as_row(self) -> list:
        return [getattr(self, c) if c != "dist_total" else self.dist_total for c in METRIC_COLUMNS]


def _stats(values: Sequence[int]) -> tuple[int, float, int]:
    if not values:
        return 0, 0.0, 0
    return min(values), sum(values) / len(values), max(values)


def emit_metrics(rows: Sequence[RoundMetrics], path: str | Path) -> None:
    """RFC-4180 CSV with the declared column order; header always present."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row.as_row()])


def emit_snapshot(points: Sequence[Vec3], index: int, out_dir: str | Path) -> Path:
    path = Path(out_dir) / f"snap_{index:04d}.xyz"
    geometry.save_cloud(points, path)
    return path


@dataclass
class RunResult:
    rows: list[RoundMetrics]
    summary: dict
    snapshots: list[tuple[str, list[Vec3]]]
    states: list[FlsState]
    status: str


# ----------------------------------------------------------- provisioning


@dataclass
class Agent:
    """One FLS inside an engine: protocol state plus runtime bookkeeping."""

    state: FlsState
    cloud_index: int
    alive: bool = True
    deploy_legs: list[float] = field(default_factory=list)
    # event-mode runtime
    orders: deque = field(default_factory=deque)
    flying: bool = False
    flight_token: int = 0
    pending_challenge: Optional[tuple[int, int]] = None  # (msg_id, target fid)
    thaw_deadline: float = 0.0
    busy_mark: int = 0
    last_thaw_seen: float = -math.inf


def provision(cloud: PointCloud, config: RunConfig) -> list[Agent]:
    """Deploy every FLS: dead-reckoned (or random) initial position, a swarm
    of one, and the k nearest ground-truth neighbors preloaded."""
    model = DeadReckoningModel(config.epsilon_deg, substream(config.seed, "deploy").getrandbits(63))
    place_rng = substream(config.seed, "placement")
    pts = cloud.points
    n = len(pts)
    arr = cloud.as_array()
    k = min(config.neighbor_count(), n - 1)
    # neighbor table from ground-truth distances
    diff = arr[:, None, :] - arr[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=-1))
    order = np.argsort(dmat, axis=1, kind="stable")
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    agents: list[Agent] = []
    for i in range(n):
        fid = i + 1
        gt = pts[i]
        if config.placement == "random":
            est = Vec3(
                place_rng.uniform(lo[0], hi[0]),
                place_rng.uniform(lo[1], hi[1]),
                place_rng.uniform(lo[2], hi[2]) if cloud.dim == 3 else 0.0,
            )
            legs = [0.0]
        else:
            est = dead_reckon(config.dispatcher_origin, gt, model, cloud.dim)
            legs = [gt.dist(config.dispatcher_origin)]
        st = FlsState(
            fid=fid,
            gt_coord=gt,
            est_coord=est,
            eta=config.eta,
            oracle_source=(config.oracle_mode and fid == 1),
        )
        neighbors = {}
        for j in order[i]:
            j = int(j)
            if j == i:
                continue
            neighbors[j + 1] = pts[j]
            if len(neighbors) >= k:
                break
        st.known_neighbors = neighbors
        on_deploy(st)
        agents.append(Agent(state=st, cloud_index=i, deploy_legs=legs))
    return agents


def measure_hd(
    agents: Sequence[Agent],
    cloud: PointCloud,
    method: str,
    rng: random.Random,
    r: int = 90,
) -> float:
    """Observer-side fidelity: translation fitted over live FLSs, raw
    Hausdorff against the full ground truth (dark points included)."""
    live = [a for a in agents if a.alive]
    if not live:
        return math.inf
    e = np.array([a.state.est_coord.as_tuple() for a in live])
    g_all = cloud.as_array()
    g_matched = g_all[[a.cloud_index for a in live]]
    if method == "centroid":
        t = g_matched.mean(axis=0) - e.mean(axis=0)
    else:
        t = geometry.stochastic_offset_arrays(e, g_matched, list(range(len(live))), rng, r)
    return geometry.hausdorff_arrays(e + t, g_all)


def _localize_legs(
    agent: Agent,
    anchor: Agent,
    config: RunConfig,
    model: DeadReckoningModel,
    noise_rng: random.Random,
    dim: int,
) -> tuple[Vec3, list[Vec3], float]:
    """Plugin dispatch: correction vector, flight waypoints, total distance.

    Waypoints are the successive dead-reckoned endpoints of the localizing
    FLS itself; its swarm only ever follows the correction vector.
    """
    st, an = agent.state, anchor.state
    if config.localizer == "pm":
        res = pm_localize(st.est_coord, an.est_coord, st.gt_coord, an.gt_coord,
                          model, config.pm_standoff, dim)
        waypoints = [res.intermediate]
        dist = res.approach_distance
        if res.v.norm() > config.move_threshold:
            final = dead_reckon(res.intermediate, res.intermediate + res.v, model, dim)
            waypoints.append(final)
            dist += final.dist(res.intermediate)
        return res.v, waypoints, dist
    v = ss_localize(st.est_coord, an.est_coord, st.gt_coord, an.gt_coord,
                    config.noise(), noise_rng, dim)
    if v.norm() <= config.move_threshold:
        return v, [], 0.0
    final = dead_reckon(st.est_coord, st.est_coord + v, model, dim)
    return v, [final], final.dist(st.est_coord)


def _gt_bearing(st: FlsState, anchor: FlsState) -> float:
    d = anchor.gt_coord - st.gt_coord
    return math.atan2(d.h, d.l)


# ------------------------------------------------------------ round engine


@dataclass
class _Group:
    """One merge transaction: the anchor swarm plus its localizing parties."""

    anchor_swarm: int
    parties: set[int]
    pairings: list[tuple[int, int, int]]  # (loc swarm, loc rep fid, anchor fid)


class RoundEngine:
    """Synchronous simulator: each round every available, not-yet-complete
    FLS challenges in FID order; merges then resolve in issue order."""

    def __init__(self, config: RunConfig, cloud: PointCloud | None = None):
        config.validate()
        self.config = config
        self.cloud = cloud or geometry.load_cloud(config.cloud_path, dedup=True)
        self.dim = self.cloud.dim
        self.agents = provision(self.cloud, config)
        self.by_fid = {a.state.fid: a for a in self.agents}
        self.model = DeadReckoningModel(
            config.epsilon_deg, substream(config.seed, "protocol-moves").getrandbits(63)
        )
        self.policy_rng = substream(config.seed, "policy")
        self.hd_rng = substream(config.seed, "hd")
        self.noise_rng = substream(config.seed, "noise")
        arr = self.cloud.as_array()
        diff = arr[:, None, :] - arr[None, :, :]
        self.dmat = np.sqrt((diff * diff).sum(axis=-1))
        self.radio = RadioConfig(config.radio_default, min(config.radio_max, 1e9))
        self.oracle_fid = 1 if config.oracle_mode else None
        self.lease_cfg = config.lease_cfg()
        self.oracle_positions: list[Vec3] = []

    # -- helpers ---------------------------------------------------------

    def _swarm_sizes(self) -> Counter:
        return Counter(a.state.swarm_id for a in self.agents)

    def _members_of(self, swarm_id: int) -> list[Agent]:
        return [a for a in self.agents if a.state.swarm_id == swarm_id]

    def _discover(self, agent: Agent) -> tuple[list[Agent], bool]:
        """Expand through the radio schedule until a foreign swarm appears.

        Returns the agents inside the final range and whether any of them is
        foreign; without foreign FLSs the sweep stops at max range.
        """
        row = self.dmat[agent.cloud_index]
        swarm = agent.state.swarm_id
        foreign_dists = [
            row[a.cloud_index]
            for a in self.agents
            if a.state.swarm_id != swarm and a is not agent
        ]
        if foreign_dists and min(foreign_dists) <= self.radio.max_range:
            need = min(foreign_dists)
            rng_used = next(r for r in self.radio.expand_schedule if r >= need)
            found = True
        else:
            rng_used = self.radio.max_range
            found = False
        in_range = [
            a for a in self.agents
            if a is not agent and row[a.cloud_index] <= rng_used
        ]
        return in_range, found

    def _refresh_oracle_flags(self) -> None:
        if self.oracle_fid is None:
            return
        oracle_swarm = self.by_fid[self.oracle_fid].state.swarm_id
        for a in self.agents:
            a.state.oracle = a.state.swarm_id == oracle_swarm

    # -- one round -------------------------------------------------------

    def _challenge_phase(self, metrics: RoundMetrics) -> list[_Group]:
        groups: list[_Group] = []
        group_of: dict[int, _Group] = {}
        sizes = self._swarm_sizes()
        cfg = self.config
        for fid in sorted(self.by_fid):
            agent = self.by_fid[fid]
            st = agent.state
            if st.status is not Status.AVAILABLE or st.r_complete:
                continue
            in_range, found = self._discover(agent)
            observed = [(a.state.fid, a.state.swarm_id, a.state.est_coord) for a in in_range]
            if update_r_complete(st, observed, cfg.r_complete_tol):
                continue
            if not found:
                continue
            foreign = [
                Discovered(a.state.fid, a.state.swarm_id, a.state.status, a.state.role)
                for a in in_range
                if a.state.swarm_id != st.swarm_id
            ]
            foreign.sort(key=lambda d: d.fid)
            available = [d for d in foreign if self.by_fid[d.fid].state.status is Status.AVAILABLE]
            if available:
                targets = issue_challenge(st, available, cfg.m, cfg.policy, self.policy_rng, sizes)
                if not targets:
                    continue
                challenge = st.new_message(MsgKind.CHALLENGE, targets=tuple(targets))
                metrics.bytes_tx += challenge.wire_size()
                cands = [
                    AnchorCandidate(fid, st.swarm_id, sizes[st.swarm_id], st.oracle, True)
                ]
                for t in targets:
                    ts = self.by_fid[t].state
                    accept = ts.new_message(MsgKind.CHALLENGE_ACCEPT, role=Role.NONE,
                                            in_reply_to=challenge.msg_id)
                    metrics.bytes_tx += accept.wire_size()
                    cands.append(
                        AnchorCandidate(t, ts.swarm_id, sizes[ts.swarm_id], ts.oracle, False)
                    )
                anchor = select_anchor(cands, cfg.policy, self.policy_rng)
                group = _Group(anchor_swarm=anchor.swarm_id, parties={c.swarm_id for c in cands},
                               pairings=[])
                for c in cands:
                    if c.swarm_id != anchor.swarm_id:
                        group.pairings.append((c.swarm_id, c.fid, anchor.fid))
                    self._set_party_busy(c.swarm_id,
                                         Role.ANCHOR if c.swarm_id == anchor.swarm_id
                                         else Role.LOCALIZING, metrics)
                    group_of[c.swarm_id] = group
                groups.append(group)
            else:
                # every foreign FLS in range is busy; a busy anchor with a
                # lower swarm id may still take this swarm into its group
                joinable = [
                    d for d in foreign
                    if self.by_fid[d.fid].state.role is Role.ANCHOR
                    and d.swarm_id < st.swarm_id
                    and d.swarm_id in group_of
                    and len(group_of[d.swarm_id].parties) < cfg.m
                ]
                if st.oracle:
                    joinable = []  # an oracle swarm never takes the localizing role
                challenge = st.new_message(
                    MsgKind.CHALLENGE,
                    targets=(foreign[0].fid,) if not joinable else (joinable[0].fid,),
                )
                metrics.bytes_tx += challenge.wire_size()
                if not joinable:
                    decline = self.by_fid[foreign[0].fid].state.new_message(
                        MsgKind.CHALLENGE_DECLINE, in_reply_to=challenge.msg_id,
                        reason=DeclineReason.BUSY,
                    )
                    metrics.bytes_tx += decline.wire_size()
                    continue
                ranked = rank_foreign_swarms(st, joinable, cfg.policy, self.policy_rng, sizes)
                target_swarm, target_fid = ranked[0]
                group = group_of[target_swarm]
                accept = self.by_fid[target_fid].state.new_message(
                    MsgKind.CHALLENGE_ACCEPT, role=Role.ANCHOR, in_reply_to=challenge.msg_id
                )
                metrics.bytes_tx += accept.wire_size()
                group.parties.add(st.swarm_id)
                group.pairings.append((st.swarm_id, fid, target_fid))
                group_of[st.swarm_id] = group
                self._set_party_busy(st.swarm_id, Role.LOCALIZING, metrics)
        return groups

    def _set_party_busy(self, swarm_id: int, role: Role, metrics: RoundMetrics) -> None:
        members = self._members_of(swarm_id)
        rep = members[0].state
        set_busy = rep.new_message(MsgKind.SET_BUSY, role=role)
        metrics.bytes_tx += set_busy.wire_size()
        for a in members:
            a.state.status = Status.BUSY
            a.state.role = role

    def _resolve_groups(self, groups: list[_Group], metrics: RoundMetrics) -> None:
        cfg = self.config
        party_sizes: list[int] = []
        per_anchor: Counter = Counter()
        for group in groups:
            for loc_swarm, rep_fid, anchor_fid in group.pairings:
                rep = self.by_fid[rep_fid]
                anchor = self.by_fid[anchor_fid]
                grant_lease(anchor.state, rep_fid, 0.0, self.lease_cfg)
                metrics.anchors_served += 1
                per_anchor[anchor_fid] += 1
                v, waypoints, dist = _localize_legs(rep, anchor, cfg, self.model,
                                                    self.noise_rng, self.dim)
                phi = _gt_bearing(rep.state, anchor.state)
                mr, unanchor = complete_localization(
                    rep.state, anchor_fid, anchor.state.swarm_id, v, phi
                )
                metrics.bytes_tx += mr.wire_size() + unanchor.wire_size()
                for wp in waypoints:
                    rep.state.est_coord = wp
                metrics.dist_localizing += dist
                rep.state.status = Status.AVAILABLE
                rep.state.role = Role.NONE
                moved = 1
                for member in self._members_of(loc_swarm):
                    if member.state.fid == rep_fid:
                        continue
                    d = apply_move_and_rejoin(member.state, mr, self.model, self.dim,
                                              cfg.move_threshold)
                    if d is not None:
                        metrics.dist_swarm_follow += d
                        moved += 1
                release_lease(anchor.state, rep_fid)
                metrics.localizations += 1
                party_sizes.append(moved)
        # anchor-side members return to available once their group is done
        for a in self.agents:
            if a.state.status is Status.BUSY and not a.state.leases_granted:
                a.state.status = Status.AVAILABLE
                a.state.role = Role.NONE
        self._refresh_oracle_flags()
        (metrics.localizing_min, metrics.localizing_avg, metrics.localizing_max) = _stats(party_sizes)
        metrics.anchor_count = len(per_anchor)
        (metrics.merged_swarms_per_anchor_min,
         metrics.merged_swarms_per_anchor_avg,
         metrics.merged_swarms_per_anchor_max) = _stats(list(per_anchor.values()))

    def _measure(self) -> float:
        return measure_hd(self.agents, self.cloud, self.config.translation_method, self.hd_rng)

    def run(self) -> RunResult:
        cfg = self.config
        rows: list[RoundMetrics] = []
        snapshots: list[tuple[str, list[Vec3]]] = []
        self._refresh_oracle_flags()
        if self.oracle_fid is not None:
            self.oracle_positions.append(self.by_fid[self.oracle_fid].state.est_coord)

        def snap(label: str) -> None:
            snapshots.append((label, [a.state.est_coord for a in self.agents]))

        hd0 = self._measure()
        rows.append(RoundMetrics(0, hd0, len(self._swarm_sizes())))
        snap("round_0")
        status = "limit reached"
        rounds_to_threshold = None
        if hd0 < cfg.hd_stop_threshold:
            status = "converged"
            rounds_to_threshold = 0
        else:
            for rnd in range(1, cfg.round_limit + 1):
                metrics = RoundMetrics(rnd, 0.0, 0)
                groups = self._challenge_phase(metrics)
                self._resolve_groups(groups, metrics)
                if self.oracle_fid is not None:
                    self.oracle_positions.append(self.by_fid[self.oracle_fid].state.est_coord)
                sizes = self._swarm_sizes()
                metrics.swarm_count = len(sizes)
                metrics.hd = self._measure()
                if metrics.hd >= cfg.hd_stop_threshold and len(sizes) == 1:
                    # single swarm formed: thaw immediately and keep refining
                    for a in self.agents:
                        thaw_reset(a.state)
                    metrics.thawed_swarms = len(self.agents)
                    self._refresh_oracle_flags()
                rows.append(metrics)
                snap(f"round_{rnd}")
                if metrics.hd < cfg.hd_stop_threshold:
                    status = "converged"
                    rounds_to_threshold = rnd
                    break
        summary = self._summary(rows, status, rounds_to_threshold)
        return RunResult(rows, summary, snapshots,
                         [a.state for a in self.agents], status)

    def _summary(self, rows, status, rounds_to_threshold) -> dict:
        final_hd = rows[-1].hd
        return {
            "mode": "rounds",
            "status": status,
            "rounds": int(rows[-1].round_or_time),
            "final_hd": final_hd,
            "converged_below_floor": final_hd < HD_CONVERGED_FLOOR,
            "rounds_to_threshold": rounds_to_threshold,
            "final_swarm_count": rows[-1].swarm_count,
            "dist_localizing": sum(r.dist_localizing for r in rows),
            "dist_swarm_follow": sum(r.dist_swarm_follow for r in rows),
            "dist_total": sum(r.dist_total for r in rows),
            "bytes_tx": sum(r.bytes_tx for r in rows),
            "localizations": sum(r.localizations for r in rows),
            "anchors_served": sum(r.anchors_served for r in rows),
            "thawed_swarms": sum(r.thawed_swarms for r in rows),
            "leases_expired": sum(r.leases_expired for r in rows),
            "oracle_moved": (
                max(p.dist(self.oracle_positions[0]) for p in self.oracle_positions)
                if self.oracle_positions else None
            ),
        }


def run_rounds(config: RunConfig, cloud: PointCloud | None = None) -> RunResult:
    return RoundEngine(config, cloud).run()


# ------------------------------------------------------------ event engine


@dataclass
class _Flight:
    """One committed dead-reckoned move of an FLS."""

    final: Vec3
    distance: float
    category: str                      # "loc" or "follow"
    unanchor_to: Optional[int] = None  # anchor fid to notify at landing
    duration: float = 0.0


class EventEngine:
    """Discrete-event simulator: challenges are paced by lambda, leases and
    thaw timers run on the simulated clock, failures kill FLSs and
    replacements re-join through the busy-neighbor rule."""

    def __init__(
        self,
        config: RunConfig,
        cloud: PointCloud | None = None,
        scripted_failures: Sequence[tuple[float, int]] = (),
    ):
        config.validate()
        self.config = config
        self.cloud = cloud or geometry.load_cloud(config.cloud_path, dedup=True)
        self.dim = self.cloud.dim
        self.agents = {a.state.fid: a for a in provision(self.cloud, config)}
        self.next_fid = len(self.agents) + 1
        self.f_total = len(self.agents)
        self.model = DeadReckoningModel(
            config.epsilon_deg, substream(config.seed, "protocol-moves").getrandbits(63)
        )
        self.engine_rng = substream(config.seed, "events")
        self.policy_rng = substream(config.seed, "policy")
        self.hd_rng = substream(config.seed, "hd")
        self.noise_rng = substream(config.seed, "noise")
        self.thaw_rng = substream(config.seed, "thaw")
        self.failure_rng = substream(config.seed, "failures")
        loss = LossModel(config.loss_mode, config.loss_rate,
                         substream(config.seed, "loss").getrandbits(63))
        self.medium = Medium(
            RadioConfig(config.radio_default, config.radio_max),
            loss=loss,
            latency_s=config.latency_ms / 1000.0,
        )
        for fid, agent in sorted(self.agents.items()):
            self.medium.register(fid, agent.state.gt_coord)
        self.scripted_failures = list(scripted_failures)
        self.lease_cfg = config.lease_cfg()
        self.velocity = config.velocity()
        self.lambda_s = config.lambda_ms / 1000.0
        self.oracle_fid = 1 if config.oracle_mode else None

        self.failure_rate = config.failure_rate_per_fls_per_s
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._dispatch = {
            MsgKind.CHALLENGE: self._recv_challenge,
            MsgKind.CHALLENGE_ACCEPT: self._recv_accept,
            MsgKind.CHALLENGE_DECLINE: self._recv_decline,
            MsgKind.SET_BUSY: self._recv_set_busy,
            MsgKind.MOVE_AND_REJOIN: self._recv_move,
            MsgKind.UNANCHOR: self._recv_unanchor,
            MsgKind.LEASE_RENEW: self._recv_renew,
            MsgKind.THAW: self._recv_thaw,
            MsgKind.REPLACEMENT_ARRIVED: self._recv_replacement_note,
        }
        self.swarm_counter: Counter = Counter(a.state.swarm_id for a in self.agents.values())
        self.rows: list[RoundMetrics] = []
        self.snapshots: list[tuple[str, list[Vec3]]] = []
        self.totals = RoundMetrics(0.0, 0.0, 0)
        self._window = RoundMetrics(0.0, 0.0, 0)
        self._window_party_sizes: list[int] = []
        self._window_anchors: Counter = Counter()
        self.first_single_swarm: Optional[float] = None
        self.time_to_threshold: Optional[float] = None
        self.failure_log: list[dict] = []
        self.lease_expiries_after_failure = 0
        self.replacement_arrivals: list[tuple[float, int]] = []
        self.oracle_positions: list[Vec3] = []

    # -- queue ------------------------------------------------------------

    def _push(self, time: float, tag: str, payload: tuple, order: tuple = (0, 0, 0)) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, 1 if tag == "deliver" else 0, *order, self._seq, tag, payload))

    def _schedule_deliveries(self, flights) -> None:
        for fl in flights:
            self._push(
                fl.deliver_at, "deliver", (fl,),
                order=(fl.recipient, fl.msg.sender_fid, fl.msg.msg_id),
            )

    # -- messaging ---------------------------------------------------------

    def _broadcast(self, agent: Agent, msg: Message, range_: float,
                   recipients: Optional[list[int]] = None) -> None:
        self._count_bytes(msg)
        flights = self.medium.broadcast(self.now, agent.state.fid, msg, range_, recipients)
        self._schedule_deliveries(flights)

    def _send_to(self, agent: Agent, msg: Message, target_fid: int) -> None:
        self._broadcast(agent, msg, self.medium.radio.max_range, recipients=[target_fid])

    def _count_bytes(self, msg: Message) -> None:
        size = msg.wire_size()
        self.totals.bytes_tx += size
        self._window.bytes_tx += size

    # -- swarm bookkeeping --------------------------------------------------

    def _change_swarm(self, agent: Agent, new_id: int) -> None:
        old = agent.state.swarm_id
        if old == new_id:
            return
        self.swarm_counter[old] -= 1
        if self.swarm_counter[old] <= 0:
            del self.swarm_counter[old]
        agent.state.swarm_id = new_id
        self.swarm_counter[new_id] += 1
        self._check_single_swarm()
        self._refresh_oracle(agent)

    def _check_single_swarm(self) -> None:
        if self.first_single_swarm is None and len(self.swarm_counter) == 1:
            alive = sum(1 for a in self.agents.values() if a.alive)
            if alive > 1:
                self.first_single_swarm = self.now

    def _refresh_oracle(self, agent: Agent) -> None:
        if self.oracle_fid is None:
            return
        source = self.agents.get(self.oracle_fid)
        if source is None or not source.alive:
            return
        agent.state.oracle = agent.state.swarm_id == source.state.swarm_id

    def _members_of(self, swarm_id: int, exclude: int) -> list[int]:
        return sorted(
            fid for fid, a in self.agents.items()
            if a.alive and a.state.swarm_id == swarm_id and fid != exclude
        )

    def _reset_thaw(self, agent: Agent) -> None:
        agent.thaw_deadline = draw_thaw_deadline(
            self.now, self.f_total, self.thaw_rng, self.config.fixed_thaw_h
        )
        self._push(agent.thaw_deadline, "thaw_timer", (agent.state.fid, agent.thaw_deadline))

    # -- discovery ----------------------------------------------------------

    def _discover(self, agent: Agent) -> tuple[float, list[Agent], bool]:
        fids, dists = self.medium.distances_from(agent.state.fid)
        swarm = agent.state.swarm_id
        self_fid = agent.state.fid
        swarm_ids = np.fromiter(
            (self.agents[int(f)].state.swarm_id for f in fids), dtype=np.int64, count=len(fids)
        )
        others = fids != self_fid
        foreign_mask = others & (swarm_ids != swarm)
        if foreign_mask.any():
            need = float(dists[foreign_mask].min())
        else:
            need = math.inf
        if need <= self.medium.radio.max_range:
            rng_used = next(r for r in self.medium.radio.expand_schedule if r >= need)
            found = True
        else:
            rng_used = self.medium.radio.max_range
            found = False
        in_mask = others & (dists <= rng_used)
        in_range = [self.agents[int(f)] for f in fids[in_mask]]
        return rng_used, in_range, found

    # -- handlers -------------------------------------------------------------

    def _on_challenge_timer(self, fid: int) -> None:
        agent = self.agents.get(fid)
        if agent is None or not agent.alive:
            return
        jitter = self.lambda_s * (0.9 + 0.2 * self.engine_rng.random())
        self._push(self.now + jitter, "challenge_timer", (fid,))
        st = agent.state
        if st.status is not Status.AVAILABLE or not self._agent_idle(agent):
            return
        if st.r_complete:
            return  # stopped expanding and challenging until the next thaw
        rng_used, in_range, found = self._discover(agent)
        observed = [(a.state.fid, a.state.swarm_id, a.state.est_coord) for a in in_range]
        if update_r_complete(st, observed, self.config.r_complete_tol):
            return
        if not found:
            return
        foreign = [
            Discovered(a.state.fid, a.state.swarm_id, a.state.status, a.state.role)
            for a in in_range
            if a.state.swarm_id != st.swarm_id
        ]
        foreign.sort(key=lambda d: d.fid)
        sizes = dict(self.swarm_counter)
        available = [d for d in foreign if d.status is Status.AVAILABLE]
        target: Optional[int] = None
        if available:
            ranked = rank_foreign_swarms(st, available, self.config.policy, self.policy_rng, sizes)
            target = ranked[0][1]
        else:
            anchors = [
                d for d in foreign
                if d.role is Role.ANCHOR and d.swarm_id < st.swarm_id and not st.oracle
            ]
            if anchors:
                ranked = rank_foreign_swarms(st, anchors, self.config.policy, self.policy_rng, sizes)
                target = ranked[0][1]
            elif sizes.get(st.swarm_id, 1) == 1 and not st.oracle:
                target = pick_join_target(st, foreign)
        if target is None:
            return
        msg = st.new_message(MsgKind.CHALLENGE, targets=(target,))
        agent.pending_challenge = (msg.msg_id, target)
        self._broadcast(agent, msg, rng_used)

    def _on_deliver(self, flight: netsim.InFlight) -> None:
        agent = self.agents.get(flight.recipient)
        if agent is None or not agent.alive:
            return
        msg = flight.msg
        if not wrapper_filter(agent.state, msg):
            return
        if not dedup_filter(agent.state, msg):
            return
        self._dispatch[msg.kind](agent, msg)

    def _recv_challenge(self, agent: Agent, msg: Message) -> None:
        self._reset_thaw(agent)
        st = agent.state
        if st.fid not in msg.targets:
            return
        challenger = self.agents.get(msg.sender_fid)
        if challenger is None or not challenger.alive:
            return
        ok, reason = accepts_challenge(st, msg.sender_swarm_id)
        if ok and st.role is Role.ANCHOR and not math.isinf(self.config.m):
            if len(st.leases_granted) >= self.config.m - 1:
                ok, reason = False, DeclineReason.GROUP_FULL
        if ok and not self._agent_idle(agent):
            ok, reason = False, DeclineReason.BUSY
        if not ok:
            reply = st.new_message(MsgKind.CHALLENGE_DECLINE, in_reply_to=msg.msg_id,
                                   reason=reason)
            self._send_to(agent, reply, msg.sender_fid)
            return
        sizes = self.swarm_counter
        if st.role is Role.ANCHOR:
            my_role = Role.ANCHOR
        else:
            cands = [
                AnchorCandidate(msg.sender_fid, msg.sender_swarm_id,
                                sizes.get(msg.sender_swarm_id, 1),
                                challenger.state.oracle, True),
                AnchorCandidate(st.fid, st.swarm_id, sizes.get(st.swarm_id, 1),
                                st.oracle, False),
            ]
            my_role = (Role.ANCHOR
                       if select_anchor(cands, self.config.policy, self.policy_rng).fid == st.fid
                       else Role.LOCALIZING)
        st.status = Status.BUSY
        st.role = my_role
        self._set_swarm_busy(agent, my_role)
        self._reset_thaw(agent)
        if my_role is Role.ANCHOR:
            expiry = grant_lease(st, msg.sender_fid, self.now, self.lease_cfg)
            self._push(expiry, "lease_expiry", (st.fid, msg.sender_fid, expiry))
            self._note_anchor_grant(st.fid)
            reply = st.new_message(MsgKind.CHALLENGE_ACCEPT, in_reply_to=msg.msg_id,
                                   role=Role.ANCHOR, lease_expiry=expiry)
            self._send_to(agent, reply, msg.sender_fid)
        else:
            reply = st.new_message(MsgKind.CHALLENGE_ACCEPT, in_reply_to=msg.msg_id,
                                   role=Role.LOCALIZING)
            self._send_to(agent, reply, msg.sender_fid)
            st.lease_held = (msg.sender_fid, self.now + self.lease_cfg.delta)
            self._schedule_renewal(agent)
            self._begin_localization(agent, challenger)

    def _set_swarm_busy(self, agent: Agent, role: Role) -> None:
        members = self._members_of(agent.state.swarm_id, exclude=agent.state.fid)
        msg = agent.state.new_message(MsgKind.SET_BUSY, role=role)
        self._broadcast(agent, msg, self.medium.radio.max_range, recipients=members)

    def _recv_set_busy(self, agent: Agent, msg: Message) -> None:
        if msg.sender_swarm_id != agent.state.swarm_id:
            return  # stale: the swarm moved on before delivery
        st = agent.state
        if msg.role is Role.NONE:
            # the merge around this swarm is over; members with no own
            # obligations go back to available
            if self._member_releasable(agent):
                st.status = Status.AVAILABLE
                st.role = Role.NONE
            return
        if st.status is Status.AVAILABLE:
            st.status = Status.BUSY
            st.role = msg.role
            # soft state: if the move order or the release never arrives
            # (packet loss), busy-ness decays on the lease horizon
            agent.busy_mark += 1
            self._push(self.now + self.lease_cfg.delta, "busy_timeout",
                       (st.fid, agent.busy_mark))

    def _member_releasable(self, agent: Agent) -> bool:
        st = agent.state
        return (
            st.status is Status.BUSY
            and not st.leases_granted
            and st.lease_held is None
            and self._agent_idle(agent)
        )

    def _on_busy_timeout(self, fid: int, mark: int) -> None:
        agent = self.agents.get(fid)
        if agent is None or not agent.alive or agent.busy_mark != mark:
            return
        if self._member_releasable(agent):
            agent.state.status = Status.AVAILABLE
            agent.state.role = Role.NONE
            self._reset_thaw(agent)

    def _recv_accept(self, agent: Agent, msg: Message) -> None:
        st = agent.state
        pending = agent.pending_challenge
        if pending is None or pending[0] != msg.in_reply_to or pending[1] != msg.sender_fid:
            return
        agent.pending_challenge = None
        acceptor = self.agents.get(msg.sender_fid)
        if acceptor is None or not acceptor.alive:
            return
        self._reset_thaw(agent)
        if msg.role is Role.ANCHOR:
            # the acceptor anchored us and granted a lease
            if st.status is not Status.AVAILABLE or not self._agent_idle(agent):
                # raced into another engagement: release the anchor early
                release = st.new_message(MsgKind.UNANCHOR)
                self._send_to(agent, release, msg.sender_fid)
                return
            st.status = Status.BUSY
            st.role = Role.LOCALIZING
            st.lease_held = (msg.sender_fid, msg.lease_expiry)
            self._set_swarm_busy(agent, Role.LOCALIZING)
            self._schedule_renewal(agent)
            self._begin_localization(agent, acceptor)
        else:
            # the acceptor localizes relative to us
            if st.status is Status.AVAILABLE and self._agent_idle(agent):
                st.status = Status.BUSY
                st.role = Role.ANCHOR
                expiry = grant_lease(st, msg.sender_fid, self.now, self.lease_cfg)
                self._push(expiry, "lease_expiry", (st.fid, msg.sender_fid, expiry))
                self._note_anchor_grant(st.fid)
                self._set_swarm_busy(agent, Role.ANCHOR)

    def _recv_decline(self, agent: Agent, msg: Message) -> None:
        st = agent.state
        pending = agent.pending_challenge
        if pending is None or pending[0] != msg.in_reply_to or pending[1] != msg.sender_fid:
            return
        agent.pending_challenge = None
        if msg.reason is not DeclineReason.BUSY:
            return
        if st.status is not Status.AVAILABLE or not self._agent_idle(agent) or st.oracle:
            return
        if self.swarm_counter.get(st.swarm_id, 1) != 1:
            return
        decliner = self.agents.get(msg.sender_fid)
        if decliner is None or not decliner.alive:
            return
        # busy-neighbor rule: a swarm of one joins the busy swarm it found
        st.status = Status.BUSY
        st.role = Role.LOCALIZING
        self._begin_localization(agent, decliner, forced_join=True)

    def _note_anchor_grant(self, anchor_fid: int) -> None:
        self.totals.anchors_served += 1
        self._window.anchors_served += 1
        self._window_anchors[anchor_fid] += 1

    def _schedule_renewal(self, agent: Agent) -> None:
        held = agent.state.lease_held
        if held is None:
            return
        when = held[1] - self.lease_cfg.renew_fraction * self.lease_cfg.delta
        self._push(max(when, self.now), "renew_check", (agent.state.fid, held[0]))

    def _agent_idle(self, agent: Agent) -> bool:
        return not agent.flying and not agent.orders

    def _begin_localization(self, agent: Agent, anchor: Agent, forced_join: bool = False) -> None:
        st = agent.state
        v, waypoints, dist = _localize_legs(agent, anchor, self.config, self.model,
                                            self.noise_rng, self.dim)
        phi = _gt_bearing(st, anchor.state)
        old_swarm = st.swarm_id
        members = self._members_of(old_swarm, exclude=st.fid)
        new_swarm = anchor.state.swarm_id
        if new_swarm == old_swarm:
            # the anchor re-homed into our swarm while the handshake was in
            # flight; nothing to merge anymore
            self._finish_localization(agent, None, count=False)
            return
        # the swarm id changes at broadcast time, so racing move orders for
        # the old swarm no longer match this FLS
        mr, unanchor = complete_localization(st, anchor.state.fid, new_swarm, v, phi)
        self.swarm_counter[old_swarm] -= 1
        if self.swarm_counter[old_swarm] <= 0:
            del self.swarm_counter[old_swarm]
        self.swarm_counter[new_swarm] += 1
        self._check_single_swarm()
        self._refresh_oracle(agent)
        self._window_party_sizes.append(1 + len(members))
        if members:
            self._broadcast(agent, mr, self.medium.radio.max_range, recipients=members)
        unanchor_to = None if forced_join else anchor.state.fid
        if not waypoints:
            self._finish_localization(agent, unanchor_to)
            return
        total_t = 0.0
        last = st.est_coord
        for wp in waypoints:
            total_t += travel_time(wp.dist(last), self.velocity, self.config.cell_size_m)
            last = wp
        agent.orders.append(_Flight(waypoints[-1], dist, "loc", unanchor_to, total_t))
        self._maybe_start_flight(agent)

    def _finish_localization(self, agent: Agent, unanchor_to: Optional[int],
                             count: bool = True) -> None:
        st = agent.state
        if unanchor_to is not None:
            note = st.new_message(MsgKind.UNANCHOR)
            self._send_to(agent, note, unanchor_to)
        st.lease_held = None
        st.role = Role.NONE
        if count:
            self.totals.localizations += 1
            self._window.localizations += 1
        self._normalize_status(agent)
        self._reset_thaw(agent)

    def _normalize_status(self, agent: Agent) -> None:
        st = agent.state
        if st.leases_granted:
            return  # still anchoring
        if agent.flying or agent.orders:
            st.status = Status.BUSY
        elif st.role is Role.NONE:
            st.status = Status.AVAILABLE

    def _recv_move(self, agent: Agent, msg: Message) -> None:
        st = agent.state
        self._reset_thaw(agent)
        if st.swarm_id != msg.old_swarm:
            return
        if st.leases_granted:
            return  # an anchor never moves while a lease is live
        self._change_swarm(agent, msg.new_swarm)
        st.orientation = msg.orientation
        st.role = Role.NONE
        if msg.vector.norm() > self.config.move_threshold:
            agent.orders.append(("follow", msg.vector))
            self._maybe_start_flight(agent)
        self._normalize_status(agent)

    def _maybe_start_flight(self, agent: Agent) -> None:
        if agent.flying or not agent.orders:
            return
        st = agent.state
        head = agent.orders[0]
        if isinstance(head, tuple):
            # follow orders are materialized when the flight starts, from
            # wherever the previous move actually landed
            v = head[1]
            final = dead_reckon(st.est_coord, st.est_coord + v, self.model, self.dim)
            dist = final.dist(st.est_coord)
            head = _Flight(final, dist, "follow", None,
                           travel_time(dist, self.velocity, self.config.cell_size_m))
            agent.orders[0] = head
        agent.flying = True
        agent.flight_token += 1
        self._push(self.now + head.duration, "move_complete", (st.fid, agent.flight_token))

    def _on_move_complete(self, fid: int, token: int) -> None:
        agent = self.agents.get(fid)
        if agent is None or not agent.alive or not agent.flying:
            return
        if token != agent.flight_token:
            return
        agent.flying = False
        flight = agent.orders.popleft()
        st = agent.state
        st.est_coord = flight.final
        if flight.category == "loc":
            self.totals.dist_localizing += flight.distance
            self._window.dist_localizing += flight.distance
            self._finish_localization(agent, flight.unanchor_to)
        else:
            self.totals.dist_swarm_follow += flight.distance
            self._window.dist_swarm_follow += flight.distance
        self._maybe_start_flight(agent)
        self._normalize_status(agent)
        if self._agent_idle(agent) and flight.category == "follow":
            self._reset_thaw(agent)

    def _recv_unanchor(self, agent: Agent, msg: Message) -> None:
        was_anchor = agent.state.role is Role.ANCHOR
        release_lease(agent.state, msg.sender_fid)
        if was_anchor and agent.state.role is Role.NONE:
            self._set_swarm_busy(agent, Role.NONE)  # release the members too
            self._normalize_status(agent)
            self._reset_thaw(agent)

    def _recv_renew(self, agent: Agent, msg: Message) -> None:
        if renew_lease(agent.state, msg.sender_fid, self.now, self.lease_cfg):
            expiry = agent.state.leases_granted[msg.sender_fid]
            self._push(expiry, "lease_expiry", (agent.state.fid, msg.sender_fid, expiry))

    def _on_renew_check(self, fid: int, anchor_fid: int) -> None:
        agent = self.agents.get(fid)
        if agent is None or not agent.alive:
            return
        held = agent.state.lease_held
        if held is None or held[0] != anchor_fid:
            return
        msg = agent.state.new_message(MsgKind.LEASE_RENEW)
        self._send_to(agent, msg, anchor_fid)
        agent.state.lease_held = (anchor_fid, self.now + self.lease_cfg.delta)
        self._schedule_renewal(agent)

    def _on_lease_expiry(self, anchor_fid: int, holder_fid: int, expiry: float) -> None:
        agent = self.agents.get(anchor_fid)
        if agent is None or not agent.alive:
            return
        st = agent.state
        if st.leases_granted.get(holder_fid) != expiry:
            return  # renewed or released meanwhile
        was_anchor = st.role is Role.ANCHOR
        expired = expire_leases(st, self.now)
        if holder_fid in expired:
            self.totals.leases_expired += 1
            self._window.leases_expired += 1
            holder = self.agents.get(holder_fid)
            if holder is None or not holder.alive:
                self.lease_expiries_after_failure += 1
        if was_anchor and st.role is Role.NONE:
            self._set_swarm_busy(agent, Role.NONE)
            self._normalize_status(agent)
            self._reset_thaw(agent)

    def _on_thaw_timer(self, fid: int, deadline: float) -> None:
        agent = self.agents.get(fid)
        if agent is None or not agent.alive or agent.thaw_deadline != deadline:
            return
        msg = agent.state.new_message(MsgKind.THAW, swarm_id=agent.state.swarm_id)
        self._broadcast(agent, msg, self.medium.radio.max_range)
        self._thaw_self(agent)

    THAW_REBROADCAST_P = 0.15
    THAW_WAVE_GAP_S = 1.0

    def _recv_thaw(self, agent: Agent, msg: Message) -> None:
        first_of_wave = self.now - agent.last_thaw_seen > self.THAW_WAVE_GAP_S
        agent.last_thaw_seen = self.now
        self._thaw_self(agent)
        # Receivers repeat the thaw with a small probability so that a lossy
        # broadcast cannot strand stale-id remnants; without this, members
        # that miss a thaw form a scattered swarm that later move orders
        # drag around coherently, pinning the fidelity error.
        if first_of_wave and self.engine_rng.random() < self.THAW_REBROADCAST_P:
            echo = agent.state.new_message(MsgKind.THAW, swarm_id=agent.state.swarm_id)
            self._broadcast(agent, echo, self.medium.radio.max_range)

    def _thaw_self(self, agent: Agent) -> None:
        st = agent.state
        self._change_swarm(agent, st.fid)
        thaw_reset(st)
        if not self._agent_idle(agent):
            st.status = Status.BUSY  # finish the committed moves first
        self.totals.thawed_swarms += 1
        self._window.thawed_swarms += 1
        self._reset_thaw(agent)

    def _recv_replacement_note(self, agent: Agent, msg: Message) -> None:
        return  # informational only

    # -- failures ------------------------------------------------------------

    def _on_fail(self, fid: int) -> None:
        agent = self.agents.get(fid)
        if agent is None or not agent.alive:
            return
        st = agent.state
        mid_localization = st.lease_held is not None or (
            agent.flying and agent.orders and isinstance(agent.orders[0], _Flight)
            and agent.orders[0].category == "loc"
        )
        self.failure_log.append(
            {"time": self.now, "fid": fid, "mid_localization": bool(mid_localization)}
        )
        agent.alive = False
        self.medium.unregister(fid)
        self.swarm_counter[st.swarm_id] -= 1
        if self.swarm_counter[st.swarm_id] <= 0:
            del self.swarm_counter[st.swarm_id]
        # replacement: dispatched after a fixed delay, dead-reckons to the
        # failed FLS's assigned point, then joins via the busy-neighbor rule
        dist = st.gt_coord.dist(self.config.dispatcher_origin)
        arrival = self.now + REPLACEMENT_DISPATCH_DELAY_S + travel_time(
            dist, self.velocity, self.config.cell_size_m
        )
        new_fid = self.next_fid
        self.next_fid += 1
        self._push(arrival, "replace_arrive", (new_fid, agent.cloud_index, fid))

    def _on_replace_arrive(self, new_fid: int, cloud_index: int, replaced: int) -> None:
        gt = self.cloud.points[cloud_index]
        est = dead_reckon(self.config.dispatcher_origin, gt, self.model, self.dim)
        st = FlsState(fid=new_fid, gt_coord=gt, est_coord=est, eta=self.config.eta)
        dead = self.agents[replaced].state
        st.known_neighbors = dict(dead.known_neighbors)
        on_deploy(st)
        agent = Agent(state=st, cloud_index=cloud_index,
                      deploy_legs=[gt.dist(self.config.dispatcher_origin)])
        self.agents[new_fid] = agent
        self.medium.register(new_fid, gt)
        self.swarm_counter[st.swarm_id] += 1
        self.replacement_arrivals.append((self.now, new_fid))
        note = st.new_message(MsgKind.REPLACEMENT_ARRIVED, replaced_fid=replaced)
        self._broadcast(agent, note, self.medium.radio.max_range)
        self._reset_thaw(agent)
        jitter = self.lambda_s * (0.9 + 0.2 * self.engine_rng.random())
        self._push(self.now + jitter, "challenge_timer", (new_fid,))
        if self.failure_rate > 0:
            dt = self.failure_rng.expovariate(self.failure_rate)
            if self.now + dt < self.config.duration_s:
                self._push(self.now + dt, "fail", (new_fid,))

    # -- sampling --------------------------------------------------------------

    def _on_hd_sample(self) -> None:
        hd_val = measure_hd(
            list(self.agents.values()), self.cloud,
            self.config.translation_method, self.hd_rng,
        )
        w = self._window
        w.round_or_time = self.now
        w.hd = hd_val
        w.swarm_count = len(self.swarm_counter)
        (w.localizing_min, w.localizing_avg, w.localizing_max) = _stats(self._window_party_sizes)
        w.anchor_count = len(self._window_anchors)
        (w.merged_swarms_per_anchor_min,
         w.merged_swarms_per_anchor_avg,
         w.merged_swarms_per_anchor_max) = _stats(list(self._window_anchors.values()))
        self.rows.append(w)
        if self.time_to_threshold is None and hd_val < self.config.hd_stop_threshold:
            self.time_to_threshold = self.now
        self._window = RoundMetrics(0.0, 0.0, 0)
        self._window_party_sizes = []
        self._window_anchors = Counter()
        if self.oracle_fid is not None and self.agents[self.oracle_fid].alive:
            self.oracle_positions.append(self.agents[self.oracle_fid].state.est_coord)
        nxt = self.now + HD_SAMPLE_PERIOD_S
        if nxt <= self.config.duration_s + 1e-9:
            self._push(nxt, "hd_sample", ())

    # -- main loop ----------------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.config
        for fid in sorted(self.agents):
            jitter = self.lambda_s * self.engine_rng.random()
            self._push(jitter, "challenge_timer", (fid,))
        for fid in sorted(self.agents):
            self._reset_thaw(self.agents[fid])
        if self.failure_rate > 0:
            for fid in sorted(self.agents):
                dt = self.failure_rng.expovariate(self.failure_rate)
                if dt < cfg.duration_s:
                    self._push(dt, "fail", (fid,))
        for t, fid in self.scripted_failures:
            self._push(t, "fail", (fid,))
        self.snapshots.append(("initial", [a.state.est_coord for a in self.agents.values()]))
        self._push(0.0, "hd_sample", ())

        handlers = {
            "challenge_timer": lambda p: self._on_challenge_timer(*p),
            "deliver": lambda p: self._on_deliver(*p),
            "move_complete": lambda p: self._on_move_complete(*p),
            "renew_check": lambda p: self._on_renew_check(*p),
            "lease_expiry": lambda p: self._on_lease_expiry(*p),
            "thaw_timer": lambda p: self._on_thaw_timer(*p),
            "fail": lambda p: self._on_fail(*p),
            "replace_arrive": lambda p: self._on_replace_arrive(*p),
            "busy_timeout": lambda p: self._on_busy_timeout(*p),
            "hd_sample": lambda p: self._on_hd_sample(),
        }
        while self._heap:
            entry = heapq.heappop(self._heap)
            time = entry[0]
            if time > cfg.duration_s + 1e-9:
                break
            self.now = time
            tag, payload = entry[-2], entry[-1]
            handlers[tag](payload)
        self.now = cfg.duration_s
        alive_states = [a.state for a in self.agents.values() if a.alive]
        self.snapshots.append(("final", [s.est_coord for s in alive_states]))
        final_hd = self.rows[-1].hd if self.rows else math.inf
        status = "completed"
        summary = {
            "mode": "events",
            "status": status,
            "duration_s": cfg.duration_s,
            "final_hd": final_hd,
            "converged_below_floor": final_hd < HD_CONVERGED_FLOOR,
            "time_to_threshold": self.time_to_threshold,
            "time_to_single_swarm": self.first_single_swarm,
            "final_swarm_count": len(self.swarm_counter),
            "dist_localizing": self.totals.dist_localizing,
            "dist_swarm_follow": self.totals.dist_swarm_follow,
            "dist_total": self.totals.dist_total,
            "bytes_tx": self.totals.bytes_tx,
            "localizations": self.totals.localizations,
            "anchors_served": self.totals.anchors_served,
            "thawed_swarms": self.totals.thawed_swarms,
            "leases_expired": self.totals.leases_expired,
            "failures": len(self.failure_log),
            "failure_log": self.failure_log,
            "replacements": self.replacement_arrivals,
            "lease_expiries_after_failure": self.lease_expiries_after_failure,
            "oracle_moved": (
                max(p.dist(self.oracle_positions[0]) for p in self.oracle_positions)
                if self.oracle_positions else None
            ),
        }
        return RunResult(self.rows, summary, self.snapshots, alive_states, status)


def run_events(
    config: RunConfig,
    cloud: PointCloud | None = None,
    scripted_failures: Sequence[tuple[float, int]] = (),
) -> RunResult:
    return EventEngine(config, cloud, scripted_failures).run()
