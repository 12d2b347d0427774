"""Per-FLS merge protocol: swarm membership, challenge/accept, anchor and
localizing roles, busy propagation, vector application with the old-swarm-id
guard, leases, and thaw.

State transitions mutate a single FlsState owned by one logical agent.
Messages are immutable values; the only cross-agent channel is the network
medium (see netsim).
"""

from __future__ import annotations

import enum
import math
import random
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

from swarmer.geometry import DeadReckoningModel, Vec3, dead_reckon


class ProtocolViolation(Exception):
    """A message reached a handler the medium should have filtered."""


class Status(enum.Enum):
    AVAILABLE = "available"
    BUSY = "busy"


class Role(enum.Enum):
    NONE = "none"
    ANCHOR = "anchor"
    LOCALIZING = "localizing"


class MsgKind(enum.IntEnum):
    CHALLENGE = 1
    CHALLENGE_ACCEPT = 2
    CHALLENGE_DECLINE = 3
    SET_BUSY = 4
    MOVE_AND_REJOIN = 5
    UNANCHOR = 6
    LEASE_RENEW = 7
    THAW = 8
    REPLACEMENT_ARRIVED = 9


class DeclineReason(enum.IntEnum):
    NONE = 0
    BUSY = 1          # busy and not eligible to anchor the challenger
    ID_RULE = 2       # busy anchor but swarm-id not lower than challenger's
    GROUP_FULL = 3    # merge group already holds M swarms


class AnchorPolicy(enum.Enum):
    RANDOM = "random"
    CHALLENGER = "challenger"
    LOWEST_SWARM_ID = "lowest_swarm_id"
    LARGEST_SWARM = "largest_swarm"
    SMALLEST_SWARM = "smallest_swarm"


_ROLE_CODE = {Role.NONE: 0, Role.ANCHOR: 1, Role.LOCALIZING: 2}
_ROLE_FROM_CODE = {v: k for k, v in _ROLE_CODE.items()}

# Wire layout, little-endian: kind u8, sender_fid u32, sender_swarm_id u32,
# msg_id u64, then a kind-specific body.
_HEADER = struct.Struct("<BIIQ")
_MOVE_BODY = struct.Struct("<IIdddd")      # old_swarm, new_swarm, V (3 f64), phi
_ACCEPT_BODY = struct.Struct("<QBd")       # in_reply_to, responder role, lease expiry
_DECLINE_BODY = struct.Struct("<QB")       # in_reply_to, reason
_SET_BUSY_BODY = struct.Struct("<B")       # role
_THAW_BODY = struct.Struct("<I")           # swarm id being thawed
_REPLACEMENT_BODY = struct.Struct("<I")    # fid being replaced


@dataclass(frozen=True)
class Message:
    """One protocol message; msg_id is strictly increasing per sender."""

    kind: MsgKind
    sender_fid: int
    sender_swarm_id: int
    msg_id: int
    targets: tuple[int, ...] = ()
    role: Role = Role.NONE
    old_swarm: int = 0
    new_swarm: int = 0
    vector: Vec3 = Vec3()
    orientation: float = 0.0
    swarm_id: int = 0
    in_reply_to: int = 0
    reason: DeclineReason = DeclineReason.NONE
    lease_expiry: float = 0.0
    replaced_fid: int = 0

    def __post_init__(self) -> None:
        if self.kind is MsgKind.MOVE_AND_REJOIN and self.new_swarm == self.old_swarm:
            raise ValueError("move-and-rejoin must change the swarm id")

    def encode(self) -> bytes:
        head = _HEADER.pack(self.kind, self.sender_fid, self.sender_swarm_id, self.msg_id)
        if self.kind is MsgKind.CHALLENGE:
            body = struct.pack("<B", len(self.targets))
            body += b"".join(struct.pack("<I", t) for t in self.targets)
        elif self.kind is MsgKind.CHALLENGE_ACCEPT:
            body = _ACCEPT_BODY.pack(self.in_reply_to, _ROLE_CODE[self.role], self.lease_expiry)
        elif self.kind is MsgKind.CHALLENGE_DECLINE:
            body = _DECLINE_BODY.pack(self.in_reply_to, self.reason)
        elif self.kind is MsgKind.SET_BUSY:
            body = _SET_BUSY_BODY.pack(_ROLE_CODE[self.role])
        elif self.kind is MsgKind.MOVE_AND_REJOIN:
            v = self.vector
            body = _MOVE_BODY.pack(self.old_swarm, self.new_swarm, v.l, v.h, v.d, self.orientation)
        elif self.kind is MsgKind.THAW:
            body = _THAW_BODY.pack(self.swarm_id)
        elif self.kind is MsgKind.REPLACEMENT_ARRIVED:
            body = _REPLACEMENT_BODY.pack(self.replaced_fid)
        else:  # UNANCHOR, LEASE_RENEW carry no body
            body = b""
        return head + body

    def wire_size(self) -> int:
        return len(self.encode())


def decode_message(data: bytes) -> Message:
    """Inverse of Message.encode."""
    kind_v, sender, swarm, msg_id = _HEADER.unpack_from(data, 0)
    kind = MsgKind(kind_v)
    off = _HEADER.size
    kwargs: dict = {}
    if kind is MsgKind.CHALLENGE:
        (count,) = struct.unpack_from("<B", data, off)
        off += 1
        targets = struct.unpack_from(f"<{count}I", data, off) if count else ()
        kwargs["targets"] = tuple(targets)
    elif kind is MsgKind.CHALLENGE_ACCEPT:
        reply, role, expiry = _ACCEPT_BODY.unpack_from(data, off)
        kwargs = {"in_reply_to": reply, "role": _ROLE_FROM_CODE[role], "lease_expiry": expiry}
    elif kind is MsgKind.CHALLENGE_DECLINE:
        reply, reason = _DECLINE_BODY.unpack_from(data, off)
        kwargs = {"in_reply_to": reply, "reason": DeclineReason(reason)}
    elif kind is MsgKind.SET_BUSY:
        (role,) = _SET_BUSY_BODY.unpack_from(data, off)
        kwargs = {"role": _ROLE_FROM_CODE[role]}
    elif kind is MsgKind.MOVE_AND_REJOIN:
        old, new, l, h, d, phi = _MOVE_BODY.unpack_from(data, off)
        kwargs = {"old_swarm": old, "new_swarm": new, "vector": Vec3(l, h, d), "orientation": phi}
    elif kind is MsgKind.THAW:
        (sid,) = _THAW_BODY.unpack_from(data, off)
        kwargs = {"swarm_id": sid}
    elif kind is MsgKind.REPLACEMENT_ARRIVED:
        (rfid,) = _REPLACEMENT_BODY.unpack_from(data, off)
        kwargs = {"replaced_fid": rfid}
    return Message(kind, sender, swarm, msg_id, **kwargs)


@dataclass
class LeaseConfig:
    """Fixed-duration anchor grants; renewal is sent at a fraction of the term."""

    delta: float
    renew_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ValueError("lease duration must be positive")
        if not 0 < self.renew_fraction < 1:
            raise ValueError("renew fraction must be in (0, 1)")


@dataclass
class FlsState:
    """Full protocol state of one FLS."""

    fid: int
    gt_coord: Vec3
    est_coord: Vec3
    eta: int = 5
    swarm_id: int = 0
    status: Status = Status.AVAILABLE
    role: Role = Role.NONE
    orientation: float = 0.0
    r_complete: bool = False
    known_neighbors: dict[int, Vec3] = field(default_factory=dict)
    leases_granted: dict[int, float] = field(default_factory=dict)
    lease_held: Optional[tuple[int, float]] = None
    last_msg_id_seen: dict[int, int] = field(default_factory=dict)
    oracle: bool = False
    oracle_source: bool = False
    next_msg_id: int = 1

    def new_message(self, kind: MsgKind, **payload) -> Message:
        msg = Message(kind, self.fid, self.swarm_id, self.next_msg_id, **payload)
        self.next_msg_id += 1
        return msg


class Discovered(NamedTuple):
    """One FLS found during radio-range expansion."""

    fid: int
    swarm_id: int
    status: Status = Status.AVAILABLE
    role: Role = Role.NONE


class AnchorCandidate(NamedTuple):
    """One party to a merge, as seen by the anchor-selection policy."""

    fid: int
    swarm_id: int
    swarm_size: int = 1
    oracle: bool = False
    challenger: bool = False


def on_deploy(fls: FlsState) -> FlsState:
    """Arrived at its dead-reckoned point: a swarm of one, ready to merge."""
    fls.swarm_id = fls.fid
    fls.status = Status.AVAILABLE
    fls.role = Role.NONE
    fls.r_complete = False
    fls.leases_granted.clear()
    fls.lease_held = None
    fls.oracle = fls.oracle_source
    return fls


def select_anchor(
    candidates: Sequence[AnchorCandidate],
    policy: AnchorPolicy,
    rng: random.Random | None = None,
) -> AnchorCandidate:
    """Pick the anchor among merge parties.

    An oracle party always anchors.  Size-based policies break ties by
    lowest swarm id; Random draws from the seeded rng.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    oracles = [c for c in candidates if c.oracle]
    if oracles:
        assert len(oracles) == 1, "two distinct swarms cannot both hold the oracle property"
        return oracles[0]
    if policy is AnchorPolicy.RANDOM:
        if rng is None:
            raise ValueError("random policy needs an rng")
        return rng.choice(sorted(candidates, key=lambda c: c.fid))
    if policy is AnchorPolicy.CHALLENGER:
        flagged = [c for c in candidates if c.challenger]
        if flagged:
            return flagged[0]
        return min(candidates, key=lambda c: (c.swarm_id, c.fid))
    if policy is AnchorPolicy.LOWEST_SWARM_ID:
        return min(candidates, key=lambda c: (c.swarm_id, c.fid))
    if policy is AnchorPolicy.LARGEST_SWARM:
        return min(candidates, key=lambda c: (-c.swarm_size, c.swarm_id, c.fid))
    if policy is AnchorPolicy.SMALLEST_SWARM:
        return min(candidates, key=lambda c: (c.swarm_size, c.swarm_id, c.fid))
    raise ValueError(f"unknown policy: {policy}")


def rank_foreign_swarms(
    fls: FlsState,
    discovered: Iterable[Discovered],
    policy: AnchorPolicy,
    rng: random.Random | None = None,
    swarm_sizes: dict[int, int] | None = None,
) -> list[tuple[int, int]]:
    """Foreign swarms in policy-preference order as (swarm_id, rep_fid).

    The representative of each swarm is its lowest-FID member in range.
    """
    reps: dict[int, int] = {}
    for d in discovered:
        if d.swarm_id == fls.swarm_id:
            continue
        if d.swarm_id not in reps or d.fid < reps[d.swarm_id]:
            reps[d.swarm_id] = d.fid
    swarms = sorted(reps.items())
    if not swarms:
        return []
    sizes = swarm_sizes or {}
    if policy is AnchorPolicy.LARGEST_SWARM:
        swarms.sort(key=lambda sr: (-sizes.get(sr[0], 1), sr[0]))
    elif policy is AnchorPolicy.SMALLEST_SWARM:
        swarms.sort(key=lambda sr: (sizes.get(sr[0], 1), sr[0]))
    elif policy is AnchorPolicy.RANDOM and rng is not None:
        rng.shuffle(swarms)
    # CHALLENGER and LOWEST_SWARM_ID keep ascending swarm-id order.
    return swarms


def issue_challenge(
    fls: FlsState,
    discovered: Sequence[Discovered],
    m_limit: float,
    policy: AnchorPolicy = AnchorPolicy.LOWEST_SWARM_ID,
    rng: random.Random | None = None,
    swarm_sizes: dict[int, int] | None = None,
) -> list[int]:
    """Choose challenge targets so at most M swarms join the merge.

    Returns representative FIDs of at most M-1 foreign swarms, in policy
    order; empty when no foreign swarm is in range.
    """
    ranked = rank_foreign_swarms(fls, discovered, policy, rng, swarm_sizes)
    if not ranked:
        return []
    if math.isinf(m_limit):
        keep = ranked
    else:
        keep = ranked[: max(0, int(m_limit) - 1)]
    return [rep for _, rep in keep]


def accepts_challenge(receiver: FlsState, challenger_swarm_id: int) -> tuple[bool, DeclineReason]:
    """The acceptance rule: available FLSs always accept; a busy FLS accepts
    only while anchoring and only challengers from higher-id swarms."""
    if receiver.swarm_id == challenger_swarm_id:
        raise ProtocolViolation("same-swarm challenge reached the protocol layer")
    if receiver.status is Status.AVAILABLE:
        return True, DeclineReason.NONE
    if receiver.role is Role.ANCHOR:
        if receiver.swarm_id < challenger_swarm_id:
            return True, DeclineReason.NONE
        return False, DeclineReason.ID_RULE
    return False, DeclineReason.BUSY


def grant_lease(anchor: FlsState, holder_fid: int, now: float, cfg: LeaseConfig) -> float:
    """Anchor-side grant; the anchor stays busy until every lease is gone."""
    expiry = now + cfg.delta
    anchor.leases_granted[holder_fid] = expiry
    anchor.status = Status.BUSY
    anchor.role = Role.ANCHOR
    return expiry


def renew_lease(anchor: FlsState, holder_fid: int, now: float, cfg: LeaseConfig) -> bool:
    """Extend a live lease by a fresh term; unknown holders are ignored."""
    if holder_fid not in anchor.leases_granted:
        return False
    anchor.leases_granted[holder_fid] = now + cfg.delta
    return True


def _maybe_unanchor(anchor: FlsState) -> None:
    if not anchor.leases_granted and anchor.role is Role.ANCHOR:
        anchor.role = Role.NONE
        anchor.status = Status.AVAILABLE


def release_lease(anchor: FlsState, holder_fid: int) -> bool:
    """Unanchor notification: drop the grant; last one frees the anchor."""
    released = anchor.leases_granted.pop(holder_fid, None) is not None
    _maybe_unanchor(anchor)
    return released


def expire_leases(anchor: FlsState, now: float) -> list[int]:
    """Drop grants past their deadline; assumes the holders have failed."""
    expired = [fid for fid, exp in anchor.leases_granted.items() if exp <= now]
    for fid in expired:
        del anchor.leases_granted[fid]
    _maybe_unanchor(anchor)
    return expired


def renewal_due(fls: FlsState, now: float, cfg: LeaseConfig) -> bool:
    """Localizer-side check: time to send the renewal for the held lease."""
    if fls.lease_held is None:
        return False
    _, expiry = fls.lease_held
    return now >= expiry - cfg.renew_fraction * cfg.delta


def apply_move_and_rejoin(
    receiver: FlsState,
    msg: Message,
    model: DeadReckoningModel,
    dim: int,
    move_threshold: float = 0.01,
) -> Optional[float]:
    """Re-home and move a swarm member; returns distance moved, or None if
    the message was discarded.

    The old-swarm-id guard makes re-application impossible: a racing loser's
    message no longer matches once the winner changed the receiver's swarm.
    An FLS holding live anchor grants also discards the message, because an
    anchor never moves while a lease is live; it re-merges later.
    """
    if msg.kind is not MsgKind.MOVE_AND_REJOIN:
        raise ValueError("not a move-and-rejoin message")
    if receiver.swarm_id != msg.old_swarm:
        return None
    if receiver.leases_granted:
        return None
    receiver.swarm_id = msg.new_swarm
    receiver.orientation = msg.orientation
    moved = 0.0
    if msg.vector.norm() > move_threshold:
        start = receiver.est_coord
        receiver.est_coord = dead_reckon(start, start + msg.vector, model, dim)
        moved = receiver.est_coord.dist(start)
    receiver.status = Status.AVAILABLE
    receiver.role = Role.NONE
    return moved


def complete_localization(
    localizer: FlsState,
    anchor_fid: int,
    anchor_swarm_id: int,
    v: Vec3,
    phi: float,
) -> tuple[Message, Message]:
    """Build the swarm-wide move order and the unanchor notice.

    The localizer adopts the anchor's swarm id immediately, so any racing
    move order for its old swarm no longer matches it.  Its own flight along
    v is executed by the caller.
    """
    mr = localizer.new_message(
        MsgKind.MOVE_AND_REJOIN,
        old_swarm=localizer.swarm_id,
        new_swarm=anchor_swarm_id,
        vector=v,
        orientation=phi,
    )
    localizer.swarm_id = anchor_swarm_id
    localizer.orientation = phi
    unanchor = localizer.new_message(MsgKind.UNANCHOR, targets=(anchor_fid,))
    return mr, unanchor


def update_r_complete(
    fls: FlsState,
    observed: Sequence[tuple[int, int, Vec3]],
    tolerance: float = 0.25,
) -> bool:
    """Relatively complete: enough same-swarm known neighbors sit where the
    ground truth says they should, relative to this FLS.

    observed entries are (fid, swarm_id, est_coord) gathered at the current
    radio range.  An R-Complete FLS stops expanding its range and stops
    challenging; it still answers challenges.
    """
    matches = 0
    for fid, swarm_id, est in observed:
        if swarm_id != fls.swarm_id:
            continue
        gt = fls.known_neighbors.get(fid)
        if gt is None:
            continue
        want = gt - fls.gt_coord
        got = est - fls.est_coord
        if got.dist(want) <= tolerance:
            matches += 1
            if matches >= fls.eta:
                break
    fls.r_complete = matches >= fls.eta
    return fls.r_complete


def pick_join_target(fls: FlsState, observed: Sequence[Discovered]) -> Optional[int]:
    """Busy-neighbor rule: a swarm of one beside a busy foreign swarm must
    localize against one of its members and join it; lowest FID wins."""
    busy = [
        d.fid
        for d in observed
        if d.swarm_id != fls.swarm_id and d.status is Status.BUSY
    ]
    return min(busy) if busy else None


def thaw_reset(fls: FlsState) -> FlsState:
    """Back to a swarm of one without moving: positions and orientation keep."""
    fls.swarm_id = fls.fid
    fls.status = Status.AVAILABLE
    fls.role = Role.NONE
    fls.r_complete = False
    fls.leases_granted.clear()
    fls.lease_held = None
    fls.oracle = fls.oracle_source
    return fls


def thaw_window(f_total: int, fixed_h: float | None = None) -> tuple[float, float]:
    """Thaw timers are drawn from [H, 2H] with H = log2(F) unless overridden."""
    h = fixed_h if fixed_h is not None else math.log2(max(f_total, 2))
    return h, 2.0 * h


def draw_thaw_deadline(
    now: float, f_total: int, rng: random.Random, fixed_h: float | None = None
) -> float:
    lo, hi = thaw_window(f_total, fixed_h)
    return now + rng.uniform(lo, hi)
