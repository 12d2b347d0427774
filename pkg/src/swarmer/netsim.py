"""Simulated broadcast medium: radio-range-gated delivery over ground-truth
distances, symmetric/asymmetric probabilistic packet loss, monotone
message-id deduplication, and same-swarm challenge filtering.

Delivery order within a timestep is fully deterministic: ascending
(deliver_at, recipient FID, sender FID, msg_id).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from swarmer.geometry import Vec3
from swarmer.protocol import FlsState, Message, MsgKind


class RangeError(Exception):
    """Requested broadcast range exceeds transmitter power."""


def doubling_schedule(default_range: float, max_range: float) -> tuple[float, ...]:
    """Range-expansion steps: double from the default until the maximum."""
    steps = [default_range]
    while steps[-1] < max_range:
        steps.append(min(steps[-1] * 2.0, max_range))
    return tuple(steps)


@dataclass(frozen=True)
class RadioConfig:
    default_range: float
    max_range: float
    expand_schedule: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not 0 < self.default_range <= self.max_range:
            raise ValueError("need 0 < default_range <= max_range")
        if not self.expand_schedule:
            object.__setattr__(
                self, "expand_schedule", doubling_schedule(self.default_range, self.max_range)
            )
        sched = self.expand_schedule
        if any(b <= a for a, b in zip(sched, sched[1:])) or sched[-1] != self.max_range:
            raise ValueError("schedule must increase strictly and end at max_range")


@dataclass
class LossModel:
    """Drop packets at the transmitter, the receiver, or both."""

    mode: str = "none"
    rate: float = 0.0
    rng_seed: int = 0
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in ("none", "tx", "rx", "both"):
            raise ValueError(f"unknown loss mode: {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("loss rate must be in [0, 1]")
        self.rng = random.Random(self.rng_seed)

    def drop_tx(self) -> bool:
        return self.mode in ("tx", "both") and self.rng.random() < self.rate

    def drop_rx(self) -> bool:
        return self.mode in ("rx", "both") and self.rng.random() < self.rate


@dataclass(frozen=True)
class InFlight:
    """One copy of a broadcast on its way to a recipient."""

    msg: Message
    sender_pos: Vec3  # ground truth; range gating ignores estimated drift
    range: float
    deliver_at: float
    recipient: int

    def sort_key(self) -> tuple:
        return (self.deliver_at, self.recipient, self.msg.sender_fid, self.msg.msg_id)


class Medium:
    """The single serialization point between agents.

    Positions are ground-truth coordinates: the wrapper decides reachability
    from the shape, not from the estimated positions.
    """

    def __init__(self, radio: RadioConfig, loss: LossModel | None = None, latency_s: float = 0.001):
        self.radio = radio
        self.loss = loss or LossModel()
        self.latency_s = latency_s
        self._pos: dict[int, Vec3] = {}
        self._fid_arr: np.ndarray | None = None
        self._arr: np.ndarray | None = None

    # -- membership -----------------------------------------------------

    def register(self, fid: int, gt_pos: Vec3) -> None:
        self._pos[fid] = gt_pos
        self._fid_arr = None
        self._arr = None

    def unregister(self, fid: int) -> None:
        self._pos.pop(fid, None)
        self._fid_arr = None
        self._arr = None

    def _tables(self) -> tuple[np.ndarray, np.ndarray]:
        if self._arr is None:
            fids = sorted(self._pos)
            self._fid_arr = np.array(fids, dtype=np.int64)
            self._arr = np.array(
                [self._pos[f].as_tuple() for f in fids], dtype=np.float64
            ).reshape(len(fids), 3)
        return self._fid_arr, self._arr

    def distances_from(self, fid: int) -> tuple[np.ndarray, np.ndarray]:
        """Ground-truth distance from one FLS to every registered FLS."""
        fids, arr = self._tables()
        p = np.array(self._pos[fid].as_tuple())
        diff = arr - p
        return fids, np.sqrt((diff * diff).sum(axis=1))

    def neighbors_within(self, fid: int, range_: float) -> list[int]:
        """FIDs whose ground-truth distance to fid is <= range, sender excluded."""
        fids, dist = self.distances_from(fid)
        mask = (dist <= range_) & (fids != fid)
        return [int(f) for f in fids[mask]]

    # -- transmission ---------------------------------------------------

    def broadcast(
        self,
        now: float,
        sender_fid: int,
        msg: Message,
        range_: float,
        recipients: list[int] | None = None,
    ) -> list[InFlight]:
        """Emit one transmission; returns the surviving per-recipient copies.

        An explicit recipient list narrows addressed traffic (swarm-internal
        or point-to-point) but never widens past the radio range.
        """
        if range_ > self.radio.max_range:
            raise RangeError(
                f"range {range_} exceeds transmitter power {self.radio.max_range}"
            )
        if self.loss.drop_tx():
            return []
        in_range = self.neighbors_within(sender_fid, range_)
        if recipients is not None:
            allowed = set(in_range)
            targets = [r for r in sorted(recipients) if r in allowed]
        else:
            targets = in_range
        sender_pos = self._pos[sender_fid]
        out = []
        for rcpt in targets:  # ascending fid: deterministic loss draws
            if self.loss.drop_rx():
                continue
            out.append(
                InFlight(
                    msg=msg,
                    sender_pos=sender_pos,
                    range=range_,
                    deliver_at=now + self.latency_s,
                    recipient=rcpt,
                )
            )
        return out


def wrapper_filter(receiver: FlsState, msg: Message) -> bool:
    """Medium-side drop of challenges inside one swarm; True means deliver."""
    if msg.kind is MsgKind.CHALLENGE and msg.sender_swarm_id == receiver.swarm_id:
        return False
    return True


def dedup_filter(receiver: FlsState, msg: Message) -> bool:
    """Accept only message ids above the per-sender watermark."""
    last = receiver.last_msg_id_seen.get(msg.sender_fid, 0)
    if msg.msg_id <= last:
        return False
    receiver.last_msg_id_seen[msg.sender_fid] = msg.msg_id
    return True
