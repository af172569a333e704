"""Protocol state machines for the gateway and ordinary device nodes.

Every handler is a pure transition ``(state, input) -> (state, actions)``.
States are frozen dataclasses; the simulator owns the only mutable copy and
turns the returned actions into scheduled events.

All timestamps are integer microseconds; TimingParams is expressed in
milliseconds because that is how scenarios are written.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .codec import (
    BROADCAST,
    Ack,
    AppCommand,
    CommandComplete,
    EmptyMask,
    FindNodesInRange,
    Frame,
    FrameControl,
    HeaderType,
    NonceGet,
    NonceReport,
    NopPower,
    S2NonceGet,
    S2NonceReport,
    mask_to_nodes,
)

MS = 1000


class NodeKind(enum.Enum):
    GATEWAY = "gateway"
    DEVICE = "device"


class Era(enum.Enum):
    LEGACY_S0 = "legacy-s0"
    MODERN_S2 = "modern-s2"


class BusyReason(enum.Enum):
    NONE = "none"
    FNIR_SWEEP = "fnir_sweep"
    ROUTING_NONCE = "routing_nonce"


@dataclass(frozen=True)
class TimingParams:
    nop_wait_ms: int = 120
    fnir_passes: int = 4
    route_retry_budget_ms: int = 4700
    route_attempts: int = 3
    turnaround_ms: int = 10
    hop_ms: int = 15
    app_timeout_ms: int = 5000

    def __post_init__(self):
        for name in (
            "nop_wait_ms",
            "route_retry_budget_ms",
            "route_attempts",
            "app_timeout_ms",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("turnaround_ms", "hop_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must not be negative")
        if not 1 <= self.fnir_passes <= 16:
            raise ValueError("fnir_passes must be 1..16")

    @property
    def route_budget_us(self) -> int:
        return self.route_retry_budget_ms * MS

    def fnir_duration_us(self, node_count: int) -> int:
        return self.fnir_passes * node_count * self.nop_wait_ms * MS


@dataclass(frozen=True)
class NodeProfile:
    node_id: int
    kind: NodeKind = NodeKind.DEVICE
    routing_capable: bool = True
    in_inclusion: bool = False
    era: Era = Era.LEGACY_S0
    patched: bool = False
    heartbeat_interval_ms: Optional[int] = None
    # None means "follow the patch level": on when vulnerable, off when patched
    routes_to_unknown: Optional[bool] = None

    def __post_init__(self):
        if not 1 <= self.node_id <= 232:
            raise ValueError(f"node id {self.node_id} outside 1..232")
        if self.heartbeat_interval_ms is not None and self.heartbeat_interval_ms <= 0:
            raise ValueError("heartbeat interval must be positive")

    @property
    def is_gateway(self) -> bool:
        return self.kind is NodeKind.GATEWAY

    @property
    def routes_unknown(self) -> bool:
        if self.routes_to_unknown is None:
            return not self.patched
        return self.routes_to_unknown


@dataclass(frozen=True)
class Nonce:
    value: bytes
    issued_at: int


def s0_iv(sender_nonce: bytes, receiver_nonce: bytes) -> bytes:
    """S0 initialisation vector: the sender's nonce followed by the receiver's."""
    if len(sender_nonce) != 8 or len(receiver_nonce) != 8:
        raise ValueError("S0 nonces are 8 bytes each")
    return bytes(sender_nonce) + bytes(receiver_nonce)


@dataclass(frozen=True)
class RouteJob:
    """A Nonce Report the gateway keeps trying to route."""

    dst: int
    report: Union[NonceReport, S2NonceReport]
    attempts_total: int
    attempts_left: int
    # both unset until the job reaches the head of the queue
    started_us: Optional[int] = None
    next_attempt_us: Optional[int] = None


@dataclass(frozen=True)
class AppEntry:
    command: AppCommand
    queued_at: int
    dst: int = BROADCAST


@dataclass(frozen=True)
class NodeState:
    node_id: int
    home_id: int
    busy_until: Optional[int] = None
    busy_reason: BusyReason = BusyReason.NONE
    nonce_seed: int = 0
    nonces_issued: int = 0

    def is_busy(self, now: int) -> bool:
        # the instant busy_until is reached the node counts as idle
        return self.busy_until is not None and now < self.busy_until


@dataclass(frozen=True)
class DeviceState(NodeState):
    pass


@dataclass(frozen=True)
class GatewayState(NodeState):
    route_queue: tuple[RouteJob, ...] = ()
    app_inbox: tuple[AppEntry, ...] = ()
    known_nodes: frozenset = field(default_factory=frozenset)
    s2_seq_seen: Optional[int] = None
    # routing-capable neighbours, ascending; route candidates for Nonce Reports
    repeaters: tuple[int, ...] = ()


# -- actions -----------------------------------------------------------------


@dataclass(frozen=True)
class Transmit:
    frame: Frame
    at: int


@dataclass(frozen=True)
class SetBusy:
    until: int
    reason: BusyReason


@dataclass(frozen=True)
class EmitEvent:
    tag: str
    at: int
    detail: str = ""


@dataclass(frozen=True)
class DropFrame:
    reason: str
    frame: Optional[Frame] = None


Action = Union[Transmit, SetBusy, EmitEvent, DropFrame]


# -- helpers -----------------------------------------------------------------


def issue_nonce(state: NodeState, now: int, size: int) -> tuple[NodeState, Nonce]:
    """Derive the next nonce for this node from its seed and counter."""
    key = state.nonce_seed.to_bytes(8, "big", signed=True)
    data = struct.pack(">BQ", state.node_id, state.nonces_issued)
    value = hashlib.blake2b(data, digest_size=size, key=key).digest()
    return replace(state, nonces_issued=state.nonces_issued + 1), Nonce(value, now)


def _ack_for(frame: Frame, own_id: int) -> Frame:
    return Frame(
        frame.home_id,
        own_id,
        frame.src,
        Ack(),
        FrameControl(HeaderType.ACK, seq=frame.ctrl.seq),
    )


def _answer_nonce_get(state, frame: Frame, now: int, timing: TimingParams):
    """Issue a fresh nonce and address a report back to the requester."""
    if isinstance(frame.command, S2NonceGet):
        seq = state.nonces_issued & 0xFF
        state, nonce = issue_nonce(state, now, 16)
        report: Union[NonceReport, S2NonceReport] = S2NonceReport(seq, nonce.value)
    else:
        state, nonce = issue_nonce(state, now, 8)
        report = NonceReport(nonce.value)
    reply = Frame(
        state.home_id,
        state.node_id,
        frame.src,
        report,
        FrameControl(ack_requested=True),
    )
    actions: list[Action] = [
        EmitEvent("nonce_issued", now, nonce.value.hex().upper()),
        Transmit(reply, now + timing.turnaround_ms * MS),
    ]
    return state, report, actions


def _is_nonce_get(frame: Frame) -> bool:
    return isinstance(frame.command, (NonceGet, S2NonceGet))


def _drop(state, reason: str, frame: Optional[Frame] = None):
    return state, [DropFrame(reason, frame)]


# -- gateway -----------------------------------------------------------------


def gateway_handle_frame(
    state: GatewayState,
    profile: NodeProfile,
    frame: Frame,
    now: int,
    timing: TimingParams,
) -> tuple[GatewayState, list[Action]]:
    if frame.home_id != state.home_id:
        return _drop(state, "home id mismatch", frame)
    if frame.dst not in (state.node_id, BROADCAST) or frame.next_hop is not None:
        return state, []
    cmd = frame.command
    if isinstance(cmd, Ack):
        return state, []
    if frame.ctrl.header_type is HeaderType.MULTICAST and _is_nonce_get(frame):
        return _drop(state, "multicast", frame)

    if _is_nonce_get(frame):
        # the stack keeps queueing Nonce Reports while it is stuck routing
        if state.is_busy(now) and state.busy_reason is not BusyReason.ROUTING_NONCE:
            return _drop(state, "gateway busy", frame)
        return _gateway_nonce_get(state, profile, frame, now, timing)

    if state.is_busy(now):
        return _drop(state, "gateway busy", frame)
    if isinstance(cmd, FindNodesInRange):
        if profile.patched:
            return _drop(state, "not in inclusion", frame)
        return execute_fnir(state, profile, cmd.mask, now, timing)
    return state, []


def _gateway_nonce_get(state: GatewayState, profile, frame, now, timing):
    src = frame.src
    is_self = src == state.node_id
    unknown = src not in state.known_nodes
    if (is_self or unknown) and profile.patched:
        return _drop(state, "self-or-unknown destination", frame)
    if isinstance(frame.command, S2NonceGet):
        if profile.era is Era.LEGACY_S0:
            return _drop(state, "S2 unsupported", frame)
        if state.s2_seq_seen == frame.command.seq:
            return _drop(state, "duplicate S2 sequence", frame)
        state = replace(state, s2_seq_seen=frame.command.seq)

    state, report, actions = _answer_nonce_get(state, frame, now, timing)
    needs_routing = is_self or (unknown and profile.routes_unknown)
    if not needs_routing:
        return state, actions
    if not state.repeaters:
        # nobody to route through: the lost report costs nothing
        actions.append(EmitEvent("no_route", now, f"report to {src} undeliverable"))
        return state, actions

    budget = timing.route_budget_us
    attempts = timing.route_attempts
    job = RouteJob(src, report, attempts, attempts)
    if state.route_queue:
        base = state.busy_until
    else:
        base = now
        job = replace(job, started_us=now, next_attempt_us=now + budget // (attempts + 1))
    until = base + budget
    state = replace(
        state,
        route_queue=state.route_queue + (job,),
        busy_until=until,
        busy_reason=BusyReason.ROUTING_NONCE,
    )
    actions.append(SetBusy(until, BusyReason.ROUTING_NONCE))
    return state, actions


def route_step(
    state: GatewayState, now: int, timing: TimingParams
) -> tuple[GatewayState, list[Action]]:
    """Advance the head routing job if its next attempt is due.

    Attempts are spread evenly over the retry budget; the slot before the
    first routed attempt is the direct try that never gets its Ack. A job is
    retired exactly ``route_retry_budget_ms`` after it started.
    """
    if not state.route_queue:
        return state, []
    job = state.route_queue[0]
    if job.next_attempt_us is None or now < job.next_attempt_us:
        return state, []
    budget = timing.route_budget_us

    if job.attempts_left == 0:
        rest = state.route_queue[1:]
        actions: list[Action] = [EmitEvent("route_exhausted", now, f"report to {job.dst}")]
        if not rest:
            state = replace(state, route_queue=(), busy_until=None, busy_reason=BusyReason.NONE)
            return state, actions
        head = rest[0]
        head = replace(
            head,
            started_us=now,
            next_attempt_us=now + budget // (head.attempts_total + 1),
        )
        return replace(state, route_queue=(head,) + rest[1:]), actions

    made = job.attempts_total - job.attempts_left
    repeater = state.repeaters[made % len(state.repeaters)]
    routed = Frame(
        state.home_id,
        state.node_id,
        job.dst,
        job.report,
        FrameControl(ack_requested=True, routed=True),
        repeaters=(repeater,),
    )
    left = job.attempts_left - 1
    if left:
        nxt = job.started_us + (made + 2) * budget // (job.attempts_total + 1)
    else:
        nxt = job.started_us + budget
    job = replace(job, attempts_left=left, next_attempt_us=nxt)
    state = replace(state, route_queue=(job,) + state.route_queue[1:])
    return state, [Transmit(routed, now)]


def execute_fnir(
    state: NodeState,
    profile: NodeProfile,
    mask: bytes,
    now: int,
    timing: TimingParams,
    requester: Optional[int] = None,
) -> tuple[NodeState, list[Action]]:
    """Sweep the mask with NOP Power probes, ``fnir_passes`` times over."""
    try:
        nodes = mask_to_nodes(mask)
    except EmptyMask:
        return state, []
    if not nodes:
        return state, []
    step = timing.nop_wait_ms * MS
    actions: list[Action] = []
    t = now
    for _ in range(timing.fnir_passes):
        for node in nodes:
            probe = Frame(state.home_id, state.node_id, node, NopPower(), FrameControl(ack_requested=True))
            actions.append(Transmit(probe, t))
            t += step
    until = now + timing.fnir_duration_us(len(nodes))
    assert t == until
    actions.append(SetBusy(until, BusyReason.FNIR_SWEEP))
    if profile.is_gateway:
        if profile.era is Era.LEGACY_S0:
            done = Frame(state.home_id, state.node_id, BROADCAST, CommandComplete())
            actions.append(Transmit(done, until))
    elif requester is not None:
        done = Frame(state.home_id, state.node_id, requester, CommandComplete(), FrameControl(ack_requested=True))
        actions.append(Transmit(done, until))
    return replace(state, busy_until=until, busy_reason=BusyReason.FNIR_SWEEP), actions


def enqueue_app_command(
    state: GatewayState, cmd: AppCommand, now: int, dst: int = BROADCAST
) -> GatewayState:
    return replace(state, app_inbox=state.app_inbox + (AppEntry(cmd, now, dst),))


def gateway_tick(
    state: GatewayState, now: int, timing: TimingParams
) -> tuple[GatewayState, list[Action]]:
    """Housekeeping: leave an expired busy period, then serve or expire the
    smartphone-app inbox."""
    if (
        state.busy_until is not None
        and now >= state.busy_until
        and not state.route_queue
    ):
        state = replace(state, busy_until=None, busy_reason=BusyReason.NONE)
    if not state.app_inbox:
        return state, []
    actions: list[Action] = []
    if not state.is_busy(now):
        for entry in state.app_inbox:
            actions.append(EmitEvent("app_processed", now, _app_detail(entry)))
            out = Frame(
                state.home_id,
                state.node_id,
                entry.dst,
                entry.command,
                FrameControl(ack_requested=entry.dst != BROADCAST),
            )
            actions.append(Transmit(out, now))
        return replace(state, app_inbox=()), actions
    timeout = timing.app_timeout_ms * MS
    kept = []
    for entry in state.app_inbox:
        if now >= entry.queued_at + timeout:
            actions.append(EmitEvent("app_blocked", now, _app_detail(entry)))
        else:
            kept.append(entry)
    return replace(state, app_inbox=tuple(kept)), actions


def _app_detail(entry: AppEntry) -> str:
    cmd = entry.command
    payload = bytes([cmd.cls]) + (bytes([cmd.cmd]) + cmd.params if cmd.cmd is not None else b"")
    return f"to={entry.dst} payload={payload.hex().upper()} queued={entry.queued_at}"


def gateway_heartbeat(
    state: GatewayState, now: int, command: AppCommand
) -> tuple[GatewayState, list[Action]]:
    """Broadcast a liveness beacon, unless the gateway is tied up."""
    if state.is_busy(now):
        return state, [EmitEvent("heartbeat_skipped", now)]
    beacon = Frame(state.home_id, state.node_id, BROADCAST, command)
    return state, [Transmit(beacon, now)]


# -- devices -----------------------------------------------------------------


def device_handle_frame(
    state: DeviceState,
    profile: NodeProfile,
    frame: Frame,
    now: int,
    timing: TimingParams,
) -> tuple[DeviceState, list[Action]]:
    if frame.home_id != state.home_id:
        return _drop(state, "home id mismatch", frame)
    hop = frame.next_hop
    if hop is not None:
        if hop != state.node_id:
            return state, []
        if not profile.routing_capable:
            return _drop(state, "not a repeater", frame)
        forwarded = replace(frame, hop=frame.hop + 1)
        return state, [Transmit(forwarded, now + timing.hop_ms * MS)]
    if frame.dst not in (state.node_id, BROADCAST):
        return state, []
    cmd = frame.command
    if isinstance(cmd, Ack):
        return state, []
    if state.is_busy(now):
        return _drop(state, "node busy", frame)

    if _is_nonce_get(frame):
        if frame.ctrl.header_type is HeaderType.MULTICAST:
            return _drop(state, "multicast", frame)
        state, _, actions = _answer_nonce_get(state, frame, now, timing)
        return state, actions
    if isinstance(cmd, FindNodesInRange):
        if not profile.in_inclusion:
            return _drop(state, "not in inclusion", frame)
        return execute_fnir(state, profile, cmd.mask, now, timing, requester=frame.src)
    if frame.dst == state.node_id and frame.ctrl.ack_requested:
        if isinstance(cmd, (NopPower, AppCommand, CommandComplete)):
            return state, [Transmit(_ack_for(frame, state.node_id), now + timing.turnaround_ms * MS)]
    return state, []
