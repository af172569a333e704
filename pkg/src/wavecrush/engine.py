"""Deterministic discrete-event simulation of one Z-Wave network.

The medium is a symmetric "who hears whom" graph with a fixed propagation
delay; airtime and collisions are not modeled. The attacker is a
pseudo-node (id ``ATTACKER``) that also acts as the passive sniffer.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Optional

from .attacks import Attacker
from .codec import DEFAULT_IDS, CommandIds, Frame, command_name, decode_frame, encode_frame
from .detection import AnomalyEvent, DetectorParams, heartbeat_monitor, is_heartbeat, scan_frames
from .nodes import (
    MS,
    Action,
    BusyReason,
    DeviceState,
    DropFrame,
    EmitEvent,
    GatewayState,
    NodeProfile,
    SetBusy,
    Transmit,
    device_handle_frame,
    enqueue_app_command,
    gateway_handle_frame,
    gateway_heartbeat,
    gateway_tick,
    route_step,
)
from .scenario import ATTACKER, Scenario, Topology

log = logging.getLogger(__name__)


class EventKind(enum.Enum):
    TRANSMIT = "transmit"
    DELIVER = "deliver"
    NODE_TIMER = "node_timer"
    ATTACKER_TICK = "attacker_tick"
    HEARTBEAT_DUE = "heartbeat_due"
    APP_SUBMIT = "app_submit"
    END = "end"


@dataclass(frozen=True)
class Event:
    at: int
    kind: EventKind
    node: Optional[int] = None
    payload: Any = None


def deliver(topology: Topology, frame: Frame, sender: int, now: int, prop_delay_us: int = 1000) -> list[Event]:
    """One Deliver event per listener in range of ``sender``.

    The attacker's sniffer overhears everything from nodes it can hear.
    A transmitter never receives its own frame.
    """
    listeners = [n for n in topology.neighbors(sender) if n != sender]
    if sender != ATTACKER and sender in topology.attacker_hears:
        listeners.append(ATTACKER)
    return [Event(now + prop_delay_us, EventKind.DELIVER, n, (frame, sender)) for n in listeners]


@dataclass
class BusyInterval:
    start: int
    end: int
    reason: BusyReason


@dataclass
class RunMetrics:
    duration_us: int
    seed: int = 0
    busy_intervals: list[BusyInterval] = field(default_factory=list)
    app_submitted: int = 0
    app_processed: int = 0
    app_blocked: int = 0
    frames_on_air: Counter = field(default_factory=Counter)
    attack_frames_sent: int = 0
    drops: Counter = field(default_factory=Counter)
    nonces_issued: int = 0
    heartbeats_sent: int = 0
    heartbeats_skipped: int = 0
    detection_events: list[AnomalyEvent] = field(default_factory=list)

    def busy_us(self, reason: Optional[BusyReason] = None, start: int = 0, end: Optional[int] = None) -> int:
        end = self.duration_us if end is None else min(end, self.duration_us)
        total = 0
        for iv in self.busy_intervals:
            if reason is not None and iv.reason is not reason:
                continue
            lo, hi = max(iv.start, start), min(iv.end, end)
            if hi > lo:
                total += hi - lo
        return total

    @property
    def gateway_busy_ms(self) -> float:
        return self.busy_us() / MS

    def idle_fraction(self, start: int, end: int) -> float:
        if end <= start:
            raise ValueError("empty window")
        return 1 - self.busy_us(start=start, end=end) / (end - start)

    @property
    def first_block_us(self) -> Optional[int]:
        return self.busy_intervals[0].start if self.busy_intervals else None

    @property
    def last_block_us(self) -> Optional[int]:
        if not self.busy_intervals:
            return None
        return min(self.busy_intervals[-1].end, self.duration_us)

    def as_dict(self) -> dict[str, str]:
        out = {
            "duration_ms": _ms(self.duration_us),
            "seed": str(self.seed),
            "gateway_busy_ms": _ms(self.busy_us()),
            "app_submitted": str(self.app_submitted),
            "app_processed": str(self.app_processed),
            "app_blocked": str(self.app_blocked),
            "attack_frames_sent": str(self.attack_frames_sent),
            "frames_on_air": str(sum(self.frames_on_air.values())),
            "nonces_issued": str(self.nonces_issued),
            "heartbeats_sent": str(self.heartbeats_sent),
            "heartbeats_skipped": str(self.heartbeats_skipped),
            "busy_intervals": str(len(self.busy_intervals)),
            "first_block_us": str(self.first_block_us) if self.first_block_us is not None else "none",
            "last_block_us": str(self.last_block_us) if self.last_block_us is not None else "none",
            "detection_events": str(len(self.detection_events)),
        }
        for reason in (BusyReason.FNIR_SWEEP, BusyReason.ROUTING_NONCE):
            out[f"gateway_busy_ms.{reason.value}"] = _ms(self.busy_us(reason))
        for name, n in self.frames_on_air.items():
            out[f"frames_on_air.{name}"] = str(n)
        for reason, n in self.drops.items():
            out[f"drops.{reason.replace(' ', '_')}"] = str(n)
        for rule, n in Counter(e.rule.value for e in self.detection_events).items():
            out[f"detection_events.{rule}"] = str(n)
        return out

    def report(self) -> str:
        items = self.as_dict()
        return "".join(f"{k} = {items[k]}\n" for k in sorted(items))


def _ms(us: int) -> str:
    return str(us // MS) if us % MS == 0 else f"{us / MS:.3f}"


@dataclass
class RunResult:
    metrics: RunMetrics
    capture: list[tuple[int, bytes]]
    events: list[EmitEvent]


class DuplicateNonce(RuntimeError):
    pass


class Simulator:
    def __init__(self, scenario: Scenario, ids: CommandIds = DEFAULT_IDS):
        self.scenario = scenario.validate()
        self.ids = ids
        self.topology = scenario.topology
        self.timing = scenario.timing
        self.gateway: NodeProfile = self.topology.gateway
        self.gw_id = self.gateway.node_id
        self.profiles = {p.node_id: p for p in self.topology.nodes}
        self.duration_us = scenario.duration_ms * MS
        self.metrics = RunMetrics(self.duration_us, scenario.seed)
        self.capture: list[tuple[int, bytes]] = []
        self.decoded: list[tuple[int, Frame]] = []
        self.emitted: list[EmitEvent] = []
        self._queue: list = []
        self._counter = itertools.count()
        self._timers: set[tuple[str, int]] = set()
        self._nonces: set[bytes] = set()
        self.now = 0

        gw = self.gateway
        repeaters = tuple(
            n for n in self.topology.neighbors(gw.node_id) if self.profiles[n].routing_capable
        )
        self.states: dict[int, Any] = {}
        for p in self.topology.nodes:
            if p.is_gateway:
                self.states[p.node_id] = GatewayState(
                    p.node_id,
                    scenario.home_id,
                    nonce_seed=scenario.seed,
                    known_nodes=frozenset(self.topology.ids) - {p.node_id},
                    repeaters=repeaters,
                )
            else:
                self.states[p.node_id] = DeviceState(p.node_id, scenario.home_id, nonce_seed=scenario.seed)
        self.attacker = (
            Attacker(scenario.attack, ids, gateway_id=gw.node_id) if scenario.attack else None
        )
        self._seed_events()

    # -- scheduling ------------------------------------------------------

    def _push(self, event: Event) -> None:
        if event.at < self.now:
            raise RuntimeError(f"causality violation: {event} scheduled at {self.now}")
        heapq.heappush(self._queue, (event.at, next(self._counter), event))

    def _timer(self, tag: str, at: int) -> None:
        if (tag, at) not in self._timers:
            self._timers.add((tag, at))
            self._push(Event(at, EventKind.NODE_TIMER, self.gw_id, tag))

    def _seed_events(self) -> None:
        s = self.scenario
        self._push(Event(self.duration_us, EventKind.END))
        interval = self.gateway.heartbeat_interval_ms
        if interval:
            self._push(Event(interval * MS, EventKind.HEARTBEAT_DUE, self.gw_id))
        for send in s.app_schedule:
            self._push(Event(send.at_ms * MS, EventKind.APP_SUBMIT, self.gw_id, send))

    # -- main loop -------------------------------------------------------

    def inject(self, frame: Frame, at: int, sender: int = ATTACKER) -> None:
        """Put an extra frame on the air at ``at`` (before :meth:`run`)."""
        self._push(Event(at, EventKind.TRANSMIT, sender, frame))

    def run(self) -> RunResult:
        while self._queue:
            at, _, event = heapq.heappop(self._queue)
            self.now = at
            if event.kind is EventKind.END:
                break
            self._dispatch(event)
        self._finish()
        return RunResult(self.metrics, self.capture, self.emitted)

    def _dispatch(self, event: Event) -> None:
        kind = event.kind
        if kind is EventKind.TRANSMIT:
            self._transmit(event.node, event.payload)
        elif kind is EventKind.DELIVER:
            frame, _sender = event.payload
            if event.node == ATTACKER:
                self._attacker_hears(frame)
            else:
                self._node_receives(event.node, frame)
        elif kind is EventKind.NODE_TIMER:
            self._timers.discard((event.payload, event.at))
            if event.payload == "route":
                self._apply_gateway(*route_step(self.states[self.gw_id], self.now, self.timing))
            else:
                self._apply_gateway(*gateway_tick(self.states[self.gw_id], self.now, self.timing))
        elif kind is EventKind.ATTACKER_TICK:
            frame = self.attacker.fire(self.now)
            if frame is not None:
                self._transmit(ATTACKER, frame)
                if self.attacker.next_at is not None:
                    self._push(Event(self.attacker.next_at, EventKind.ATTACKER_TICK))
        elif kind is EventKind.HEARTBEAT_DUE:
            state = self.states[self.gw_id]
            self._apply_gateway(*gateway_heartbeat(state, self.now, self.scenario.heartbeat.command))
            self._push(Event(self.now + self.gateway.heartbeat_interval_ms * MS, EventKind.HEARTBEAT_DUE, self.gw_id))
        elif kind is EventKind.APP_SUBMIT:
            send = event.payload
            self.metrics.app_submitted += 1
            state = enqueue_app_command(self.states[self.gw_id], send.command, self.now, send.dst)
            self.states[self.gw_id] = state
            self._timer("tick", self.now)
            self._timer("tick", self.now + self.timing.app_timeout_ms * MS)

    def _transmit(self, sender: int, frame: Frame) -> None:
        raw = encode_frame(frame, self.ids)
        self.capture.append((self.now, raw))
        self.decoded.append((self.now, frame))
        self.metrics.frames_on_air[command_name(frame.command)] += 1
        if sender == ATTACKER:
            self.metrics.attack_frames_sent += 1
        elif sender == self.gw_id and is_heartbeat(frame, self.gw_id):
            self.metrics.heartbeats_sent += 1
        # receivers see what was on the air, not the sender's object
        on_air = decode_frame(raw, self.ids)
        for ev in deliver(self.topology, on_air, sender, self.now, self.scenario.prop_delay_us):
            self._push(ev)

    def _attacker_hears(self, frame: Frame) -> None:
        if self.attacker is None:
            return
        due = self.attacker.observe(encode_frame(frame, self.ids), self.now)
        if due is not None:
            self._push(Event(due, EventKind.ATTACKER_TICK))

    def _node_receives(self, node_id: int, frame: Frame) -> None:
        profile = self.profiles[node_id]
        state = self.states[node_id]
        if profile.is_gateway:
            self._apply_gateway(*gateway_handle_frame(state, profile, frame, self.now, self.timing))
        else:
            state, actions = device_handle_frame(state, profile, frame, self.now, self.timing)
            self.states[node_id] = state
            self._apply(node_id, actions)

    def _apply_gateway(self, state: GatewayState, actions: list[Action]) -> None:
        self.states[self.gw_id] = state
        self._apply(self.gw_id, actions)
        if state.busy_until is not None and state.busy_until >= self.now:
            self._timer("tick", state.busy_until)
        if state.route_queue and state.route_queue[0].next_attempt_us is not None:
            self._timer("route", max(self.now, state.route_queue[0].next_attempt_us))

    def _apply(self, node_id: int, actions: list[Action]) -> None:
        for action in actions:
            if isinstance(action, Transmit):
                self._push(Event(action.at, EventKind.TRANSMIT, node_id, action.frame))
            elif isinstance(action, SetBusy):
                if node_id == self.gw_id:
                    self._record_busy(action)
            elif isinstance(action, EmitEvent):
                self._record_event(action)
            elif isinstance(action, DropFrame):
                self.metrics.drops[action.reason] += 1

    def _record_busy(self, action: SetBusy) -> None:
        intervals = self.metrics.busy_intervals
        last = intervals[-1] if intervals else None
        if last is not None and last.reason is action.reason and last.end >= self.now:
            last.end = max(last.end, action.until)
        elif action.until > self.now:
            intervals.append(BusyInterval(self.now, action.until, action.reason))

    def _record_event(self, event: EmitEvent) -> None:
        self.emitted.append(event)
        m = self.metrics
        if event.tag == "app_processed":
            m.app_processed += 1
        elif event.tag == "app_blocked":
            m.app_blocked += 1
        elif event.tag == "heartbeat_skipped":
            m.heartbeats_skipped += 1
        elif event.tag == "nonce_issued":
            value = bytes.fromhex(event.detail)
            if value in self._nonces:
                raise DuplicateNonce(event.detail)
            self._nonces.add(value)
            m.nonces_issued += 1

    def _finish(self) -> None:
        known = self.topology.ids
        events = scan_frames(self.decoded, known, DetectorParams(gateway_id=self.gw_id))
        interval = self.gateway.heartbeat_interval_ms
        if interval:
            events += heartbeat_monitor(
                self.decoded,
                interval,
                self.scenario.heartbeat.miss_threshold,
                self.gw_id,
                end_us=self.duration_us,
            )
        self.metrics.detection_events = sorted(events, key=lambda e: e.at)
        log.debug("run finished: %s", self.metrics.as_dict())


def run(scenario: Scenario, ids: CommandIds = DEFAULT_IDS) -> RunResult:
    return Simulator(scenario, ids).run()
