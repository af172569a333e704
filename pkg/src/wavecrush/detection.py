"""Passive countermeasures: sniffer anomaly rules and heartbeat monitoring.

Events point at frames, never at a transmitter: a forged frame carries the
gateway's own address, so there is nobody else to name.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

from .codec import (
    BROADCAST,
    GATEWAY_ID,
    AppCommand,
    FindNodesInRange,
    Frame,
    NonceGet,
    S2NonceGet,
    describe,
)

MS = 1000
HEARTBEAT_CLASS = 0x20


class Rule(enum.Enum):
    SELF_ADDRESSED = "SelfAddressed"
    FNIR_TO_GATEWAY = "FnirToGateway"
    NONCE_STORM = "NonceStorm"
    UNKNOWN_SOURCE = "UnknownSource"
    HEARTBEAT_LOST = "HeartbeatLost"


@dataclass(frozen=True)
class AnomalyEvent:
    at: int
    rule: Rule
    frame: Optional[Frame] = None
    detail: str = ""

    def __post_init__(self):
        if self.rule is Rule.SELF_ADDRESSED and (self.frame is None or not self.frame.self_addressed):
            raise ValueError("SelfAddressed needs a frame with src == dst")

    def report_line(self) -> str:
        return f"{self.at} {self.rule.value} {self.detail}".rstrip()


@dataclass(frozen=True)
class DetectorParams:
    gateway_id: int = GATEWAY_ID
    nonce_rate: int = 10  # tunable; no field data behind it
    window_ms: int = 5000


def scan_frames(
    capture: Iterable[tuple[int, Frame]],
    known_nodes: Optional[Iterable[int]] = None,
    params: DetectorParams = DetectorParams(),
) -> list[AnomalyEvent]:
    """Apply the per-frame rules to a decoded capture.

    ``known_nodes`` of None disables the UnknownSource rule.
    """
    known = None if known_nodes is None else frozenset(known_nodes)
    window_us = params.window_ms * MS
    recent: deque[int] = deque()
    storming = False
    events = []
    for t, frame in sorted(capture, key=lambda item: item[0]):
        summary = describe(frame)
        if frame.self_addressed:
            events.append(AnomalyEvent(t, Rule.SELF_ADDRESSED, frame, summary))
        if isinstance(frame.command, FindNodesInRange) and frame.dst == params.gateway_id:
            events.append(AnomalyEvent(t, Rule.FNIR_TO_GATEWAY, frame, summary))
        if known is not None and frame.src not in known:
            events.append(AnomalyEvent(t, Rule.UNKNOWN_SOURCE, frame, summary))
        if isinstance(frame.command, (NonceGet, S2NonceGet)):
            recent.append(t)
            while recent[0] <= t - window_us:
                recent.popleft()
            if len(recent) > params.nonce_rate:
                if not storming:
                    storming = True
                    detail = f"{len(recent)} nonce requests in {params.window_ms} ms"
                    events.append(AnomalyEvent(t, Rule.NONCE_STORM, frame, detail))
            else:
                storming = False
    return events


def is_heartbeat(frame: Frame, gateway_id: int = GATEWAY_ID) -> bool:
    return (
        frame.src == gateway_id
        and frame.dst == BROADCAST
        and isinstance(frame.command, AppCommand)
        and frame.command.cls == HEARTBEAT_CLASS
    )


def heartbeat_monitor(
    capture: Iterable[tuple[int, Frame]],
    interval_ms: int,
    miss_threshold: int,
    gateway_id: int = GATEWAY_ID,
    start_us: int = 0,
    end_us: Optional[int] = None,
) -> list[AnomalyEvent]:
    """One HeartbeatLost per outage longer than ``miss_threshold`` intervals.

    Monitoring starts at ``start_us`` and runs to ``end_us`` (default: the
    last captured frame). The event is stamped at the moment the silence
    crosses the threshold.
    """
    if interval_ms <= 0:
        raise ValueError("interval_ms must be positive")
    if miss_threshold < 1:
        raise ValueError("miss_threshold must be at least 1")
    frames = sorted(capture, key=lambda item: item[0])
    if end_us is None:
        end_us = frames[-1][0] if frames else start_us
    limit = miss_threshold * interval_ms * MS
    beats = [t for t, f in frames if is_heartbeat(f, gateway_id) and t >= start_us]
    events = []
    last = start_us
    for t in beats + [None]:
        horizon = end_us if t is None else t
        if horizon - last > limit:
            silent_ms = ((end_us if t is None else t) - last) // MS
            detail = f"no heartbeat from node {gateway_id} since {last} us"
            if t is not None:
                detail += f" (silent {silent_ms} ms)"
            events.append(AnomalyEvent(last + limit, Rule.HEARTBEAT_LOST, None, detail))
        if t is not None:
            last = t
    return events


def format_report(events: Iterable[AnomalyEvent]) -> str:
    ordered = sorted(events, key=lambda e: e.at)
    return "".join(e.report_line() + "\n" for e in ordered)
