"""Scenario model and its config file format.

A scenario file is INI-style with flat sections::

    [scenario]    duration_ms, seed, home_id
    [node <id>]   kind, era, patched, routing, inclusion, routes_to_unknown
    [radio]       links, attacker_hears, prop_delay_us
    [timing]      any TimingParams field
    [attack]      kind, count, interval_ms, start_ms, command_complete_timing,
                  spoof_src, target_dst
    [heartbeat]   interval_ms, miss_threshold, command
    [app]         send (one "<at_ms> <dst> <hex payload>" per line),
                  periodic (one "<start_ms> <every_ms> <count> <dst> <hex>" per line)

Unknown sections and keys are errors.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

from .attacks import AttackKind, AttackPlan
from .codec import BROADCAST, AppCommand, parse_command
from .nodes import Era, NodeKind, NodeProfile, TimingParams

ATTACKER = -1


class InvalidScenario(ValueError):
    """Carries every problem found, as ``(field, message)`` pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{where}: {what}" for where, what in problems))


@dataclass(frozen=True)
class Topology:
    nodes: tuple[NodeProfile, ...]
    links: frozenset = frozenset()  # frozenset of 2-element frozensets
    attacker_hears: frozenset = frozenset()

    @property
    def ids(self) -> list[int]:
        return sorted(p.node_id for p in self.nodes)

    @property
    def gateway(self) -> NodeProfile:
        return next(p for p in self.nodes if p.is_gateway)

    def profile(self, node_id: int) -> NodeProfile:
        return next(p for p in self.nodes if p.node_id == node_id)

    def neighbors(self, node_id: int) -> list[int]:
        if node_id == ATTACKER:
            return sorted(self.attacker_hears)
        return sorted(n for link in self.links if node_id in link for n in link if n != node_id)

    def problems(self) -> list[tuple[str, str]]:
        out = []
        ids = [p.node_id for p in self.nodes]
        if len(set(ids)) != len(ids):
            out.append(("node", "duplicate node id"))
        gateways = [p for p in self.nodes if p.is_gateway]
        if len(gateways) != 1:
            out.append(("node", f"need exactly one gateway, found {len(gateways)}"))
        for link in self.links:
            if len(link) != 2:
                out.append(("radio.links", "a node cannot link to itself"))
            for n in link:
                if n not in ids:
                    out.append(("radio.links", f"link to unknown node {n}"))
        for n in self.attacker_hears:
            if n not in ids:
                out.append(("radio.attacker_hears", f"unknown node {n}"))
        return out


@dataclass(frozen=True)
class AppSend:
    at_ms: int
    dst: int
    command: AppCommand


@dataclass(frozen=True)
class HeartbeatSettings:
    interval_ms: Optional[int] = None
    miss_threshold: int = 3
    command: AppCommand = AppCommand(0x20, 0x02)


@dataclass(frozen=True)
class Scenario:
    duration_ms: int
    topology: Topology
    home_id: int = 0xC0FFEE01
    seed: int = 0
    timing: TimingParams = field(default_factory=TimingParams)
    attack: Optional[AttackPlan] = None
    app_schedule: tuple[AppSend, ...] = ()
    heartbeat: HeartbeatSettings = field(default_factory=HeartbeatSettings)
    prop_delay_us: int = 1000

    def validate(self) -> "Scenario":
        problems = list(self.topology.problems())
        if self.duration_ms <= 0:
            problems.append(("scenario.duration_ms", "must be positive"))
        if not 0 <= self.home_id <= 0xFFFFFFFF:
            problems.append(("scenario.home_id", "must fit 32 bits"))
        if self.prop_delay_us < 0:
            problems.append(("radio.prop_delay_us", "must not be negative"))
        ids = set(self.topology.ids)
        for i, send in enumerate(self.app_schedule):
            if send.at_ms < 0:
                problems.append((f"app.send[{i}]", "negative time"))
            if send.dst != BROADCAST and send.dst not in ids:
                problems.append((f"app.send[{i}]", f"unknown destination {send.dst}"))
        if self.heartbeat.miss_threshold < 1:
            problems.append(("heartbeat.miss_threshold", "must be at least 1"))
        if problems:
            raise InvalidScenario(problems)
        return self


# -- config parsing ----------------------------------------------------------

_NODE_SECTION = re.compile(r"node\s+(\d+)$")
_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}

_NODE_KEYS = {"kind", "era", "patched", "routing", "inclusion", "routes_to_unknown"}
_SCENARIO_KEYS = {"duration_ms", "seed", "home_id"}
_RADIO_KEYS = {"links", "attacker_hears", "prop_delay_us"}
_ATTACK_KEYS = {
    "kind",
    "count",
    "interval_ms",
    "start_ms",
    "command_complete_timing",
    "spoof_src",
    "target_dst",
}
_HEARTBEAT_KEYS = {"interval_ms", "miss_threshold", "command"}
_APP_KEYS = {"send", "periodic"}
_TIMING_KEYS = {f.name for f in fields(TimingParams)}


class _Collector:
    def __init__(self):
        self.problems: list[tuple[str, str]] = []

    def convert(self, where: str, text: str, kind):
        try:
            return kind(text.strip())
        except (ValueError, KeyError) as exc:
            self.problems.append((where, f"bad value {text.strip()!r} ({exc})"))
            return None


def _int(text: str) -> int:
    return int(text, 0)


def _bool(text: str) -> bool:
    return _BOOL[text.lower()]


def _hex_payload(text: str) -> AppCommand:
    data = bytes.fromhex(text)
    cmd = parse_command(data)
    if not isinstance(cmd, AppCommand):
        raise ValueError("payload decodes as a protocol command, not an application one")
    return cmd


def _node_list(text: str) -> frozenset:
    return frozenset(int(tok) for tok in re.split(r"[\s,]+", text.strip()) if tok)


def _links(text: str) -> frozenset:
    links = set()
    for tok in re.split(r"[\s,]+", text.strip()):
        if not tok:
            continue
        a, sep, b = tok.partition("-")
        if not sep:
            raise ValueError(f"link {tok!r} is not 'a-b'")
        links.add(frozenset((int(a), int(b))))
    return frozenset(links)


def parse_scenario(text: str, source: str = "<config>") -> Scenario:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise InvalidScenario([("config", str(exc).splitlines()[0])]) from None

    c = _Collector()
    nodes: list[NodeProfile] = []
    values: dict = {}
    timing_overrides: dict = {}
    attack: dict = {}
    heartbeat: dict = {}
    sends: list[AppSend] = []
    radio: dict = {}

    def check_keys(section: str, allowed: set):
        for key in parser[section]:
            if key not in allowed:
                c.problems.append((f"{section}.{key}", "unknown key"))

    for section in parser.sections():
        m = _NODE_SECTION.match(section)
        if m:
            check_keys(section, _NODE_KEYS)
            nodes.append(_parse_node(c, section, int(m.group(1)), parser[section]))
        elif section == "scenario":
            check_keys(section, _SCENARIO_KEYS)
            for key, value in parser[section].items():
                if key in _SCENARIO_KEYS:
                    conv = (lambda s: int(s, 16)) if key == "home_id" else _int
                    values[key] = c.convert(f"scenario.{key}", value, conv)
        elif section == "timing":
            check_keys(section, _TIMING_KEYS)
            for key, value in parser[section].items():
                if key in _TIMING_KEYS:
                    timing_overrides[key] = c.convert(f"timing.{key}", value, _int)
        elif section == "radio":
            check_keys(section, _RADIO_KEYS)
            sec = parser[section]
            if "links" in sec:
                radio["links"] = c.convert("radio.links", sec["links"], _links)
            if "attacker_hears" in sec:
                radio["attacker_hears"] = c.convert("radio.attacker_hears", sec["attacker_hears"], _node_list)
            if "prop_delay_us" in sec:
                radio["prop_delay_us"] = c.convert("radio.prop_delay_us", sec["prop_delay_us"], _int)
        elif section == "attack":
            check_keys(section, _ATTACK_KEYS)
            attack = dict(parser[section])
        elif section == "heartbeat":
            check_keys(section, _HEARTBEAT_KEYS)
            heartbeat = dict(parser[section])
        elif section == "app":
            check_keys(section, _APP_KEYS)
            sends = _parse_app(c, parser[section])
        else:
            c.problems.append((section, "unknown section"))

    if "duration_ms" not in values:
        c.problems.append(("scenario.duration_ms", "missing"))

    timing = None
    try:
        timing = TimingParams(**{k: v for k, v in timing_overrides.items() if v is not None})
    except ValueError as exc:
        c.problems.append(("timing", str(exc)))

    plan = _parse_attack(c, attack) if attack else None
    hb = _parse_heartbeat(c, heartbeat)

    if hb is not None and hb.interval_ms is not None:
        nodes = [replace(n, heartbeat_interval_ms=hb.interval_ms) if n.is_gateway else n for n in nodes]

    if c.problems:
        raise InvalidScenario(c.problems)

    topology = Topology(
        tuple(sorted(nodes, key=lambda n: n.node_id)),
        radio.get("links") or frozenset(),
        radio.get("attacker_hears") or frozenset(),
    )
    kwargs = {k: v for k, v in values.items() if v is not None}
    if radio.get("prop_delay_us") is not None:
        kwargs["prop_delay_us"] = radio["prop_delay_us"]
    try:
        scenario = Scenario(
            topology=topology,
            timing=timing,
            attack=plan,
            app_schedule=tuple(sorted(sends, key=lambda s: s.at_ms)),
            heartbeat=hb,
            **kwargs,
        )
    except ValueError as exc:
        raise InvalidScenario([("scenario", str(exc))]) from None
    return scenario.validate()


def _parse_node(c: _Collector, section: str, node_id: int, sec) -> Optional[NodeProfile]:
    kw: dict = {"node_id": node_id}
    converters = {
        "kind": ("kind", NodeKind),
        "era": ("era", Era),
        "patched": ("patched", _bool),
        "routing": ("routing_capable", _bool),
        "inclusion": ("in_inclusion", _bool),
        "routes_to_unknown": ("routes_to_unknown", _bool),
    }
    for key, value in sec.items():
        if key in converters:
            name, conv = converters[key]
            kw[name] = c.convert(f"{section}.{key}", value, conv)
    kw = {k: v for k, v in kw.items() if v is not None}
    try:
        return NodeProfile(**kw)
    except ValueError as exc:
        c.problems.append((section, str(exc)))
        return None


def _parse_attack(c: _Collector, raw: dict) -> Optional[AttackPlan]:
    if "kind" not in raw:
        c.problems.append(("attack.kind", "missing"))
        return None
    kw: dict = {"kind": c.convert("attack.kind", raw["kind"], AttackKind)}
    if "count" in raw:
        text = raw["count"].strip().lower()
        kw["count"] = None if text == "unbounded" else c.convert("attack.count", text, _int)
    for key in ("interval_ms", "start_ms", "spoof_src", "target_dst"):
        if key in raw:
            kw[key] = c.convert(f"attack.{key}", raw[key], _int)
    if "command_complete_timing" in raw:
        kw["use_command_complete_timing"] = c.convert(
            "attack.command_complete_timing", raw["command_complete_timing"], _bool
        )
    if any(v is None for k, v in kw.items() if k != "count"):
        return None
    try:
        return AttackPlan(**kw)
    except ValueError as exc:
        c.problems.append(("attack", str(exc)))
        return None


def _parse_heartbeat(c: _Collector, raw: dict) -> Optional[HeartbeatSettings]:
    kw: dict = {}
    if "interval_ms" in raw:
        kw["interval_ms"] = c.convert("heartbeat.interval_ms", raw["interval_ms"], _int)
        if kw["interval_ms"] is not None and kw["interval_ms"] <= 0:
            c.problems.append(("heartbeat.interval_ms", "must be positive"))
    if "miss_threshold" in raw:
        kw["miss_threshold"] = c.convert("heartbeat.miss_threshold", raw["miss_threshold"], _int)
    if "command" in raw:
        kw["command"] = c.convert("heartbeat.command", raw["command"], _hex_payload)
    if any(v is None for v in kw.values()):
        return None
    return HeartbeatSettings(**kw)


def _parse_app(c: _Collector, sec) -> list[AppSend]:
    sends = []
    for i, line in enumerate(_lines(sec.get("send", ""))):
        parts = line.split()
        where = f"app.send[{i}]"
        if len(parts) != 3:
            c.problems.append((where, "expected '<at_ms> <dst> <hex payload>'"))
            continue
        at, dst, cmd = (c.convert(where, parts[0], _int), c.convert(where, parts[1], _int),
                        c.convert(where, parts[2], _hex_payload))
        if None not in (at, dst, cmd):
            sends.append(AppSend(at, dst, cmd))
    for i, line in enumerate(_lines(sec.get("periodic", ""))):
        parts = line.split()
        where = f"app.periodic[{i}]"
        if len(parts) != 5:
            c.problems.append((where, "expected '<start_ms> <every_ms> <count> <dst> <hex payload>'"))
            continue
        start, every, count, dst = (c.convert(where, p, _int) for p in parts[:4])
        cmd = c.convert(where, parts[4], _hex_payload)
        if None in (start, every, count, dst, cmd):
            continue
        if every <= 0 or count < 0:
            c.problems.append((where, "every_ms must be positive and count non-negative"))
            continue
        sends.extend(AppSend(start + k * every, dst, cmd) for k in range(count))
    return sends


def _lines(value: str) -> list[str]:
    return [ln.strip() for ln in value.splitlines() if ln.strip()]


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read and validate a scenario file. I/O errors propagate as OSError."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_scenario(text, str(path))
