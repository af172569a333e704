"""Z-Wave (G.9959 R1/R2) singlecast MPDU encoding and decoding.

Wire layout of one frame::

    HomeID(4, BE) | src(1) | ctrl1(1) | ctrl2(1) | length(1) | dst(1)
        [| route header (1 + n repeaters), only when ctrl1.routed]
        | command bytes | checksum(1)

``length`` counts every byte of the frame, checksum included. The checksum
is an XOR fold of all preceding bytes seeded with 0xFF.

Command class / command identifiers live in :class:`CommandIds` so they can
be retargeted from a ``key = value`` constants file without touching code.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field, fields
from functools import reduce
from pathlib import Path
from typing import Optional, Union

MIN_FRAME_LEN = 10
MAX_FRAME_LEN = 64
HEADER_LEN = 9
MAX_NODE_ID = 232
BROADCAST = 0xFF
GATEWAY_ID = 1
MAX_MASK_LEN = 32
MAX_REPEATERS = 4
CHECKSUM_SEED = 0xFF

_CTRL1_HEADER_MASK = 0x0F
_CTRL1_ACK_REQUESTED = 0x40
_CTRL1_ROUTED = 0x80

CONSTANTS_ENV = "WAVECRUSH_CONSTANTS"


class FrameError(ValueError):
    """Base class for everything the codec rejects."""


class OversizeFrame(FrameError):
    pass


class TooShort(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class BadChecksum(FrameError):
    pass


class UnknownHeaderType(FrameError):
    pass


class MalformedRouteHeader(FrameError):
    pass


class EmptyPayloadOnNonAck(FrameError):
    pass


class EmptyMask(FrameError):
    pass


class HeaderType(enum.IntEnum):
    SINGLECAST = 1
    MULTICAST = 2
    ACK = 3


@dataclass(frozen=True)
class CommandIds:
    """Command class / command byte table used by the codec."""

    security_class: int = 0x98
    nonce_get: int = 0x40
    nonce_report: int = 0x80
    security2_class: int = 0x9F
    s2_nonce_get: int = 0x01
    s2_nonce_report: int = 0x02
    protocol_class: int = 0x01
    find_nodes_in_range: int = 0x04
    command_complete: int = 0x07
    nop_power: int = 0x08

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or not 0 <= value <= 0xFF:
                raise ValueError(f"{f.name} must be a byte, got {value!r}")


DEFAULT_IDS = CommandIds()


def load_command_ids(path: Union[str, Path]) -> CommandIds:
    """Read a constants file (``key = value`` lines, ``#`` comments).

    Keys not mentioned keep their default. Unknown keys are rejected.
    """
    known = {f.name for f in fields(CommandIds)}
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise ValueError(f"{path}:{lineno}: unknown or malformed entry {raw.strip()!r}")
        overrides[key] = int(value.strip(), 0)
    return CommandIds(**overrides)


def command_ids_from_env() -> CommandIds:
    path = os.environ.get(CONSTANTS_ENV)
    return load_command_ids(path) if path else DEFAULT_IDS


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonceGet:
    pass


@dataclass(frozen=True)
class NonceReport:
    nonce: bytes

    def __post_init__(self):
        if len(self.nonce) != 8:
            raise ValueError("S0 nonce is 8 bytes")


@dataclass(frozen=True)
class S2NonceGet:
    seq: int

    def __post_init__(self):
        _check_byte("seq", self.seq)


@dataclass(frozen=True)
class S2NonceReport:
    seq: int
    nonce: bytes

    def __post_init__(self):
        _check_byte("seq", self.seq)
        if len(self.nonce) != 16:
            raise ValueError("S2 nonce is 16 bytes")


@dataclass(frozen=True)
class FindNodesInRange:
    mask: bytes

    def __post_init__(self):
        if not 1 <= len(self.mask) <= MAX_MASK_LEN:
            raise ValueError(f"mask must be 1..{MAX_MASK_LEN} bytes")

    @property
    def nodes(self) -> list[int]:
        return mask_to_nodes(self.mask)


@dataclass(frozen=True)
class CommandComplete:
    pass


@dataclass(frozen=True)
class NopPower:
    pass


@dataclass(frozen=True)
class Ack:
    pass


@dataclass(frozen=True)
class AppCommand:
    """Any command the codec does not model; bytes are carried verbatim.

    ``cmd`` is None only for a one-byte payload.
    """

    cls: int
    cmd: Optional[int] = None
    params: bytes = b""

    def __post_init__(self):
        _check_byte("cls", self.cls)
        if self.cmd is None:
            if self.params:
                raise ValueError("params without a command byte")
        else:
            _check_byte("cmd", self.cmd)


Command = Union[
    NonceGet,
    NonceReport,
    S2NonceGet,
    S2NonceReport,
    FindNodesInRange,
    CommandComplete,
    NopPower,
    Ack,
    AppCommand,
]


def command_name(cmd: Command) -> str:
    return type(cmd).__name__


def _check_byte(name: str, value: int) -> None:
    if not isinstance(value, int) or not 0 <= value <= 0xFF:
        raise ValueError(f"{name} must be 0..255, got {value!r}")


def serialize_command(cmd: Command, ids: CommandIds = DEFAULT_IDS) -> bytes:
    if isinstance(cmd, NonceGet):
        return bytes([ids.security_class, ids.nonce_get])
    if isinstance(cmd, NonceReport):
        return bytes([ids.security_class, ids.nonce_report]) + cmd.nonce
    if isinstance(cmd, S2NonceGet):
        return bytes([ids.security2_class, ids.s2_nonce_get, cmd.seq])
    if isinstance(cmd, S2NonceReport):
        return bytes([ids.security2_class, ids.s2_nonce_report, cmd.seq]) + cmd.nonce
    if isinstance(cmd, FindNodesInRange):
        return bytes([ids.protocol_class, ids.find_nodes_in_range]) + cmd.mask
    if isinstance(cmd, CommandComplete):
        return bytes([ids.protocol_class, ids.command_complete])
    if isinstance(cmd, NopPower):
        return bytes([ids.protocol_class, ids.nop_power])
    if isinstance(cmd, Ack):
        return b""
    if isinstance(cmd, AppCommand):
        if cmd.cmd is None:
            return bytes([cmd.cls])
        return bytes([cmd.cls, cmd.cmd]) + cmd.params
    raise TypeError(f"not a command: {cmd!r}")


def parse_command(data: bytes, ids: CommandIds = DEFAULT_IDS) -> Command:
    """Decode command bytes. Anything that does not exactly fit a modeled
    command comes back as :class:`AppCommand` with its bytes intact."""
    data = bytes(data)
    if not data:
        raise EmptyPayloadOnNonAck("non-Ack frame carries no command bytes")
    if len(data) == 1:
        return AppCommand(data[0])
    cls, cmd, rest = data[0], data[1], data[2:]
    if cls == ids.security_class:
        if cmd == ids.nonce_get and not rest:
            return NonceGet()
        if cmd == ids.nonce_report and len(rest) == 8:
            return NonceReport(rest)
    if cls == ids.security2_class:
        if cmd == ids.s2_nonce_get and len(rest) == 1:
            return S2NonceGet(rest[0])
        if cmd == ids.s2_nonce_report and len(rest) == 17:
            return S2NonceReport(rest[0], rest[1:])
    if cls == ids.protocol_class:
        # trailing bytes past a full mask are tolerated and dropped
        if cmd == ids.find_nodes_in_range and rest:
            return FindNodesInRange(rest[:MAX_MASK_LEN])
        if cmd == ids.command_complete and not rest:
            return CommandComplete()
        if cmd == ids.nop_power and not rest:
            return NopPower()
    return AppCommand(cls, cmd, rest)


def mask_to_nodes(mask: bytes) -> list[int]:
    """Node ids whose bit is set; bit i of the mask (LSB first) is node i+1."""
    if len(mask) == 0:
        raise EmptyMask("node mask is empty")
    if len(mask) > MAX_MASK_LEN:
        raise ValueError(f"mask longer than {MAX_MASK_LEN} bytes")
    nodes = []
    for byte_index, byte in enumerate(mask):
        while byte:
            low = byte & -byte
            node = byte_index * 8 + low.bit_length()
            if node > MAX_NODE_ID:
                return nodes
            nodes.append(node)
            byte ^= low
    return nodes


def nodes_to_mask(nodes, length: int = MAX_MASK_LEN) -> bytes:
    mask = bytearray(length)
    for node in nodes:
        if not 1 <= node <= min(MAX_NODE_ID, length * 8):
            raise ValueError(f"node {node} does not fit a {length}-byte mask")
        mask[(node - 1) // 8] |= 1 << ((node - 1) % 8)
    return bytes(mask)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameControl:
    header_type: HeaderType = HeaderType.SINGLECAST
    ack_requested: bool = False
    routed: bool = False
    seq: int = 0

    def __post_init__(self):
        if not 0 <= self.seq <= 0x0F:
            raise ValueError("frame sequence number is 4 bits")
        object.__setattr__(self, "header_type", HeaderType(self.header_type))

    def pack(self) -> tuple[int, int]:
        ctrl1 = int(self.header_type)
        if self.ack_requested:
            ctrl1 |= _CTRL1_ACK_REQUESTED
        if self.routed:
            ctrl1 |= _CTRL1_ROUTED
        return ctrl1, self.seq << 4

    @classmethod
    def unpack(cls, ctrl1: int, ctrl2: int) -> "FrameControl":
        try:
            header_type = HeaderType(ctrl1 & _CTRL1_HEADER_MASK)
        except ValueError:
            raise UnknownHeaderType(f"header type {ctrl1 & _CTRL1_HEADER_MASK}") from None
        return cls(
            header_type=header_type,
            ack_requested=bool(ctrl1 & _CTRL1_ACK_REQUESTED),
            routed=bool(ctrl1 & _CTRL1_ROUTED),
            seq=ctrl2 >> 4,
        )


@dataclass(frozen=True)
class Frame:
    home_id: int
    src: int
    dst: int
    command: Command
    ctrl: FrameControl = field(default_factory=FrameControl)
    # routing header, only meaningful when ctrl.routed
    repeaters: tuple[int, ...] = ()
    hop: int = 0

    def __post_init__(self):
        if not 0 <= self.home_id <= 0xFFFFFFFF:
            raise ValueError("home id is 32 bits")
        _check_byte("src", self.src)
        _check_byte("dst", self.dst)
        object.__setattr__(self, "repeaters", tuple(self.repeaters))
        if self.ctrl.routed:
            if not 1 <= len(self.repeaters) <= MAX_REPEATERS:
                raise ValueError(f"routed frame needs 1..{MAX_REPEATERS} repeaters")
            if not 0 <= self.hop <= len(self.repeaters):
                raise ValueError("hop index out of range")
            for r in self.repeaters:
                _check_byte("repeater", r)
        elif self.repeaters or self.hop:
            raise ValueError("repeaters given on a non-routed frame")
        is_ack = self.ctrl.header_type is HeaderType.ACK
        if is_ack != isinstance(self.command, Ack):
            raise ValueError("Ack command goes only in an Ack-header frame")

    @property
    def self_addressed(self) -> bool:
        return self.src == self.dst

    @property
    def next_hop(self) -> Optional[int]:
        """Node that should handle a routed frame next, or None when it has
        reached its final destination."""
        if not self.ctrl.routed or self.hop >= len(self.repeaters):
            return None
        return self.repeaters[self.hop]


def checksum(data: bytes) -> int:
    return reduce(lambda acc, b: acc ^ b, data, CHECKSUM_SEED)


def encode_frame(frame: Frame, ids: CommandIds = DEFAULT_IDS) -> bytes:
    ctrl1, ctrl2 = frame.ctrl.pack()
    route = b""
    if frame.ctrl.routed:
        route = bytes([(len(frame.repeaters) << 4) | frame.hop, *frame.repeaters])
    body = route + serialize_command(frame.command, ids)
    length = HEADER_LEN + len(body) + 1
    if length > MAX_FRAME_LEN:
        raise OversizeFrame(f"frame is {length} bytes, limit {MAX_FRAME_LEN}")
    head = struct.pack(">IBBBBB", frame.home_id, frame.src, ctrl1, ctrl2, length, frame.dst)
    data = head + body
    return data + bytes([checksum(data)])


def decode_frame(data: bytes, ids: CommandIds = DEFAULT_IDS) -> Frame:
    data = bytes(data)
    if len(data) < MIN_FRAME_LEN:
        raise TooShort(f"{len(data)} bytes, need at least {MIN_FRAME_LEN}")
    # the fold over the whole frame including its checksum byte must cancel out
    if checksum(data) != 0:
        raise BadChecksum(f"checksum {data[-1]:02X} != {checksum(data[:-1]):02X}")
    home_id, src, ctrl1, ctrl2, length, dst = struct.unpack_from(">IBBBBB", data)
    if length != len(data):
        raise LengthMismatch(f"length field {length}, frame is {len(data)} bytes")
    if length > MAX_FRAME_LEN:
        raise OversizeFrame(f"frame is {length} bytes, limit {MAX_FRAME_LEN}")
    ctrl = FrameControl.unpack(ctrl1, ctrl2)
    if ctrl1 & ~(_CTRL1_HEADER_MASK | _CTRL1_ACK_REQUESTED | _CTRL1_ROUTED) or ctrl2 & 0x0F:
        raise FrameError(f"reserved frame control bits set: {ctrl1:02X} {ctrl2:02X}")
    body = data[HEADER_LEN:-1]
    repeaters: tuple[int, ...] = ()
    hop = 0
    if ctrl.routed:
        if not body:
            raise MalformedRouteHeader("routed frame without route header")
        count, hop = body[0] >> 4, body[0] & 0x0F
        if not 1 <= count <= MAX_REPEATERS or hop > count or len(body) < 1 + count:
            raise MalformedRouteHeader(f"route header {body[0]:02X}")
        repeaters = tuple(body[1 : 1 + count])
        body = body[1 + count :]
    if ctrl.header_type is HeaderType.ACK:
        if body:
            raise FrameError("Ack frame carries command bytes")
        command: Command = Ack()
    else:
        command = parse_command(body, ids)
    return Frame(home_id, src, dst, command, ctrl, repeaters, hop)


def describe(frame: Frame) -> str:
    """One-line human summary of a decoded frame."""
    cmd = frame.command
    name = command_name(cmd)
    if isinstance(cmd, FindNodesInRange):
        detail = f"mask={_compact_hex(cmd.mask)}"
    elif isinstance(cmd, (NonceReport,)):
        detail = f"nonce={cmd.nonce.hex().upper()}"
    elif isinstance(cmd, S2NonceGet):
        detail = f"seq={cmd.seq}"
    elif isinstance(cmd, S2NonceReport):
        detail = f"seq={cmd.seq} nonce={cmd.nonce.hex().upper()}"
    elif isinstance(cmd, AppCommand):
        detail = "payload=" + serialize_command(cmd).hex().upper()
    else:
        detail = ""
    route = ""
    if frame.ctrl.routed:
        route = " via " + ",".join(str(r) for r in frame.repeaters) + f" hop={frame.hop}"
    kind = frame.ctrl.header_type.name.lower()
    text = f"home={frame.home_id:08X} {frame.src}->{frame.dst} {kind}{route} {name}"
    return f"{text} {detail}".rstrip()


def _compact_hex(data: bytes) -> str:
    if data and data.count(data[0]) == len(data) and len(data) > 1:
        return f"{data[0]:02X}×{len(data)}"
    return data.hex().upper()
