from pathlib import Path

import pytest
from hypothesis import strategies as st

from wavecrush.codec import (
    BROADCAST,
    Ack,
    AppCommand,
    CommandComplete,
    FindNodesInRange,
    Frame,
    FrameControl,
    HeaderType,
    NonceGet,
    NonceReport,
    NopPower,
    S2NonceGet,
    S2NonceReport,
    parse_command,
    serialize_command,
)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
SHIPPED = [
    "benign",
    "routed_noncense_s0",
    "routed_noncense_s2",
    "power_of_nope_legacy",
    "power_of_nope_modern",
    "patched_gateway",
]
ATTACKS = [name for name in SHIPPED if name not in ("benign",)]


@pytest.fixture
def scenario_dir():
    return SCENARIO_DIR


def xor_fold_oracle(data):
    acc = 0xFF
    for b in data:
        acc = acc ^ b
    return acc


def _app_commands():
    def canonical(cmd):
        # skip byte strings that happen to spell a modeled command
        return isinstance(parse_command(serialize_command(cmd)), AppCommand)

    one = st.builds(AppCommand, st.integers(0, 255))
    full = st.builds(AppCommand, st.integers(0, 255), st.integers(0, 255), st.binary(max_size=40))
    return st.one_of(one, full).filter(canonical)


non_ack_commands = st.one_of(
    st.just(NonceGet()),
    st.builds(NonceReport, st.binary(min_size=8, max_size=8)),
    st.builds(S2NonceGet, st.integers(0, 255)),
    st.builds(S2NonceReport, st.integers(0, 255), st.binary(min_size=16, max_size=16)),
    st.builds(FindNodesInRange, st.binary(min_size=1, max_size=32)),
    st.just(CommandComplete()),
    st.just(NopPower()),
    _app_commands(),
)

node_ids = st.one_of(st.integers(1, 232), st.just(BROADCAST), st.just(0))


@st.composite
def frames(draw):
    home = draw(st.integers(0, 0xFFFFFFFF))
    src = draw(node_ids)
    dst = draw(node_ids)
    seq = draw(st.integers(0, 15))
    if draw(st.integers(0, 9)) == 0:
        return Frame(home, src, dst, Ack(), FrameControl(HeaderType.ACK, seq=seq))
    header = draw(st.sampled_from([HeaderType.SINGLECAST, HeaderType.MULTICAST]))
    routed = draw(st.booleans())
    repeaters = ()
    hop = 0
    if routed:
        repeaters = tuple(draw(st.lists(st.integers(1, 232), min_size=1, max_size=4)))
        hop = draw(st.integers(0, len(repeaters)))
    ctrl = FrameControl(header, draw(st.booleans()), routed, seq)
    frame = Frame(home, src, dst, draw(non_ack_commands), ctrl, repeaters, hop)
    size = 10 + len(serialize_command(frame.command)) + (1 + len(repeaters) if routed else 0)
    if size > 64:
        frame = Frame(home, src, dst, NopPower(), ctrl, repeaters, hop)
    return frame


# one line per acceptance criterion, shown after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
