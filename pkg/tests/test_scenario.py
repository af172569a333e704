import pytest

from conftest import SCENARIO_DIR, SHIPPED
from wavecrush.attacks import AttackKind
from wavecrush.nodes import Era, NodeKind
from wavecrush.scenario import InvalidScenario, load_scenario, parse_scenario

MINIMAL = """
[scenario]
duration_ms = 1000

[node 1]
kind = gateway
"""


def problems(text):
    with pytest.raises(InvalidScenario) as info:
        parse_scenario(text)
    return info.value.problems


def test_minimal():
    s = parse_scenario(MINIMAL)
    assert s.duration_ms == 1000
    assert s.topology.gateway.node_id == 1
    assert s.attack is None


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_files_validate(name):
    s = load_scenario(SCENARIO_DIR / f"{name}.cfg")
    assert s.topology.gateway.kind is NodeKind.GATEWAY
    assert s.topology.neighbors(1) == [2, 3, 4]
    assert s.topology.gateway.heartbeat_interval_ms == 10_000


def test_full_parse():
    s = load_scenario(SCENARIO_DIR / "power_of_nope_legacy.cfg")
    assert s.attack.kind is AttackKind.POWER_OF_NOPE
    assert s.attack.count is None and s.attack.use_command_complete_timing
    assert s.topology.gateway.era is Era.LEGACY_S0
    assert not s.topology.profile(4).routing_capable
    assert s.home_id == 0xC0FFEE01
    assert len(s.app_schedule) == 21 and s.app_schedule[1].at_ms == 50_000


def test_timing_override():
    s = parse_scenario(MINIMAL + "[timing]\nnop_wait_ms = 100\nfnir_passes = 2\n")
    assert s.timing.nop_wait_ms == 100 and s.timing.fnir_passes == 2
    assert s.timing.route_retry_budget_ms == 4700


def test_unknown_key_is_error():
    assert ("timing.nop_wait", "unknown key") in problems(MINIMAL + "[timing]\nnop_wait = 1\n")


def test_unknown_section_is_error():
    assert ("extra", "unknown section") in problems(MINIMAL + "[extra]\n")


def test_field_level_diagnostics():
    text = """
[scenario]
duration_ms = soon
[node 1]
kind = router
[node 2]
kind = device
[radio]
links = 1-9
[attack]
kind = jam
"""
    where = {w for w, _ in problems(text)}
    assert {"scenario.duration_ms", "node 1.kind", "attack.kind"} <= where


def test_topology_invariants():
    two_gateways = MINIMAL + "[node 2]\nkind = gateway\n"
    assert any("exactly one gateway" in m for _, m in problems(two_gateways))
    assert any("unknown node" in m for _, m in problems(MINIMAL + "[radio]\nlinks = 1-7\n"))
    assert any("unknown node" in m for _, m in problems(MINIMAL + "[radio]\nattacker_hears = 5\n"))


def test_duration_must_be_positive():
    assert ("scenario.duration_ms", "must be positive") in problems(MINIMAL.replace("1000", "0"))


def test_app_payload_must_be_application_command():
    text = MINIMAL + "[node 2]\nkind = device\n[app]\nsend = 10 2 9840\n"
    assert problems(text)[0][0] == "app.send[0]"


def test_app_send_lines():
    text = MINIMAL + "[node 2]\nkind = device\n[app]\nsend =\n    30 2 250100\n    10 2 2001FF\n"
    s = parse_scenario(text)
    assert [a.at_ms for a in s.app_schedule] == [10, 30]


def test_bad_syntax():
    assert problems("no section header")[0][0] == "config"
