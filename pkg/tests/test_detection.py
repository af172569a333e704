import pytest

from wavecrush.attacks import build_power_of_nope_frame, build_routed_noncense_frame
from wavecrush.codec import AppCommand, Frame, NonceGet, NopPower
from wavecrush.detection import (
    AnomalyEvent,
    DetectorParams,
    Rule,
    format_report,
    heartbeat_monitor,
    scan_frames,
)

H = 0xC0FFEE01
S = 1_000_000


def beat(t):
    return (t, Frame(H, 1, 255, AppCommand(0x20, 0x02)))


def rules(events):
    return [e.rule for e in events]


class TestScan:
    def test_self_addressed_every_forged_frame(self):
        cap = [(k * 100_000, build_routed_noncense_frame(H)) for k in range(5)]
        events = [e for e in scan_frames(cap) if e.rule is Rule.SELF_ADDRESSED]
        assert [e.at for e in events] == [t for t, _ in cap]

    def test_fnir_to_gateway(self):
        events = scan_frames([(0, build_power_of_nope_frame(H))])
        assert set(rules(events)) == {Rule.SELF_ADDRESSED, Rule.FNIR_TO_GATEWAY}

    def test_unknown_source(self):
        cap = [(0, build_routed_noncense_frame(H, src=200))]
        events = scan_frames(cap, known_nodes={1, 2, 3})
        assert rules(events) == [Rule.UNKNOWN_SOURCE]
        assert scan_frames(cap) == []

    def test_nonce_storm_threshold(self):
        ok = [(k * 500_000, Frame(H, 2, 1, NonceGet())) for k in range(10)]
        assert scan_frames(ok) == []
        storm = [(k * 400_000, Frame(H, 2, 1, NonceGet())) for k in range(13)]
        events = scan_frames(storm)
        assert rules(events) == [Rule.NONCE_STORM]
        assert events[0].at == 10 * 400_000

    def test_benign_traffic_is_clean(self):
        cap = [beat(k * 10 * S) for k in range(1, 6)] + [(3 * S, Frame(H, 1, 2, AppCommand(0x25, 0x01, b"\xff")))]
        assert scan_frames(cap, {1, 2, 3}) == []

    def test_events_never_name_an_attacker(self):
        cap = [(0, build_routed_noncense_frame(H, src=200)), (1, build_power_of_nope_frame(H))]
        for event in scan_frames(cap, {1, 2}):
            assert "attacker" not in event.detail.lower()

    def test_self_addressed_requires_src_eq_dst(self):
        with pytest.raises(ValueError):
            AnomalyEvent(0, Rule.SELF_ADDRESSED, Frame(H, 1, 2, NopPower()))


class TestHeartbeat:
    def test_no_outage(self):
        cap = [beat(k * 10 * S) for k in range(1, 20)]
        assert heartbeat_monitor(cap, 10_000, 3) == []

    def test_exactly_threshold_gap_is_silent(self):
        times = [10, 20, 30, 60, 70]
        cap = [beat(t * S) for t in times]
        assert heartbeat_monitor(cap, 10_000, 3) == []

    def test_outage_detected_at_threshold(self):
        # blocked from 31 s to 142 s, beats resume at 150 s
        times = [10, 20, 30, 150, 160]
        events = heartbeat_monitor([beat(t * S) for t in times], 10_000, 3)
        assert rules(events) == [Rule.HEARTBEAT_LOST]
        assert events[0].at == 60 * S
        assert events[0].at - 31 * S <= 4 * 10 * S

    def test_one_event_per_outage(self):
        times = [10, 100, 110, 200]
        events = heartbeat_monitor([beat(t * S) for t in times], 10_000, 3)
        assert [e.at for e in events] == [40 * S, 140 * S]

    def test_outage_running_to_end(self):
        events = heartbeat_monitor([beat(10 * S)], 10_000, 3, end_us=100 * S)
        assert [e.at for e in events] == [40 * S]

    def test_ignores_other_sources(self):
        cap = [beat(10 * S), (20 * S, Frame(H, 2, 255, AppCommand(0x20, 0x02)))]
        events = heartbeat_monitor(cap, 10_000, 1, end_us=25 * S)
        assert [e.at for e in events] == [20 * S]

    @pytest.mark.parametrize("interval, threshold", [(0, 3), (10, 0)])
    def test_bad_params(self, interval, threshold):
        with pytest.raises(ValueError):
            heartbeat_monitor([], interval, threshold)


def test_report_format_sorted():
    events = [
        AnomalyEvent(20, Rule.HEARTBEAT_LOST, None, "b"),
        AnomalyEvent(10, Rule.NONCE_STORM, None, "a"),
    ]
    assert format_report(events) == "10 NonceStorm a\n20 HeartbeatLost b\n"


def test_default_params():
    p = DetectorParams()
    assert (p.gateway_id, p.nonce_rate, p.window_ms) == (1, 10, 5000)
