import pytest

from wavecrush.attacks import build_power_of_nope_frame
from wavecrush.capture import (
    CaptureFormatError,
    decode_records,
    format_capture,
    parse_capture,
    read_capture,
    write_capture,
)
from wavecrush.codec import encode_frame


def test_round_trip(tmp_path):
    raw = encode_frame(build_power_of_nope_frame(0x01020304))
    path = tmp_path / "cap.txt"
    write_capture(path, [(0, raw), (1500, b"\x01\x02")], header="two frames")
    text = path.read_text()
    assert text.startswith("# two frames\n")
    assert f"0 {raw.hex().upper()}\n" in text
    records = read_capture(path)
    assert [(r.t_us, r.raw) for r in records] == [(0, raw), (1500, b"\x01\x02")]


def test_comments_and_blank_lines():
    records = parse_capture(["# hello", "", "12 0A0B", "  # indented comment"])
    assert len(records) == 1 and records[0].raw == b"\x0a\x0b" and records[0].lineno == 3


@pytest.mark.parametrize("line", ["12", "x 0A", "12 0G", "-1 00", "1 00 00"])
def test_bad_lines(line):
    with pytest.raises(CaptureFormatError):
        parse_capture([line])


def test_decode_records_skips_corrupt():
    raw = encode_frame(build_power_of_nope_frame(7))
    records = parse_capture(format_capture([(1, raw), (2, raw[:-1] + b"\x00")]).splitlines())
    decoded = decode_records(records)
    assert [t for t, _ in decoded] == [1]
