"""Text capture files: one frame per line as ``<t_us> <hex bytes>``.

Lines starting with ``#`` are comments. The hex is the exact MPDU, so a
capture may hold frames that fail to decode; reading never decodes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

from .codec import DEFAULT_IDS, CommandIds, Frame, FrameError, decode_frame


class CaptureFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CaptureRecord:
    t_us: int
    raw: bytes
    lineno: int = 0

    def decode(self, ids: CommandIds = DEFAULT_IDS) -> Frame:
        return decode_frame(self.raw, ids)


def parse_capture(lines: Iterable[str]) -> list[CaptureRecord]:
    records = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CaptureFormatError(f"line {lineno}: expected '<t_us> <hex>'")
        t_text, hex_text = parts
        try:
            t_us = int(t_text)
            raw = bytes.fromhex(hex_text)
        except ValueError as exc:
            raise CaptureFormatError(f"line {lineno}: {exc}") from None
        if t_us < 0:
            raise CaptureFormatError(f"line {lineno}: negative timestamp")
        records.append(CaptureRecord(t_us, raw, lineno))
    return records


def read_capture(path: Union[str, Path]) -> list[CaptureRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_capture(fh)


def format_capture(records: Iterable[tuple[int, bytes]], header: Optional[str] = None) -> str:
    out = io.StringIO()
    write_capture_to(out, records, header)
    return out.getvalue()


def write_capture_to(
    fh: TextIO, records: Iterable[tuple[int, bytes]], header: Optional[str] = None
) -> None:
    if header:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
    for t_us, raw in records:
        fh.write(f"{int(t_us)} {bytes(raw).hex().upper()}\n")


def write_capture(
    path: Union[str, Path], records: Iterable[tuple[int, bytes]], header: Optional[str] = None
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_capture_to(fh, records, header)


def decode_records(
    records: Iterable[CaptureRecord], ids: CommandIds = DEFAULT_IDS
) -> list[tuple[int, Frame]]:
    """Decodable frames only, with their timestamps; corrupt ones are skipped."""
    decoded = []
    for rec in records:
        try:
            decoded.append((rec.t_us, decode_frame(rec.raw, ids)))
        except FrameError:
            continue
    return decoded
