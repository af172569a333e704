"""wavecrush command line: simulate, decode, detect, craft.

Exit codes: 0 ok / no anomalies, 1 anomalies found (detect), 2 bad input,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .attacks import AttackKind, AttackPlan, attack_schedule
from .capture import CaptureFormatError, format_capture, read_capture, write_capture
from .codec import FrameError, command_ids_from_env, decode_frame, describe, encode_frame
from .detection import DetectorParams, format_report, heartbeat_monitor, scan_frames
from .engine import Simulator
from .scenario import InvalidScenario, load_scenario

EXIT_OK = 0
EXIT_ANOMALY = 1
EXIT_INVALID = 2
EXIT_IO = 3

CRAFT_KINDS = {
    "noncense-s0": AttackKind.ROUTED_NONCENSE_S0,
    "noncense-s2": AttackKind.ROUTED_NONCENSE_S2,
    "power-of-nope": AttackKind.POWER_OF_NOPE,
}


def _err(msg: str) -> None:
    print(f"wavecrush: {msg}", file=sys.stderr)


def _hex_home(text: str) -> int:
    try:
        value = int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex HomeID: {text!r}") from None
    if not 0 <= value <= 0xFFFFFFFF:
        raise argparse.ArgumentTypeError("HomeID must fit 32 bits")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _node_set(text: str) -> frozenset:
    try:
        return frozenset(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad node list {text!r}") from None


def cmd_simulate(args, ids) -> int:
    config = Path(args.config)
    try:
        scenario = load_scenario(config)
    except OSError as exc:
        _err(f"cannot read {config}: {exc.strerror or exc}")
        return EXIT_IO
    except InvalidScenario as exc:
        _err(f"invalid scenario {config}:")
        for where, what in exc.problems:
            print(f"  {where}: {what}", file=sys.stderr)
        return EXIT_INVALID
    result = Simulator(scenario, ids).run()
    capture_path = Path(args.capture or config.with_suffix(".cap").name)
    metrics_path = Path(args.metrics or config.with_suffix(".metrics").name)
    try:
        write_capture(capture_path, result.capture, header=f"wavecrush capture of {config.name}")
        metrics_path.write_text(result.metrics.report(), encoding="utf-8")
    except OSError as exc:
        _err(f"cannot write output: {exc}")
        return EXIT_IO
    m = result.metrics
    print(
        f"{config.name}: gateway_busy_ms={m.as_dict()['gateway_busy_ms']} "
        f"app_processed={m.app_processed} app_blocked={m.app_blocked} "
        f"frames={len(result.capture)} -> {capture_path}, {metrics_path}"
    )
    return EXIT_OK


def _load_capture(path: str):
    try:
        return read_capture(path)
    except OSError as exc:
        _err(f"cannot read {path}: {exc.strerror or exc}")
    except (CaptureFormatError, UnicodeDecodeError) as exc:
        _err(f"unreadable capture {path}: {exc}")
    return None


def cmd_decode(args, ids) -> int:
    records = _load_capture(args.capture)
    if records is None:
        return EXIT_INVALID
    good = 0
    for rec in records:
        try:
            frame = decode_frame(rec.raw, ids)
        except FrameError as exc:
            print(f"{rec.t_us} !! {type(exc).__name__}: {exc} [{rec.raw.hex().upper()}]")
            continue
        good += 1
        print(f"{rec.t_us} {describe(frame)}")
    if good == 0:
        _err(f"no decodable frames in {args.capture}")
        return EXIT_INVALID
    return EXIT_OK


def cmd_detect(args, ids) -> int:
    records = _load_capture(args.capture)
    if records is None:
        return EXIT_INVALID
    frames = []
    for rec in records:
        try:
            frames.append((rec.t_us, decode_frame(rec.raw, ids)))
        except FrameError:
            continue
    params = DetectorParams(args.gateway_id, args.nonce_rate, args.window_ms)
    events = scan_frames(frames, args.known_nodes, params)
    if args.heartbeat_interval:
        end = args.end_ms * 1000 if args.end_ms is not None else None
        events += heartbeat_monitor(
            frames, args.heartbeat_interval, args.miss_threshold, args.gateway_id, end_us=end
        )
    sys.stdout.write(format_report(events))
    return EXIT_ANOMALY if events else EXIT_OK


def cmd_craft(args, ids) -> int:
    plan = AttackPlan(
        CRAFT_KINDS[args.kind],
        count=args.count,
        interval_ms=args.interval_ms,
        spoof_src=args.spoof_src,
        target_dst=args.target_dst,
    )
    frames = list(itertools.islice(attack_schedule(plan, args.home), args.count))
    records = [(t, encode_frame(f, ids)) for t, f in frames]
    header = f"{args.kind} x{args.count} home={args.home:08X}"
    if args.out in (None, "-"):
        sys.stdout.write(format_capture(records, header))
        return EXIT_OK
    try:
        write_capture(args.out, records, header)
    except OSError as exc:
        _err(f"cannot write {args.out}: {exc}")
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavecrush", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("config")
    p.add_argument("--capture", help="capture output (default: <config stem>.cap)")
    p.add_argument("--metrics", help="metrics output (default: <config stem>.metrics)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decode", help="print a capture frame by frame")
    p.add_argument("capture")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("detect", help="run the anomaly rules over a capture")
    p.add_argument("capture")
    p.add_argument("--gateway-id", type=int, default=1)
    p.add_argument("--heartbeat-interval", type=_positive, metavar="MS")
    p.add_argument("--miss-threshold", type=_positive, default=3)
    p.add_argument("--known-nodes", type=_node_set, help="e.g. 1,2,3; enables UnknownSource")
    p.add_argument("--nonce-rate", type=_positive, default=10)
    p.add_argument("--window-ms", type=_positive, default=5000)
    p.add_argument("--end-ms", type=int, help="end of the monitored period (default: last frame)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("craft", help="write forged attack frames to a capture")
    p.add_argument("kind", choices=sorted(CRAFT_KINDS))
    p.add_argument("--home", type=_hex_home, required=True, help="target HomeID, hex")
    p.add_argument("--count", type=_positive, default=1)
    p.add_argument("--interval-ms", type=_positive)
    p.add_argument("--spoof-src", type=int, default=1)
    p.add_argument("--target-dst", type=int, default=1)
    p.add_argument("-o", "--out", help="output capture (default: stdout)")
    p.set_defaults(func=cmd_craft)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ids = command_ids_from_env()
    except (OSError, ValueError) as exc:
        _err(f"bad constants file: {exc}")
        return EXIT_INVALID
    try:
        return args.func(args, ids)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    except BrokenPipeError:
        # reader went away (e.g. piped into head); keep quiet at shutdown
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
