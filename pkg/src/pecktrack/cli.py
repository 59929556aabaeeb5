"""Pipeline subcommands: synth, slice, extract, calibrate, classify, report.

Contract: exit 0 success, 1 usage/config error, 2 data/validation error,
3 I/O error, 4 day-file integrity error. Diagnostics go to stderr; data
goes to files or to stdout as line-delimited JSON. Identical inputs,
flags, and seed reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3
EXIT_INTEGRITY = 4

_OFFSET_RE = re.compile(r"^([+-]?)(\d{2}):(\d{2})$")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports flag problems as exit code 1, not 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def parse_utc_offset(text: str) -> int:
    """'±HH:MM' to signed seconds; e.g. -08:00 -> -28800."""
    m = _OFFSET_RE.match(text)
    if not m:
        raise UsageError(f"bad UTC offset {text!r}, expected ±HH:MM")
    sign = -1 if m.group(1) == "-" else 1
    hh, mm = int(m.group(2)), int(m.group(3))
    if hh > 23 or mm > 59:
        raise UsageError(f"bad UTC offset {text!r}, expected ±HH:MM")
    return sign * (hh * 3600 + mm * 60)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    return doc


def _setting(args, config: dict, key: str, default):
    """Flag value if given, else config value, else built-in default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in config:
        return config[key]
    return default


def _emit_line(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="JSON config supplying defaults for the flags")


def build_parser() -> _Parser:
    top = _Parser(prog="pecktrack", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic recording")
    p.add_argument("--spec", required=True, metavar="FILE")
    p.add_argument("--seed", type=int, default=None, metavar="N")
    p.add_argument("--out-csv", required=True, metavar="PATH")
    p.add_argument("--out-ann", required=True, metavar="PATH")
    _add_config_flag(p)

    p = sub.add_parser("slice", help="split a CSV recording into day files")
    p.add_argument("--input", required=True, metavar="PATH")
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.add_argument("--utc-offset", default=None, metavar="±HH:MM")
    p.add_argument("--chunk-rows", type=int, default=None, metavar="N")
    p.add_argument("--rate", type=float, default=None, metavar="HZ")
    p.add_argument("--gap-tolerance", type=float, default=None, metavar="F")
    _add_config_flag(p)

    p = sub.add_parser("extract", help="cut templates out of an annotated day")
    p.add_argument("--day", required=True, metavar="FILE")
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument("--dict", dest="dict_path", required=True, metavar="FILE")
    p.add_argument("--axes", default=None, metavar="AXES",
                   help="axis subset, e.g. yz (default) or xyz")
    _add_config_flag(p)

    p = sub.add_parser("calibrate", help="fit per-template thresholds")
    p.add_argument("--day", required=True, metavar="FILE")
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument("--dict", dest="dict_path", required=True, metavar="FILE")
    p.add_argument("--axes", default=None, metavar="AXES",
                   help="accepted for symmetry with extract; unused")
    _add_config_flag(p)

    p = sub.add_parser("classify", help="detect behaviors in day files")
    p.add_argument("--days", required=True, metavar="DIR")
    p.add_argument("--dict", dest="dict_path", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--jobs", type=int, default=None, metavar="N")
    _add_config_flag(p)

    p = sub.add_parser("report", help="counts + circadian histogram from detections")
    p.add_argument("--detections", required=True, metavar="FILE")
    p.add_argument("--format", required=True, choices=("json", "csv", "svg"))
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--bin-minutes", type=int, default=None, metavar="M")
    p.add_argument("--utc-offset", default=None, metavar="±HH:MM")
    p.add_argument("--date", default=None, metavar="YYYY-MM-DD",
                   help="restrict to one local day (also anchors empty reports)")
    _add_config_flag(p)

    return top


def _cmd_synth(args, config: dict) -> int:
    from . import synthkit

    with open(args.spec, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise UsageError(f"spec file is not valid JSON: {e}") from None
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = synthkit.spec_from_json(doc)
    summary = synthkit.generate(spec, args.out_csv, args.out_ann)
    _emit_line(summary)
    return EXIT_OK


def _cmd_slice(args, config: dict) -> int:
    from . import ingest, slicer

    utc_offset = _setting(args, config, "utc_offset", "+00:00")
    offset_s = (utc_offset if isinstance(utc_offset, int)
                else parse_utc_offset(utc_offset))
    chunk_rows = int(_setting(args, config, "chunk_rows", ingest.DEFAULT_CHUNK_ROWS))
    rate = float(_setting(args, config, "rate", 100.0))
    gap_tol = float(_setting(args, config, "gap_tolerance",
                             slicer.DEFAULT_GAP_TOLERANCE_PERIODS))
    if chunk_rows < 1:
        raise UsageError("--chunk-rows must be >= 1")
    if rate <= 0:
        raise UsageError("--rate must be > 0")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = ingest.open_stream(args.input, chunk_rows)
    issues_reported = 0
    with stream:
        for segment in slicer.partition(stream, offset_s, rate, gap_tol):
            path = slicer.write_day_file(segment, out_dir)
            new_issues = stream.issues_emitted - issues_reported
            issues_reported = stream.issues_emitted
            _emit_line({
                "day": segment.day,
                "rows": segment.sample_count,
                "blocks": len(segment.blocks),
                "issues": new_issues,
                "partial": segment.partial,
                "path": str(path),
            })
    return EXIT_OK


def _cmd_extract(args, config: dict) -> int:
    from . import dictionary, slicer

    axes = _setting(args, config, "axes", "yz")
    segment = slicer.read_day_file(args.day)
    annotations = dictionary.load_annotations(args.annotations)
    templates, failures = dictionary.extract_templates(
        segment, annotations, axes, source=Path(args.day).name
    )
    if failures:
        for fail in failures:
            print(
                f"annotation {fail.annotation_index} ({fail.label}): {fail.reason}",
                file=sys.stderr,
            )
        print(f"{len(failures)} annotation(s) failed; dictionary not written",
              file=sys.stderr)
        return EXIT_DATA
    d = dictionary.Dictionary(rate_hz=segment.rate_hz, templates=templates)
    path = dictionary.save_dictionary(d, args.dict_path)
    _emit_line({"templates": len(templates), "dict": str(path)})
    return EXIT_OK


def _cmd_calibrate(args, config: dict) -> int:
    from . import dictionary, slicer

    d = dictionary.load_dictionary(args.dict_path)
    segment = slicer.read_day_file(args.day)
    annotations = dictionary.load_annotations(args.annotations)
    for t in d.templates:
        t.threshold = dictionary.calibrate_threshold(t, segment, annotations)
        _emit_line({"label": t.label, "threshold": t.threshold})
    dictionary.save_dictionary(d, args.dict_path)
    return EXIT_OK


def _cmd_classify(args, config: dict) -> int:
    from . import classify, dictionary, slicer

    jobs = int(_setting(args, config, "jobs", 1))
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    d = dictionary.load_dictionary(args.dict_path)
    days_dir = Path(args.days)
    day_files = sorted(days_dir.glob("day_*.chk"))
    if not day_files:
        raise FileNotFoundError(f"no day_*.chk files in {days_dir}")
    all_detections = []
    for path in day_files:
        segment = slicer.read_day_file(path)
        dets = classify.classify_day(segment, d, jobs=jobs)
        all_detections.extend(dets)
        _emit_line({"day": segment.day, "detections": len(dets)})
    classify.save_detections(all_detections, args.out)
    return EXIT_OK


def _cmd_report(args, config: dict) -> int:
    from . import classify, report, slicer
    from .slicer import day_key

    bin_minutes = int(_setting(args, config, "bin_minutes",
                               report.DEFAULT_BIN_MINUTES))
    if bin_minutes < 1 or 1440 % bin_minutes:
        raise UsageError(f"--bin-minutes must divide 1440, got {bin_minutes}")
    utc_offset = _setting(args, config, "utc_offset", "+00:00")
    offset_s = (utc_offset if isinstance(utc_offset, int)
                else parse_utc_offset(utc_offset))
    only_day = None
    if args.date is not None:
        from datetime import date

        try:
            only_day = slicer.date_to_key(date.fromisoformat(args.date))
        except ValueError as e:
            raise UsageError(f"bad --date: {e}") from None

    detections = classify.load_detections(args.detections)
    by_day: dict[int, list] = {}
    for det in detections:
        k = day_key(det.start_us, offset_s)
        if only_day is not None and k != only_day:
            continue
        by_day.setdefault(k, []).append(det)

    if not by_day:
        # valid empty report, anchored to --date or the epoch placeholder
        by_day = {only_day if only_day is not None else 19700101: []}

    out = Path(args.out)
    multi = len(by_day) > 1
    for k in sorted(by_day):
        dets = by_day[k]
        counts = report.behavior_counts(dets, k, offset_s)
        hist = report.circadian_histogram(dets, bin_minutes, offset_s,
                                          labels=tuple(counts.counts))
        path = (out.with_name(f"{out.stem}_{k}{out.suffix}") if multi else out)
        report.emit(counts, hist, args.format, path)
        _emit_line({
            "date": slicer.key_to_date(k).isoformat(),
            "total": sum(counts.counts.values()),
            "path": str(path),
        })
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "slice": _cmd_slice,
    "extract": _cmd_extract,
    "calibrate": _cmd_calibrate,
    "classify": _cmd_classify,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    from .slicer import DayFileError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(getattr(args, "config", None))
        return _COMMANDS[args.command](args, config)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except DayFileError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())
