"""Chunked streaming of 3-axis accelerometer CSV files.

Input layout is one sample per line, ``timestamp,x,y,z`` with the timestamp
as ``YYYY-MM-DD HH:MM:SS.fff`` (milliseconds mandatory, UTC) and x/y/z as
decimal accelerations in g. Files may start with a single header line and
may be arbitrarily large; readers pull fixed-size chunks so that memory
stays bounded by ``chunk_rows`` regardless of file size.

Bad lines never abort a read: each one is classified into a
:class:`ParseIssue` and the stream moves on.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from enum import Enum
from functools import lru_cache
from math import isfinite
from pathlib import Path
from typing import Iterator

import numpy as np

#: Hard acceptance bound on |x|, |y|, |z| in g. Twice the sensor's
#: configured +/-8 g range, so calibration overshoot still parses while
#: corrupt fields do not.
ACCEL_MAX_G = 16.0

#: Default rows per pull: roughly 20 MB of record arrays.
DEFAULT_CHUNK_ROWS = 1_000_000

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()
_US_PER_SECOND = 1_000_000


class IssueKind(Enum):
    """What exactly was wrong with a rejected line."""

    MALFORMED_TIMESTAMP = "MalformedTimestamp"
    WRONG_FIELD_COUNT = "WrongFieldCount"
    NON_NUMERIC = "NonNumeric"
    OUT_OF_RANGE = "OutOfRange"
    NON_MONOTONIC_TIME = "NonMonotonicTime"


@dataclass(frozen=True)
class SampleRecord:
    """One timestamped 3-axis acceleration measurement.

    ``t_us`` is integer microseconds since the Unix epoch (UTC); x/y/z are
    finite accelerations in g within [-ACCEL_MAX_G, ACCEL_MAX_G].
    """

    t_us: int
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class ParseIssue:
    """A rejected input line. ``byte_offset`` is None when unknown."""

    line_no: int
    byte_offset: int | None
    kind: IssueKind
    excerpt: str


class IngestIOError(OSError):
    """Unreadable medium mid-file; carries the byte offset reached."""

    def __init__(self, path: Path, byte_offset: int, cause: OSError):
        super().__init__(f"I/O error reading {path} at byte {byte_offset}: {cause}")
        self.path = path
        self.byte_offset = byte_offset


class _LineError(Exception):
    """Internal: single-line parse failure with its classification."""

    def __init__(self, kind: IssueKind):
        self.kind = kind


class RecordBatch:
    """Up to chunk_rows records stored as compact parallel arrays.

    Behaves as a sequence of :class:`SampleRecord`; the underlying arrays
    (``t_us`` int64, ``x``/``y``/``z`` float32) are exposed for vectorized
    consumers.
    """

    __slots__ = ("t_us", "x", "y", "z")

    def __init__(self, t_us: np.ndarray, x: np.ndarray, y: np.ndarray, z: np.ndarray):
        self.t_us = t_us
        self.x = x
        self.y = y
        self.z = z

    def __len__(self) -> int:
        return len(self.t_us)

    def __getitem__(self, i: int) -> SampleRecord:
        return SampleRecord(
            int(self.t_us[i]), float(self.x[i]), float(self.y[i]), float(self.z[i])
        )

    def __iter__(self) -> Iterator[SampleRecord]:
        for i in range(len(self.t_us)):
            yield self[i]


@lru_cache(maxsize=4096)
def _prefix_seconds(prefix: bytes) -> int:
    """Epoch seconds for a strict ``YYYY-MM-DD HH:MM:SS`` bytes prefix.

    Raises ValueError on any deviation (separators, non-digits, bad
    calendar dates, hours/minutes/seconds out of range). Cached because at
    sensor rates the same prefix repeats for every sample within a second.
    """
    if not (
        prefix[4:5] == b"-"
        and prefix[7:8] == b"-"
        and prefix[10:11] == b" "
        and prefix[13:14] == b":"
        and prefix[16:17] == b":"
    ):
        raise ValueError("bad timestamp separators")
    y, mo, d = prefix[0:4], prefix[5:7], prefix[8:10]
    h, mi, s = prefix[11:13], prefix[14:16], prefix[17:19]
    for piece in (y, mo, d, h, mi, s):
        if not piece.isdigit():
            raise ValueError("non-digit in timestamp")
    hh, mm, ss = int(h), int(mi), int(s)
    if hh > 23 or mm > 59 or ss > 59:
        raise ValueError("time of day out of range")
    days = date(int(y), int(mo), int(d)).toordinal() - _EPOCH_ORDINAL
    return days * 86400 + hh * 3600 + mm * 60 + ss


def _parse_fields(line: bytes) -> tuple[int, float, float, float]:
    """Split and convert one stripped CSV line; raises _LineError."""
    parts = line.split(b",")
    if len(parts) != 4:
        raise _LineError(IssueKind.WRONG_FIELD_COUNT)
    ts = parts[0]
    if len(ts) != 23 or ts[19:20] != b".":
        raise _LineError(IssueKind.MALFORMED_TIMESTAMP)
    try:
        sec = _prefix_seconds(ts[:19])
    except ValueError:
        raise _LineError(IssueKind.MALFORMED_TIMESTAMP) from None
    ms = ts[20:23]
    if not ms.isdigit():
        raise _LineError(IssueKind.MALFORMED_TIMESTAMP)
    if sec < 0:
        # pre-epoch instants are not representable as t_us >= 0
        raise _LineError(IssueKind.MALFORMED_TIMESTAMP)
    t_us = sec * _US_PER_SECOND + int(ms) * 1000
    try:
        x = float(parts[1])
        y = float(parts[2])
        z = float(parts[3])
    except ValueError:
        raise _LineError(IssueKind.NON_NUMERIC) from None
    if not (isfinite(x) and isfinite(y) and isfinite(z)):
        raise _LineError(IssueKind.NON_NUMERIC)
    if not (-ACCEL_MAX_G <= x <= ACCEL_MAX_G and -ACCEL_MAX_G <= y <= ACCEL_MAX_G and -ACCEL_MAX_G <= z <= ACCEL_MAX_G):
        raise _LineError(IssueKind.OUT_OF_RANGE)
    return t_us, x, y, z


def _excerpt(line: bytes) -> str:
    return line[:80].decode("utf-8", errors="replace")


def parse_line(text: str, line_no: int) -> SampleRecord | ParseIssue:
    """Parse one line (without its terminator) into a record or an issue.

    Monotonicity is a stream-level property and is not checked here.
    """
    raw = text.encode("utf-8", errors="replace")
    try:
        t_us, x, y, z = _parse_fields(raw)
    except _LineError as e:
        return ParseIssue(line_no, None, e.kind, text[:80])
    return SampleRecord(t_us, x, y, z)


class RecordStream:
    """Single-consumer cursor over one CSV file.

    Not safe for concurrent pulls; safe to hand off between threads
    between pulls. Tracks 1-based line numbers, the byte offset of the
    next unread line, and running record/issue totals.
    """

    def __init__(self, path: Path, chunk_rows: int, fh, header_skipped: bool,
                 line_no: int, byte_offset: int):
        self.path = path
        self.chunk_rows = chunk_rows
        self.header_skipped = header_skipped
        self.line_no = line_no
        self.byte_offset = byte_offset
        self.records_emitted = 0
        self.issues_emitted = 0
        self.exhausted = False
        self._fh = fh
        self._last_t = -1

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "RecordStream":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_stream(path: str | Path, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> RecordStream:
    """Open a CSV file for chunked reading.

    Only the first line is examined: when its first field does not parse
    as a timestamp it is treated as a header and skipped. The body is not
    read, so opening a multi-gigabyte file is cheap.
    """
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    p = Path(path)
    fh = open(p, "rb", buffering=1 << 20)
    try:
        first = fh.readline()
        header_skipped = False
        line_no = 0
        offset = 0
        if first:
            ts_field = first.rstrip(b"\r\n").split(b",", 1)[0]
            is_ts = len(ts_field) == 23 and ts_field[19:20] == b"."
            if is_ts:
                try:
                    _prefix_seconds(ts_field[:19])
                except ValueError:
                    is_ts = False
            if is_ts:
                fh.seek(0)
            else:
                header_skipped = True
                line_no = 1
                offset = len(first)
        return RecordStream(p, chunk_rows, fh, header_skipped, line_no, offset)
    except Exception:
        fh.close()
        raise


def next_chunk(stream: RecordStream) -> tuple[RecordBatch, list[ParseIssue], bool]:
    """Pull the next chunk: at most ``chunk_rows`` lines are consumed.

    Every consumed line becomes exactly one record or one issue. Records
    keep non-decreasing timestamps; a line that would go backwards in time
    is dropped as NON_MONOTONIC_TIME. ``end`` is True exactly once, on the
    pull that exhausts the file.
    """
    if stream._fh is None:
        raise ValueError("stream is closed")
    if stream.exhausted:
        raise ValueError("stream already exhausted")
    n_cap = stream.chunk_rows
    t_arr = np.empty(n_cap, np.int64)
    x_arr = np.empty(n_cap, np.float32)
    y_arr = np.empty(n_cap, np.float32)
    z_arr = np.empty(n_cap, np.float32)
    issues: list[ParseIssue] = []
    count = 0
    consumed = 0
    line_no = stream.line_no
    offset = stream.byte_offset
    last_t = stream._last_t
    end = False
    try:
        for raw in stream._fh:
            consumed += 1
            line_no += 1
            line_start = offset
            offset += len(raw)
            s = raw.rstrip(b"\r\n")
            try:
                t_us, x, y, z = _parse_fields(s)
            except _LineError as e:
                issues.append(ParseIssue(line_no, line_start, e.kind, _excerpt(s)))
            else:
                if t_us < last_t:
                    issues.append(
                        ParseIssue(line_no, line_start,
                                   IssueKind.NON_MONOTONIC_TIME, _excerpt(s))
                    )
                else:
                    last_t = t_us
                    t_arr[count] = t_us
                    x_arr[count] = x
                    y_arr[count] = y
                    z_arr[count] = z
                    count += 1
            if consumed == n_cap:
                break
        else:
            end = True
    except OSError as e:
        raise IngestIOError(stream.path, offset, e) from e
    stream.line_no = line_no
    stream.byte_offset = offset
    stream._last_t = last_t
    stream.records_emitted += count
    stream.issues_emitted += len(issues)
    if end:
        stream.exhausted = True
    batch = RecordBatch(t_arr[:count], x_arr[:count], y_arr[:count], z_arr[:count])
    return batch, issues, end


def iter_chunks(stream: RecordStream) -> Iterator[tuple[RecordBatch, list[ParseIssue]]]:
    """Drive next_chunk until exhaustion, skipping empty trailing pulls."""
    while True:
        batch, issues, end = next_chunk(stream)
        if len(batch) or issues:
            yield batch, issues
        if end:
            return
