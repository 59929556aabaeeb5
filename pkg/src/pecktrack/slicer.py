"""Calendar-day partitioning and the CHKDAY01 day-file format.

A recording is split into one segment per local calendar day under a fixed
UTC offset (no timezone database, no DST). Within a day, samples are
grouped into gap-free blocks: a new block starts whenever the inter-sample
spacing exceeds the gap tolerance. Each day persists to a compact
checksummed binary file.

CHKDAY01 layout, all multi-byte values little-endian::

    bytes 0-7    magic, ASCII "CHKDAY01"
    bytes 8-9    format version, u16, = 1
    byte  10     channel count, u8, = 3
    byte  11     flags, bit 0 = partial day, other bits 0
    bytes 12-19  rate_hz, f64
    bytes 20-23  yyyymmdd, u32
    bytes 24-27  utc_offset_s, i32
    bytes 28-31  block_count, u32
    per block:   start_us i64; sample_count u64;
                 then sample_count interleaved (x, y, z) f32 triples
    final 4      CRC-32 (IEEE 802.3, reflected) over bytes 8..end of last block
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterator

import numpy as np

from .ingest import RecordStream, next_chunk

US_PER_DAY = 86_400_000_000
MAGIC = b"CHKDAY01"
FORMAT_VERSION = 1
DEFAULT_GAP_TOLERANCE_PERIODS = 1.5

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()
_HEADER = struct.Struct("<8sHBBdIiI")
_BLOCK_HEADER = struct.Struct("<qQ")


class DayFileError(Exception):
    """Base for day-file integrity failures."""


class BadMagicError(DayFileError):
    pass


class UnsupportedVersionError(DayFileError):
    pass


class ChecksumMismatchError(DayFileError):
    pass


class TruncatedFileError(DayFileError):
    pass


def day_key(t_us: int, utc_offset_s: int) -> int:
    """Calendar date (yyyymmdd int) of an instant shifted by the offset."""
    local_us = t_us + utc_offset_s * 1_000_000
    days = local_us // US_PER_DAY
    d = date.fromordinal(_EPOCH_ORDINAL + days)
    return d.year * 10000 + d.month * 100 + d.day


def key_to_date(key: int) -> date:
    return date(key // 10000, (key // 100) % 100, key % 100)


def date_to_key(d: date) -> int:
    return d.year * 10000 + d.month * 100 + d.day


@dataclass
class Block:
    """A maximal gap-free run of samples at the nominal rate.

    ``samples`` is an (n, 3) float32 array of (x, y, z) triples; sample i
    is implicitly at ``start_us + round(i * 1e6 / rate_hz)``.
    """

    start_us: int
    samples: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Block):
            return NotImplemented
        return (
            self.start_us == other.start_us
            and self.samples.shape == other.samples.shape
            and self.samples.dtype == other.samples.dtype
            and bool(
                np.array_equal(
                    self.samples.view(np.uint32), other.samples.view(np.uint32)
                )
            )
        )


@dataclass
class DaySegment:
    """All samples of one local calendar day, as ordered gap-free blocks."""

    day: int
    utc_offset_s: int
    rate_hz: float
    blocks: list[Block] = field(default_factory=list)
    partial: bool = False

    @property
    def sample_count(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DaySegment):
            return NotImplemented
        return (
            self.day == other.day
            and self.utc_offset_s == other.utc_offset_s
            and self.rate_hz == other.rate_hz
            and self.partial == other.partial
            and self.blocks == other.blocks
        )


class _DayBuilder:
    """Accumulates one day's samples into a growing float32 buffer."""

    def __init__(self, day: int, utc_offset_s: int, rate_hz: float):
        self.day = day
        self.utc_offset_s = utc_offset_s
        self.rate_hz = rate_hz
        cap = int(round(86400 * rate_hz)) + max(int(rate_hz), 16)
        self._buf = np.empty((cap, 3), np.float32)
        self._fill = 0
        # (start_us, start index); end index is the next start or _fill
        self._marks: list[tuple[int, int]] = []
        self.min_tod_us = US_PER_DAY
        self.max_tod_us = -1

    def open_block(self, start_us: int) -> None:
        self._marks.append((start_us, self._fill))

    def add_run(self, x: np.ndarray, y: np.ndarray, z: np.ndarray,
                tod_first: int, tod_last: int) -> None:
        n = len(x)
        if self._fill + n > len(self._buf):
            new_cap = max(len(self._buf) * 2, self._fill + n)
            grown = np.empty((new_cap, 3), np.float32)
            grown[: self._fill] = self._buf[: self._fill]
            self._buf = grown
        sl = self._buf[self._fill : self._fill + n]
        sl[:, 0] = x
        sl[:, 1] = y
        sl[:, 2] = z
        self._fill += n
        if tod_first < self.min_tod_us:
            self.min_tod_us = tod_first
        if tod_last > self.max_tod_us:
            self.max_tod_us = tod_last

    def finalize(self, is_first: bool, is_last: bool) -> DaySegment:
        blocks = []
        for i, (start_us, a) in enumerate(self._marks):
            b = self._marks[i + 1][1] if i + 1 < len(self._marks) else self._fill
            blocks.append(Block(start_us, self._buf[a:b]))
        partial = False
        if is_first or is_last:
            period_us = 1_000_000.0 / self.rate_hz
            covered = (
                self.min_tod_us < period_us
                and self.max_tod_us >= US_PER_DAY - period_us
            )
            partial = not covered
        return DaySegment(self.day, self.utc_offset_s, self.rate_hz, blocks, partial)


def partition(
    stream: RecordStream,
    utc_offset_s: int,
    rate_hz: float = 100.0,
    gap_tolerance_periods: float = DEFAULT_GAP_TOLERANCE_PERIODS,
) -> Iterator[DaySegment]:
    """Lazily split a record stream into per-day segments.

    Segments come out in chronological order; each is yielded as soon as a
    record from a later day arrives (or the stream ends), so at most the
    day being filled is resident. Days with no records are simply absent.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be > 0")
    if stream.records_emitted or stream.issues_emitted:
        raise ValueError("partition requires a freshly opened stream")
    gap_us = gap_tolerance_periods * 1_000_000.0 / rate_hz
    off_us = utc_offset_s * 1_000_000
    builder: _DayBuilder | None = None
    emitted = 0
    last_t = None  # t_us of the previous record, across chunk boundaries

    while True:
        batch, _issues, end = next_chunk(stream)
        t = batch.t_us
        k = len(t)
        if k:
            local = t + off_us
            day_idx = local // US_PER_DAY
            tod = local - day_idx * US_PER_DAY
            # run boundaries: day change or gap between consecutive samples
            brk = np.flatnonzero(
                (np.diff(t) > gap_us) | (day_idx[1:] != day_idx[:-1])
            )
            starts = np.concatenate(([0], brk + 1))
            ends = np.concatenate((brk + 1, [k]))
            for a, b in zip(starts, ends):
                a = int(a)
                b = int(b)
                t0 = int(t[a])
                run_day = day_key(t0, utc_offset_s)
                if builder is None:
                    builder = _DayBuilder(run_day, utc_offset_s, rate_hz)
                    builder.open_block(t0)
                elif run_day != builder.day:
                    yield builder.finalize(is_first=emitted == 0, is_last=False)
                    emitted += 1
                    builder = _DayBuilder(run_day, utc_offset_s, rate_hz)
                    builder.open_block(t0)
                elif last_t is None or t0 - last_t > gap_us or a > 0:
                    # a > 0 means this run begins at an in-batch boundary;
                    # same day, so it was a gap
                    builder.open_block(t0)
                builder.add_run(
                    batch.x[a:b], batch.y[a:b], batch.z[a:b],
                    int(tod[a]), int(tod[b - 1]),
                )
                last_t = int(t[b - 1])
        if end:
            break
    if builder is not None:
        yield builder.finalize(is_first=emitted == 0, is_last=True)


def write_day_file(segment: DaySegment, dir_path: str | Path) -> Path:
    """Persist a segment as ``day_<yyyymmdd>.chk``, atomically.

    The file is written to a temp name and renamed into place, so a crash
    never leaves a half-written file that parses. Refuses empty segments.
    """
    if not segment.blocks:
        raise ValueError("refusing to write a day segment with zero blocks")
    d = Path(dir_path)
    final = d / f"day_{segment.day}.chk"
    tmp = d / f".day_{segment.day}.chk.tmp{os.getpid()}"
    flags = 0x01 if segment.partial else 0x00
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, 3, flags,
        float(segment.rate_hz), segment.day, segment.utc_offset_s,
        len(segment.blocks),
    )
    try:
        with open(tmp, "wb", buffering=1 << 20) as f:
            f.write(header)
            crc = zlib.crc32(header[8:])
            for blk in segment.blocks:
                bh = _BLOCK_HEADER.pack(blk.start_us, len(blk.samples))
                f.write(bh)
                crc = zlib.crc32(bh, crc)
                data = np.ascontiguousarray(blk.samples, dtype="<f4")
                mv = memoryview(data.reshape(-1)).cast("B")
                f.write(mv)
                crc = zlib.crc32(mv, crc)
            f.write(struct.pack("<I", crc & 0xFFFFFFFF))
        os.replace(tmp, final)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return final


def read_day_file(path: str | Path) -> DaySegment:
    """Exact inverse of :func:`write_day_file`.

    Verifies magic, version, and the CRC-32 before returning; failure
    modes are distinct: BadMagicError, UnsupportedVersionError,
    ChecksumMismatchError, TruncatedFileError.
    """
    p = Path(path)
    size = p.stat().st_size
    with open(p, "rb", buffering=1 << 20) as f:
        head = f.read(_HEADER.size)
        if len(head) < 8 or head[:8] != MAGIC:
            raise BadMagicError(f"{p}: not a CHKDAY01 file")
        if len(head) < _HEADER.size:
            raise TruncatedFileError(f"{p}: truncated header")
        _, version, channels, flags, rate_hz, day, utc_offset_s, block_count = (
            _HEADER.unpack(head)
        )
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"{p}: version {version}")
        if channels != 3:
            raise UnsupportedVersionError(f"{p}: {channels} channels")
        if flags & ~0x01:
            raise UnsupportedVersionError(f"{p}: unknown flags 0x{flags:02x}")
        if not (rate_hz > 0):
            raise UnsupportedVersionError(f"{p}: non-positive rate {rate_hz}")
        crc = zlib.crc32(head[8:])
        remaining = size - _HEADER.size - 4  # bytes available for blocks
        blocks: list[Block] = []
        for _ in range(block_count):
            bh = f.read(_BLOCK_HEADER.size)
            if len(bh) < _BLOCK_HEADER.size:
                raise TruncatedFileError(f"{p}: truncated block header")
            crc = zlib.crc32(bh, crc)
            start_us, n = _BLOCK_HEADER.unpack(bh)
            nbytes = n * 12
            remaining -= _BLOCK_HEADER.size + nbytes
            if remaining < 0:
                raise TruncatedFileError(f"{p}: payload extends past end of file")
            payload = f.read(nbytes)
            if len(payload) < nbytes:
                raise TruncatedFileError(f"{p}: truncated block payload")
            crc = zlib.crc32(payload, crc)
            samples = np.frombuffer(payload, dtype="<f4").reshape(-1, 3)
            blocks.append(Block(start_us, samples))
        tail = f.read(4)
        if len(tail) < 4:
            raise TruncatedFileError(f"{p}: missing checksum")
        (stored_crc,) = struct.unpack("<I", tail)
        if stored_crc != (crc & 0xFFFFFFFF):
            raise ChecksumMismatchError(
                f"{p}: CRC mismatch (stored {stored_crc:#010x}, "
                f"computed {crc & 0xFFFFFFFF:#010x})"
            )
        if f.read(1):
            raise ChecksumMismatchError(f"{p}: trailing bytes after checksum")
    return DaySegment(day, utc_offset_s, rate_hz, blocks, bool(flags & 0x01))
