from __future__ import annotations

import struct
import zlib
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_segment, write_csv
from pecktrack.ingest import open_stream
from pecktrack.slicer import (
    US_PER_DAY,
    BadMagicError,
    Block,
    ChecksumMismatchError,
    DaySegment,
    TruncatedFileError,
    UnsupportedVersionError,
    day_key,
    partition,
    read_day_file,
    write_day_file,
)


def _ts(s: str) -> int:
    dt = datetime.strptime(s, "%Y-%m-%d %H:%M:%S.%f").replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000) * 1000


def _rows(t_us_list, xyz=(0.0, -1.0, 0.0)):
    out = []
    for t in t_us_list:
        dt = datetime.fromtimestamp(t // 1_000_000, tz=timezone.utc)
        ms = (t % 1_000_000) // 1000
        ts = dt.strftime("%Y-%m-%d %H:%M:%S") + f".{ms:03d}"
        out.append(f"{ts},{xyz[0]},{xyz[1]},{xyz[2]}")
    return out


# ---------------------------------------------------------------------------
# day_key
# ---------------------------------------------------------------------------

def test_day_key_epoch():
    assert day_key(0, 0) == 19700101


def test_day_key_before_local_midnight():
    assert day_key(_ts("2019-11-18 07:59:59.990"), -28800) == 20191117


def test_day_key_exact_local_midnight():
    assert day_key(_ts("2019-11-18 08:00:00.000"), -28800) == 20191118


@given(
    st.integers(min_value=0, max_value=4_000_000_000_000_000),
    st.integers(min_value=-14 * 3600, max_value=14 * 3600),
)
@settings(max_examples=300, deadline=None)
def test_day_key_matches_datetime_oracle(t_us, offset_s):
    expect = datetime.fromtimestamp(
        (t_us + offset_s * 1_000_000) // US_PER_DAY * 86400, tz=timezone.utc
    ).date()
    got = day_key(t_us, offset_s)
    assert got == expect.year * 10000 + expect.month * 100 + expect.day


# ---------------------------------------------------------------------------
# partition
# ---------------------------------------------------------------------------

def _partition_csv(tmp_path, rows, offset_s=0, rate=100.0, tol=1.5, chunk=512):
    path = write_csv(tmp_path / "rec.csv", rows)
    with open_stream(path, chunk) as s:
        return list(partition(s, offset_s, rate, tol))


def test_three_full_days_three_segments(tmp_path):
    # 2 Hz over 3 full days to keep the file small
    rate = 2.0
    t0 = _ts("2019-11-18 00:00:00.000")
    t = [t0 + i * 500_000 for i in range(3 * 86400 * 2)]
    segs = _partition_csv(tmp_path, _rows(t), rate=rate)
    assert [s.day for s in segs] == [20191118, 20191119, 20191120]
    assert [s.partial for s in segs] == [False, False, False]
    assert all(len(s.blocks) == 1 for s in segs)
    assert sum(s.sample_count for s in segs) == len(t)


def test_midnight_boundary_rule(tmp_path):
    rows = _rows([_ts("2019-11-18 23:59:59.990"), _ts("2019-11-19 00:00:00.000")])
    segs = _partition_csv(tmp_path, rows)
    assert [s.day for s in segs] == [20191118, 20191119]
    assert [s.sample_count for s in segs] == [1, 1]


def test_gap_splits_blocks_within_day(tmp_path):
    t0 = _ts("2019-11-18 10:00:00.000")
    t = [t0 + i * 10_000 for i in range(100)]
    t += [t[-1] + 5_000_000 + i * 10_000 for i in range(100)]  # 5 s silence
    segs = _partition_csv(tmp_path, _rows(t))
    assert len(segs) == 1
    assert len(segs[0].blocks) == 2
    assert [len(b) for b in segs[0].blocks] == [100, 100]


def test_exact_tolerance_gap_does_not_split(tmp_path):
    # tolerance 1.5 periods at 100 Hz = 15 ms; a 15 ms step stays together
    t0 = _ts("2019-11-18 10:00:00.000")
    t = [t0, t0 + 15_000, t0 + 15_000 + 16_000]  # second step > 15 ms: splits
    segs = _partition_csv(tmp_path, _rows(t))
    assert [len(b) for b in segs[0].blocks] == [2, 1]


def test_partial_flags_for_clipped_recording(tmp_path):
    # starts at noon day 1, ends mid-day 3
    rate = 2.0
    t0 = _ts("2019-11-18 12:00:00.000")
    n = int(2.2 * 86400 * rate)
    t = [t0 + i * 500_000 for i in range(n)]
    segs = _partition_csv(tmp_path, _rows(t), rate=rate)
    assert [s.day for s in segs] == [20191118, 20191119, 20191120]
    assert [s.partial for s in segs] == [True, False, True]


def test_partition_respects_utc_offset(tmp_path):
    rows = _rows([_ts("2019-11-18 07:59:59.990"), _ts("2019-11-18 08:00:00.000")])
    segs = _partition_csv(tmp_path, rows, offset_s=-28800)
    assert [s.day for s in segs] == [20191117, 20191118]


def test_partition_is_lazy(tmp_path):
    t0 = _ts("2019-11-18 00:00:00.000")
    t = [t0 + i * US_PER_DAY // 4 for i in range(12)]  # 3 days, 4 rows each
    path = write_csv(tmp_path / "rec.csv", _rows(t))
    with open_stream(path, 1) as s:
        gen = partition(s, 0, rate_hz=100.0)
        first = next(gen)
        assert first.day == 20191118
        # far from exhausted: only enough rows to see the next day
        assert s.line_no <= 6


def test_partition_requires_fresh_stream(tmp_path):
    path = write_csv(tmp_path / "rec.csv", _rows([_ts("2019-11-18 00:00:00.000")]))
    with open_stream(path, 10) as s:
        from pecktrack.ingest import next_chunk

        next_chunk(s)
        with pytest.raises(ValueError):
            list(partition(s, 0))


def test_conservation_and_block_law_on_random_gappy_input(tmp_path, rng):
    # random multi-day arrival pattern with gaps; verify every invariant
    rate = 10.0
    period = 100_000
    gap_tol = 1.5
    t0 = _ts("2019-11-18 20:00:00.000")
    t = [t0]
    for _ in range(3000):
        if rng.random() < 0.01:
            step = int(rng.integers(2, 40)) * period  # gap
        else:
            step = period
        t.append(t[-1] + step)
    vals = rng.normal(0, 1, (len(t), 3)).round(4)
    rows = [
        f"{r.split(',')[0]},{v[0]},{v[1]},{v[2]}"
        for r, v in zip(_rows(t), vals)
    ]
    segs = _partition_csv(tmp_path, rows, rate=rate, tol=gap_tol, chunk=137)

    # conservation
    assert sum(s.sample_count for s in segs) == len(t)
    # chronological, no duplicate days
    days = [s.day for s in segs]
    assert days == sorted(days) and len(set(days)) == len(days)
    # concatenating block starts + implied times reproduces the input order
    flat = []
    for s in segs:
        for b in s.blocks:
            flat.extend(b.samples[:, 0].tolist())
    assert len(flat) == len(t)
    # gap law: reconstruct boundaries and compare against a naive split
    naive_blocks = 1
    for a, b in zip(t, t[1:]):
        if (b - a > gap_tol * 1_000_000 / rate
                or day_key(b, 0) != day_key(a, 0)):
            naive_blocks += 1
    assert sum(len(s.blocks) for s in segs) == naive_blocks


# ---------------------------------------------------------------------------
# day files
# ---------------------------------------------------------------------------

def test_write_names_file_by_day(tmp_path):
    seg = make_segment(day=20191118)
    path = write_day_file(seg, tmp_path)
    assert path.name == "day_20191118.chk"


def test_round_trip_identity(tmp_path, rng):
    blocks = [
        (1574035200_000_000, rng.normal(0, 2, (257, 3))),
        (1574038800_000_000, rng.normal(0, 2, (31, 3))),
    ]
    seg = make_segment(blocks=blocks, partial=True)
    path = write_day_file(seg, tmp_path)
    assert read_day_file(path) == seg


def test_round_trip_preserves_negative_zero_bits(tmp_path):
    data = np.array([[0.0, -0.0, 1.0]] * 4, np.float32)
    seg = make_segment(blocks=[(0, data)])
    back = read_day_file(write_day_file(seg, tmp_path))
    assert back == seg
    assert np.signbit(back.blocks[0].samples[0, 1])


def test_refuses_zero_blocks(tmp_path):
    seg = DaySegment(20191118, 0, 100.0, [], False)
    with pytest.raises(ValueError):
        write_day_file(seg, tmp_path)


def test_existing_file_replaced_atomically(tmp_path):
    seg1 = make_segment(blocks=[(0, np.ones((8, 3), np.float32))])
    seg2 = make_segment(blocks=[(0, np.zeros((4, 3), np.float32))], partial=True)
    write_day_file(seg1, tmp_path)
    write_day_file(seg2, tmp_path)
    assert read_day_file(tmp_path / "day_20191118.chk") == seg2
    assert list(tmp_path.iterdir()) == [tmp_path / "day_20191118.chk"]


def test_flipped_payload_byte_detected(tmp_path):
    seg = make_segment()
    path = write_day_file(seg, tmp_path)
    raw = bytearray(path.read_bytes())
    payload_start = 32 + 16  # header + first block header
    raw[payload_start + 100] ^= 0x40
    path.write_bytes(raw)
    with pytest.raises(ChecksumMismatchError):
        read_day_file(path)


def test_truncated_file_detected(tmp_path):
    seg = make_segment()
    path = write_day_file(seg, tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncatedFileError):
        read_day_file(path)


def test_bad_magic_detected(tmp_path):
    seg = make_segment()
    path = write_day_file(seg, tmp_path)
    raw = bytearray(path.read_bytes())
    raw[0:8] = b"NOTADAY1"
    path.write_bytes(raw)
    with pytest.raises(BadMagicError):
        read_day_file(path)


def test_unsupported_version_detected(tmp_path):
    seg = make_segment()
    path = write_day_file(seg, tmp_path)
    raw = bytearray(path.read_bytes())
    raw[8] = 2  # version field, little-endian u16
    path.write_bytes(raw)
    with pytest.raises(UnsupportedVersionError):
        read_day_file(path)


def test_unknown_flag_bits_rejected(tmp_path):
    seg = make_segment()
    path = write_day_file(seg, tmp_path)
    raw = bytearray(path.read_bytes())
    raw[11] |= 0x80
    path.write_bytes(raw)
    with pytest.raises(UnsupportedVersionError):
        read_day_file(path)


def test_corrupt_block_count_never_allocates_garbage(tmp_path):
    # block sample_count bytes corrupted to a huge value must fail cleanly
    seg = make_segment()
    path = write_day_file(seg, tmp_path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<Q", raw, 32 + 8, 1 << 60)
    path.write_bytes(raw)
    with pytest.raises(TruncatedFileError):
        read_day_file(path)


def test_file_layout_external_contract(tmp_path):
    samples = np.array(
        [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [10.0, 11.0, 12.0]],
        np.float32,
    )
    seg = DaySegment(20191118, -28800, 100.0, [Block(123456789, samples)], True)
    path = write_day_file(seg, tmp_path)
    raw = path.read_bytes()

    assert raw[0:8] == b"CHKDAY01"
    version, channels, flags = struct.unpack_from("<HBB", raw, 8)
    assert (version, channels, flags) == (1, 3, 1)
    (rate,) = struct.unpack_from("<d", raw, 12)
    assert rate == 100.0
    yyyymmdd, offset, block_count = struct.unpack_from("<IiI", raw, 20)
    assert (yyyymmdd, offset, block_count) == (20191118, -28800, 1)
    start_us, n = struct.unpack_from("<qQ", raw, 32)
    assert (start_us, n) == (123456789, 4)
    payload = np.frombuffer(raw[48 : 48 + 4 * 12], "<f4").reshape(4, 3)
    assert np.array_equal(payload, samples)  # interleaved x,y,z triples
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    assert crc_stored == zlib.crc32(raw[8:-4])
    assert len(raw) == 32 + 16 + 4 * 12 + 4


def test_payload_size_arithmetic_full_day():
    # a 24 h single-block day at 100 Hz: 86400 s x 100 Hz samples
    n = 86400 * 100
    assert n == 8_640_000
    payload = n * 3 * 4
    assert payload == 103_680_000  # ~98.9 MiB
    assert abs(payload / 2**20 - 98.9) < 0.1


def test_round_trip_random_segments(tmp_path, rng):
    for i in range(25):
        n_blocks = int(rng.integers(1, 4))
        blocks = []
        t = int(rng.integers(0, 10**15))
        for _ in range(n_blocks):
            n = int(rng.integers(1, 200))
            blocks.append((t, rng.normal(0, 3, (n, 3))))
            t += n * 10_000 + int(rng.integers(20_000, 10**9))
        seg = DaySegment(
            int(20191101 + rng.integers(0, 28)),
            int(rng.integers(-12, 13)) * 3600,
            float(rng.choice([25.0, 50.0, 100.0])),
            [Block(s, np.asarray(d, np.float32)) for s, d in blocks],
            bool(rng.integers(0, 2)),
        )
        sub = tmp_path / f"case{i}"
        sub.mkdir()
        assert read_day_file(write_day_file(seg, sub)) == seg
