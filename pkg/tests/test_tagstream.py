import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coalescence_lab import tagstream as ts
from coalescence_lab.tagstream import TagStream, TagStreamError, TagStreamHeader

TIME_MAX = (1 << 55) - 1


@st.composite
def streams(draw, max_records=60):
    n = draw(st.integers(0, max_records))
    trial = draw(st.lists(st.integers(0, 2 ** 64 - 1), min_size=n, max_size=n))
    chan = draw(st.lists(st.integers(0, 2), min_size=n, max_size=n))
    time = draw(st.lists(st.integers(-TIME_MAX, TIME_MAX), min_size=n, max_size=n))
    rec = ts.make_records(np.array(trial, dtype=np.uint64), chan, time)
    rec = rec[ts.sort_order(rec)]
    header = TagStreamHeader(
        rep_rate=draw(st.floats(0.1, 1000.0, allow_nan=False)),
        n_trials=draw(st.integers(0, 2 ** 64 - 1)),
        seed=draw(st.one_of(st.none(), st.integers(0, 2 ** 64 - 1))),
        params_digest=draw(st.binary(min_size=16, max_size=16)).hex())
    return TagStream(header, rec)


@settings(max_examples=100)
@given(streams(), st.sampled_from(["tags", "csv"]), st.integers(1, 7))
def test_round_trip(tmp_path_factory, s, ext, chunk):
    path = tmp_path_factory.mktemp("rt") / f"s.{ext}"
    ts.save_stream(path, s)
    back = ts.load_stream(path)
    assert back.equals(s)
    header, chunks = ts.read_stream(path, chunk_records=chunk)
    parts = list(chunks)
    assert header == s.header
    assert all(len(p) <= chunk for p in parts)
    got = np.concatenate(parts) if parts else ts.empty_records()
    assert np.array_equal(got, s.records)


@settings(max_examples=100)
@given(streams())
def test_binary_size_and_encode_decode(s):
    blob = ts.encode_records(s.records)
    assert len(blob) == ts.RECORD_SIZE * len(s)
    assert np.array_equal(ts.decode_records(blob), s.records)


def test_binary_file_size(tmp_path):
    rec = ts.make_records([0, 0, 3], [0, 1, 2], [5, -7, 13000])
    path = tmp_path / "a.tags"
    ts.write_stream(path, TagStreamHeader(n_trials=4), rec)
    assert path.stat().st_size == 64 + 16 * 3


def test_header_layout(tmp_path):
    h = TagStreamHeader(rep_rate=76.0, n_trials=12, seed=99, params_digest="ab" * 16)
    path = tmp_path / "h.tags"
    ts.write_stream(path, h, ts.empty_records())
    raw = path.read_bytes()
    assert raw[:8] == b"HOMTAGS\0"
    version, flags, rep, n, seed = struct.unpack_from("<IIdQQ", raw, 8)
    assert (version, flags, rep, n, seed) == (1, 1, 76.0, 12, 99)
    assert raw[40:56] == bytes.fromhex("ab" * 16)
    assert raw[56:64] == b"\0" * 8


def test_csv_layout(tmp_path):
    h = TagStreamHeader(rep_rate=76.0, n_trials=2, seed=None)
    path = tmp_path / "h.csv"
    ts.write_stream(path, h, ts.make_records([1], [2], [-40]))
    lines = path.read_text().splitlines()
    assert lines[0] == "#format_version=1"
    assert "trial,channel,time_ps" in lines
    assert lines[-1] == "1,2,-40"
    assert ts.load_stream(path).header.seed is None


def test_write_rejects_unsorted(tmp_path):
    rec = ts.make_records([2, 1], [1, 1], [0, 0])
    with pytest.raises(TagStreamError, match="index 1"):
        ts.write_stream(tmp_path / "x.tags", TagStreamHeader(), rec)


def test_write_rejects_bad_channel(tmp_path):
    with pytest.raises(TagStreamError):
        ts.write_stream(tmp_path / "x.tags", TagStreamHeader(), ts.make_records([0], [3], [0]))


def test_time_out_of_range():
    with pytest.raises(TagStreamError):
        ts.encode_records(ts.make_records([0], [1], [1 << 55]))


def test_unknown_extension(tmp_path):
    with pytest.raises(TagStreamError):
        ts.write_stream(tmp_path / "x.bin", TagStreamHeader(), ts.empty_records())


def _write_raw(path, header, records_bytes):
    path.write_bytes(ts._pack_header(header) + records_bytes)


def test_read_detects_unsorted_binary(tmp_path):
    rec = ts.make_records([0, 5, 4, 6], [1, 1, 1, 1], [0, 0, 0, 0])
    path = tmp_path / "u.tags"
    _write_raw(path, TagStreamHeader(), ts.encode_records(rec))
    for chunk in (1, 2, 100):
        _, it = ts.read_stream(path, chunk_records=chunk)
        with pytest.raises(TagStreamError, match="record 2, trial 4"):
            list(it)


def test_read_detects_bad_magic_version_and_truncation(tmp_path):
    good = ts._pack_header(TagStreamHeader())
    p = tmp_path / "b.tags"
    p.write_bytes(b"NOTTAGS\0" + good[8:])
    with pytest.raises(TagStreamError, match="magic"):
        ts.load_stream(p)
    p.write_bytes(good[:8] + struct.pack("<I", 2) + good[12:])
    with pytest.raises(TagStreamError, match="format_version"):
        ts.load_stream(p)
    p.write_bytes(good[:30])
    with pytest.raises(TagStreamError, match="truncated"):
        ts.load_stream(p)
    p.write_bytes(good + b"\0" * 17)
    with pytest.raises(TagStreamError, match="corrupt"):
        ts.load_stream(p)


def test_read_detects_bad_channel_binary(tmp_path):
    rec = ts.make_records([0, 1], [1, 1], [0, 0])
    blob = bytearray(ts.encode_records(rec))
    blob[16 + 8] = 9
    p = tmp_path / "c.tags"
    _write_raw(p, TagStreamHeader(), bytes(blob))
    with pytest.raises(TagStreamError, match="channel 9 out of range at record 1"):
        ts.load_stream(p)


@pytest.mark.parametrize("body,match", [
    ("#format_version=1\n#rep_rate=76.0\n#n_trials=1\ntrial,channel,time_ps\n0,1\n", "corrupt"),
    ("#format_version=1\n#rep_rate=76.0\n#n_trials=1\ntrial,channel,time_ps\n0,x,1\n", "corrupt"),
    ("#format_version=1\n#rep_rate=76.0\n#n_trials=1\ntrial,channel,time_ps\n-1,1,1\n", "corrupt"),
    ("#format_version=2\n#rep_rate=76.0\n#n_trials=1\ntrial,channel,time_ps\n", "format_version"),
    ("#format_version=1\n#n_trials=1\ntrial,channel,time_ps\n", "rep_rate"),
    ("#format_version=1\n#rep_rate=76.0\n#n_trials=1\n", "column"),
    ("#format_version=1\n#rep_rate=76.0\n#n_trials=1\ntrial,channel,time_ps\n1,1,0\n0,1,0\n",
     "sort violation at record 1"),
])
def test_csv_errors(tmp_path, body, match):
    p = tmp_path / "e.csv"
    p.write_text(body)
    with pytest.raises(TagStreamError, match=match):
        ts.load_stream(p)


def test_header_validation():
    with pytest.raises(TagStreamError):
        TagStreamHeader(format_version=2)
    with pytest.raises(TagStreamError):
        TagStreamHeader(rep_rate=0)
    with pytest.raises(TagStreamError):
        TagStreamHeader(params_digest="abc")
    assert TagStreamHeader(rep_rate=76.0).period_ps == 13158


def test_params_digest_is_canonical():
    a = ts.params_digest({"b": 1, "a": [1, 2]})
    b = ts.params_digest({"a": [1, 2], "b": 1})
    assert a == b and len(a) == 32
    assert ts.params_digest({"a": 1}) != ts.params_digest({"a": 2})


@settings(max_examples=50)
@given(streams(40))
def test_first_unsorted_agrees_with_sort(s):
    assert ts.first_unsorted(s.records) is None
    if len(s) >= 2 and not np.array_equal(s.records[::-1], s.records):
        rev = s.records[::-1]
        i = ts.first_unsorted(rev)
        if i is not None:
            assert tuple(rev[i]) < tuple(rev[i - 1]) or \
                (rev[i]["trial"], rev[i]["channel"], rev[i]["time_ps"]) < \
                (rev[i - 1]["trial"], rev[i - 1]["channel"], rev[i - 1]["time_ps"])


def test_stream_helpers():
    rec = ts.make_records([0, 0, 1, 2], [0, 1, 2, 1], [0, 10, 20, 30])
    s = TagStream(TagStreamHeader(n_trials=3), rec, np.arange(4), np.arange(4, dtype=np.uint8))
    assert list(s.counts_per_channel()) == [1, 2, 1]
    c1 = s.channel(1)
    assert len(c1) == 2 and list(c1.emission_ps) == [1, 3]
