"""Time-tag streams: in-memory container and the two on-disk formats.

A record is (trial, channel, time_ps) with time measured from the trial's
pump pulse.  Channel 0 is the herald, channels 1 and 2 the HOM outputs.

CSV (``.csv``)::

    #format_version=1
    #rep_rate=76.0
    ...
    trial,channel,time_ps
    0,1,812

Binary (``.tags``): a 64-byte little-endian header followed by 16-byte
records ``u64 trial | u8 channel | 7-byte signed time_ps``.

Header layout (offsets in bytes)::

    0   8s   magic b"HOMTAGS\\0"
    8   u32  format_version
    12  u32  flags (bit 0: seed present)
    16  f64  rep_rate (MHz)
    24  u64  n_trials
    32  u64  seed
    40  16s  params_digest (raw bytes of the 32-hex-digit digest)
    56  8x   reserved, zero
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, is_dataclass
from typing import Iterator

import numpy as np

FORMAT_VERSION = 1
MAGIC = b"HOMTAGS\0"
HEADER_STRUCT = struct.Struct("<8sIIdQQ16s8x")
HEADER_SIZE = 64
RECORD_SIZE = 16
CHUNK_RECORDS = 1 << 16

RECORD_DTYPE = np.dtype([("trial", "<u8"), ("channel", "u1"), ("time_ps", "<i8")])
_BIN_DTYPE = np.dtype([("trial", "<u8"), ("channel", "u1"), ("time", "u1", (7,))])
_TIME_LIMIT = 1 << 55

CHANNEL_HERALD, CHANNEL_HOM1, CHANNEL_HOM2 = 0, 1, 2
N_CHANNELS = 3

assert HEADER_STRUCT.size == HEADER_SIZE and _BIN_DTYPE.itemsize == RECORD_SIZE


class TagStreamError(ValueError):
    """Malformed, mis-versioned or unsorted stream."""


@dataclass(frozen=True)
class TagStreamHeader:
    format_version: int = FORMAT_VERSION
    rep_rate: float = 76.0
    n_trials: int = 0
    seed: int | None = None
    params_digest: str = "0" * 32

    def __post_init__(self):
        if self.format_version != FORMAT_VERSION:
            raise TagStreamError(f"unsupported format_version {self.format_version}")
        if not self.rep_rate > 0:
            raise TagStreamError("rep_rate must be > 0")
        if len(self.params_digest) != 32:
            raise TagStreamError("params_digest must be 32 hex digits")
        bytes.fromhex(self.params_digest)

    @property
    def period_ps(self) -> int:
        return int(round(1e6 / self.rep_rate))


def params_digest(params) -> str:
    """Truncated SHA-256 of the canonical JSON form of a parameter document."""
    doc = asdict(params) if is_dataclass(params) else params
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:32]


def empty_records(n: int = 0) -> np.ndarray:
    return np.zeros(n, dtype=RECORD_DTYPE)


def make_records(trial, channel, time_ps) -> np.ndarray:
    # explicit dtypes: python ints above 2**63 would otherwise go through float64
    trial = np.asarray(trial, dtype=np.uint64)
    rec = empty_records(len(trial))
    rec["trial"] = trial
    rec["channel"] = channel
    rec["time_ps"] = time_ps
    return rec


def sort_order(records: np.ndarray) -> np.ndarray:
    return np.lexsort((records["time_ps"], records["channel"], records["trial"]))


def first_unsorted(records: np.ndarray) -> int | None:
    """Index of the first record that breaks (trial, channel, time_ps) order."""
    if len(records) < 2:
        return None
    t, c, x = records["trial"], records["channel"], records["time_ps"]
    prev_t, next_t = t[:-1], t[1:]
    prev_c, next_c = c[:-1], c[1:]
    bad = (next_t < prev_t) | ((next_t == prev_t) & (
        (next_c < prev_c) | ((next_c == prev_c) & (x[1:] < x[:-1]))))
    idx = np.flatnonzero(bad)
    return int(idx[0]) + 1 if len(idx) else None


@dataclass
class TagStream:
    """Sorted detection records plus optional simulation ground truth.

    ``emission_ps`` holds pre-jitter emission times and ``source`` the
    emitter label (see ``mc_engine.SOURCE_*``); both are in-memory only and
    are not written to disk.
    """

    header: TagStreamHeader
    records: np.ndarray
    emission_ps: np.ndarray | None = None
    source: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def select(self, mask) -> "TagStream":
        pick = lambda a: None if a is None else a[mask]
        return TagStream(self.header, self.records[mask], pick(self.emission_ps),
                         pick(self.source))

    def channel(self, ch: int) -> "TagStream":
        return self.select(self.records["channel"] == ch)

    def counts_per_channel(self) -> np.ndarray:
        return np.bincount(self.records["channel"], minlength=N_CHANNELS)

    def equals(self, other: "TagStream") -> bool:
        return self.header == other.header and np.array_equal(self.records, other.records)


# --- writing ----------------------------------------------------------------

def _check_sorted(records):
    bad = first_unsorted(records)
    if bad is not None:
        raise TagStreamError(
            f"records not sorted by (trial, channel, time_ps); first offense at "
            f"index {bad}, trial {int(records['trial'][bad])}")


def _check_channels(records, offset=0):
    bad = np.flatnonzero(records["channel"] >= N_CHANNELS)
    if len(bad):
        i = int(bad[0])
        raise TagStreamError(f"channel {int(records['channel'][i])} out of range at record "
                             f"{offset + i}, trial {int(records['trial'][i])}")


def encode_records(records: np.ndarray) -> bytes:
    t = records["time_ps"].astype("<i8")
    if np.any(np.abs(t) >= _TIME_LIMIT):
        raise TagStreamError("time_ps exceeds the 56-bit signed range")
    out = np.zeros(len(records), dtype=_BIN_DTYPE)
    out["trial"] = records["trial"]
    out["channel"] = records["channel"]
    out["time"] = t.view("u1").reshape(-1, 8)[:, :7]
    return out.tobytes()


def decode_records(buf: bytes) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=_BIN_DTYPE)
    b8 = np.zeros((len(raw), 8), dtype="u1")
    b8[:, :7] = raw["time"]
    b8[:, 7] = np.where(raw["time"][:, 6] & 0x80, 0xFF, 0x00)
    rec = empty_records(len(raw))
    rec["trial"] = raw["trial"]
    rec["channel"] = raw["channel"]
    rec["time_ps"] = b8.reshape(-1).view("<i8")
    return rec


def _pack_header(h: TagStreamHeader) -> bytes:
    flags = 1 if h.seed is not None else 0
    return HEADER_STRUCT.pack(MAGIC, h.format_version, flags, float(h.rep_rate),
                              int(h.n_trials), int(h.seed or 0),
                              bytes.fromhex(h.params_digest))


def _unpack_header(buf: bytes) -> TagStreamHeader:
    if len(buf) != HEADER_SIZE:
        raise TagStreamError("truncated header")
    magic, version, flags, rep, n, seed, digest = HEADER_STRUCT.unpack(buf)
    if magic != MAGIC:
        raise TagStreamError("not a tag stream file (bad magic)")
    if version != FORMAT_VERSION:
        raise TagStreamError(f"unsupported format_version {version}")
    return TagStreamHeader(version, rep, n, seed if flags & 1 else None, digest.hex())


def _csv_header_lines(h: TagStreamHeader) -> list[str]:
    lines = [f"#format_version={h.format_version}", f"#rep_rate={h.rep_rate!r}",
             f"#n_trials={h.n_trials}"]
    if h.seed is not None:
        lines.append(f"#seed={h.seed}")
    lines.append(f"#params_digest={h.params_digest}")
    return lines


def _fmt(path, fmt):
    if fmt is not None:
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".csv":
        return "csv"
    if ext == ".tags":
        return "binary"
    raise TagStreamError(f"cannot infer format from extension {ext!r}")


def write_stream(path, header: TagStreamHeader, records: np.ndarray, fmt: str | None = None):
    """Write records (already sorted) in the format implied by the extension."""
    records = np.asarray(records, dtype=RECORD_DTYPE)
    _check_sorted(records)
    _check_channels(records)
    fmt = _fmt(path, fmt)
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_pack_header(header))
            for i in range(0, len(records), CHUNK_RECORDS):
                fh.write(encode_records(records[i:i + CHUNK_RECORDS]))
    elif fmt == "csv":
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(_csv_header_lines(header)) + "\n")
            fh.write("trial,channel,time_ps\n")
            for i in range(0, len(records), CHUNK_RECORDS):
                r = records[i:i + CHUNK_RECORDS]
                fh.writelines(f"{a},{b},{c}\n" for a, b, c in
                              zip(r["trial"].tolist(), r["channel"].tolist(),
                                  r["time_ps"].tolist()))
    else:
        raise TagStreamError(f"unknown format {fmt!r}")


# --- reading ----------------------------------------------------------------

def _validated(chunks: Iterator[np.ndarray]) -> Iterator[np.ndarray]:
    last = None
    offset = 0
    for chunk in chunks:
        _check_channels(chunk, offset)
        probe = chunk if last is None else np.concatenate([last, chunk])
        bad = first_unsorted(probe)
        if bad is not None:
            trial = int(probe["trial"][bad])
            idx = offset + bad - (0 if last is None else 1)
            raise TagStreamError(f"sort violation at record {idx}, trial {trial}")
        if len(chunk):
            last = chunk[-1:]
        offset += len(chunk)
        yield chunk


def _iter_binary(fh, chunk_records):
    while True:
        buf = fh.read(RECORD_SIZE * chunk_records)
        if not buf:
            return
        if len(buf) % RECORD_SIZE:
            raise TagStreamError("corrupt record: file length is not header + 16*n bytes")
        yield decode_records(buf)


def _iter_csv(fh, chunk_records):
    rows = []
    lineno = 0
    for line in fh:
        lineno += 1
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        try:
            if len(parts) != 3:
                raise ValueError
            tr, ch, t = int(parts[0]), int(parts[1]), int(parts[2])
            if not (0 <= tr < 1 << 64 and 0 <= ch < 256 and abs(t) < _TIME_LIMIT):
                raise ValueError
            rows.append((tr, ch, t))
        except ValueError:
            raise TagStreamError(f"corrupt record on data line {lineno}: {line!r}") from None
        if len(rows) >= chunk_records:
            yield make_records(*zip(*rows)) if rows else empty_records()
            rows = []
    if rows:
        yield make_records(*zip(*rows))


def _read_csv_header(fh) -> TagStreamHeader:
    meta = {}
    while True:
        line = fh.readline()
        if not line:
            raise TagStreamError("missing column line")
        line = line.strip()
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
            continue
        if line != "trial,channel,time_ps":
            raise TagStreamError(f"unexpected column line {line!r}")
        break
    try:
        version = int(meta.get("format_version", -1))
    except ValueError:
        raise TagStreamError("bad format_version") from None
    if version != FORMAT_VERSION:
        raise TagStreamError(f"unsupported format_version {meta.get('format_version')}")
    try:
        return TagStreamHeader(
            version, float(meta["rep_rate"]), int(meta["n_trials"]),
            int(meta["seed"]) if "seed" in meta else None,
            meta.get("params_digest", "0" * 32))
    except KeyError as e:
        raise TagStreamError(f"missing header key {e}") from None


class StreamReader:
    """Context manager yielding the header and a chunked record iterator."""

    def __init__(self, path, fmt: str | None = None, chunk_records: int = CHUNK_RECORDS):
        self.path = path
        self.fmt = _fmt(path, fmt)
        self.chunk_records = chunk_records
        self._fh = None

    def __enter__(self):
        if self.fmt == "binary":
            self._fh = open(self.path, "rb")
            self.header = _unpack_header(self._fh.read(HEADER_SIZE))
        else:
            self._fh = open(self.path, "r")
            self.header = _read_csv_header(self._fh)
        return self

    def __exit__(self, *exc):
        self._fh.close()

    def __iter__(self):
        src = (_iter_binary if self.fmt == "binary" else _iter_csv)(self._fh, self.chunk_records)
        return _validated(src)


def read_stream(path, fmt: str | None = None, chunk_records: int = CHUNK_RECORDS):
    """Return ``(header, iterator over record chunks)`` without loading the file.

    The iterator keeps the file open until exhausted.
    """
    reader = StreamReader(path, fmt, chunk_records).__enter__()

    def gen():
        try:
            yield from reader
        finally:
            reader.__exit__(None, None, None)

    return reader.header, gen()


def load_stream(path, fmt: str | None = None) -> TagStream:
    header, chunks = read_stream(path, fmt)
    parts = list(chunks)
    records = np.concatenate(parts) if parts else empty_records()
    return TagStream(header, records)


def save_stream(path, stream: TagStream, fmt: str | None = None):
    write_stream(path, stream.header, stream.records, fmt)
