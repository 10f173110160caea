"""Keyed records, synthetic generators, duplicate tagging and dataset files.

Records live in numpy structured arrays with three fields:

* ``key``     -- signed 64-bit join/sort key
* ``table``   -- table tag (``TAG_NONE``, ``TAG_S``, ``TAG_T``; ``TAG_DUMMY`` for padding)
* ``payload`` -- fixed-width opaque bytes (``V<payload_len>``)

Generators stamp the first eight payload bytes with the record's sequence
number (little-endian), so payloads are unique within a dataset and join
outputs can be traced back to their inputs.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DatasetParseError, SpecError

TAG_NONE = 0
TAG_S = 1
TAG_T = 2
TAG_DUMMY = 255

TAG_NAMES = {TAG_NONE: "NONE", TAG_S: "S", TAG_T: "T"}
TAG_BY_NAME = {v: k for k, v in TAG_NAMES.items()}

DEFAULT_PAYLOAD_LEN = 87

# local duplicate runs must stay below 2**LOCAL_BITS for the real embedding
LOCAL_BITS = 20

MAGIC = b"BLDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBQ")


class Record(NamedTuple):
    key: int
    table: int
    payload: bytes


class CompositeKey(NamedTuple):
    """(key, origin machine, index among equal keys on that machine).

    Tuple comparison gives the lexicographic total order directly.
    """

    key: int
    origin_machine: int
    local_index: int


def record_dtype(payload_len: int = DEFAULT_PAYLOAD_LEN) -> np.dtype:
    if payload_len < 0:
        raise SpecError(f"payload length must be >= 0, got {payload_len}")
    return np.dtype([("key", "<i8"), ("table", "u1"), ("payload", f"V{payload_len}")])


def payload_len_of(records: np.ndarray) -> int:
    return records.dtype["payload"].itemsize


def make_records(keys, table: int = TAG_NONE, payload_len: int = DEFAULT_PAYLOAD_LEN,
                 payloads: np.ndarray | None = None) -> np.ndarray:
    """Build a record array from keys; payloads default to the stamped sequence numbers."""
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty(len(keys), dtype=record_dtype(payload_len))
    out["key"] = keys
    out["table"] = table
    if payloads is None:
        payloads = _stamp_payloads(len(keys), payload_len, None)
    out["payload"] = payloads
    return out


def as_records(arr: np.ndarray) -> list[Record]:
    return [Record(int(k), int(t), bytes(p)) for k, t, p in zip(arr["key"], arr["table"], arr["payload"])]


def _stamp_payloads(n: int, payload_len: int, rng: np.random.Generator | None) -> np.ndarray:
    if payload_len == 0:
        return np.zeros(n, dtype="V0")
    buf = np.zeros((n, payload_len), dtype=np.uint8)
    head = min(8, payload_len)
    if head:
        seq = np.arange(n, dtype="<u8").view(np.uint8).reshape(n, 8)
        buf[:, :head] = seq[:, :head]
    if payload_len > 8 and rng is not None and n:
        tail = payload_len - 8
        buf[:, 8:] = np.frombuffer(rng.bytes(n * tail), dtype=np.uint8).reshape(n, tail)
    return buf.view(f"V{payload_len}").reshape(n)


def _check_domain(key_domain) -> tuple[int, int]:
    lo, hi = (int(v) for v in key_domain)
    if hi < lo:
        raise SpecError(f"empty key domain [{lo}, {hi}]")
    return lo, hi


def gen_uniform(n: int, key_domain, seed: int, payload_len: int = DEFAULT_PAYLOAD_LEN,
                table: int = TAG_NONE) -> np.ndarray:
    """n records with keys i.i.d. uniform over the inclusive ``key_domain``."""
    if n < 1:
        raise SpecError(f"n must be >= 1, got {n}")
    lo, hi = _check_domain(key_domain)
    rng = np.random.default_rng(seed)
    keys = rng.integers(lo, hi, size=n, endpoint=True, dtype=np.int64)
    return make_records(keys, table, payload_len, _stamp_payloads(n, payload_len, rng))


def zipf_pmf(domain_size: int, theta: float) -> np.ndarray:
    """P(rank r) proportional to 1 / r**(1 - theta), ranks 1..domain_size."""
    ranks = np.arange(1, domain_size + 1, dtype=np.float64)
    w = ranks ** -(1.0 - theta)
    return w / w.sum()


def gen_zipf(n: int, key_domain, theta: float, seed: int, payload_len: int = DEFAULT_PAYLOAD_LEN,
             table: int = TAG_NONE) -> np.ndarray:
    """Zipf keys; rank r maps to the r-th smallest key of the domain.

    theta=0 is the most skewed (exponent 1), theta=1 is uniform.
    """
    if not 0.0 <= theta <= 1.0:
        raise SpecError(f"theta must lie in [0, 1], got {theta}")
    if n < 1:
        raise SpecError(f"n must be >= 1, got {n}")
    lo, hi = _check_domain(key_domain)
    size = hi - lo + 1
    cdf = np.cumsum(zipf_pmf(size, theta))
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    ranks = np.minimum(np.searchsorted(cdf, u, side="right"), size - 1)
    keys = lo + ranks.astype(np.int64)
    return make_records(keys, table, payload_len, _stamp_payloads(n, payload_len, rng))


def gen_scalar_skew(n: int, skew_count: int, seed: int, payload_len: int = DEFAULT_PAYLOAD_LEN,
                    table: int = TAG_NONE) -> np.ndarray:
    """Exactly ``skew_count`` records carry key n; the rest draw from (n, 2n).

    The filler excludes n itself so the special key's frequency is exact.
    Records are shuffled so the skewed key is spread over the input.
    """
    if not 0 <= skew_count <= n:
        raise SpecError(f"skew_count must lie in [0, n], got {skew_count} for n={n}")
    rest = n - skew_count
    if rest and n < 2:
        raise SpecError("no filler keys available in (n, 2n) for n < 2")
    rng = np.random.default_rng(seed)
    keys = np.empty(n, dtype=np.int64)
    keys[:skew_count] = n
    if rest:
        keys[skew_count:] = rng.integers(n + 1, 2 * n, size=rest, endpoint=False, dtype=np.int64)
    rng.shuffle(keys)
    return make_records(keys, table, payload_len, _stamp_payloads(n, payload_len, rng))


def with_table(records: np.ndarray, table: int) -> np.ndarray:
    out = records.copy()
    out["table"] = table
    return out


def local_run_index(keys: np.ndarray) -> np.ndarray:
    """Position of each element among equal keys, in the given order."""
    keys = np.asarray(keys)
    n = len(keys)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    run_start = np.repeat(starts, np.diff(np.r_[starts, n]))
    idx = np.empty(n, dtype=np.int64)
    idx[order] = np.arange(n) - run_start
    return idx


def tag_duplicates(records: np.ndarray, origin_machine: int) -> list[tuple[CompositeKey, Record]]:
    """Attach composite keys to one machine's records (scalar API).

    Bulk paths use :func:`local_run_index` directly.
    """
    idx = local_run_index(records["key"])
    return [(CompositeKey(rec.key, origin_machine, int(i)), rec)
            for rec, i in zip(as_records(records), idx)]


def check_embeddable(keys: np.ndarray, t: int) -> None:
    """Reject key ranges whose composite embedding would lose injectivity."""
    if len(keys) == 0:
        return
    big = max(abs(int(keys.min())), abs(int(keys.max()))) + 1
    if big * (t + 1) * (1 << LOCAL_BITS) >= 1 << 52:
        raise ConfigError(
            f"keys up to {big} with t={t} exceed float64 resolution for composite embedding")


def embed(keys: np.ndarray, origin: int | np.ndarray, local: np.ndarray, t: int) -> np.ndarray:
    """Injective order-preserving map of (key, origin, local) into float64.

    key + (origin * 2**20 + local) / ((t + 1) * 2**20); origin dominates local.
    """
    local = np.asarray(local)
    if len(local) and int(local.max()) >= 1 << LOCAL_BITS:
        raise ConfigError(
            f"a machine holds a run of >= 2**{LOCAL_BITS} duplicates of one key; "
            "composite embedding cannot separate them")
    scale = float((t + 1) << LOCAL_BITS)
    frac = (np.asarray(origin, dtype=np.float64) * float(1 << LOCAL_BITS) + local) / scale
    return np.asarray(keys, dtype=np.float64) + frac


# -- dataset files ---------------------------------------------------------

def _file_dtype(payload_len: int) -> np.dtype:
    return np.dtype([("key", "<i8"), ("len", "<u4"), ("payload", f"V{payload_len}")])


def _dataset_tag(records: np.ndarray, table: int | None) -> int:
    if table is not None:
        return table
    tags = np.unique(records["table"])
    if len(tags) == 0:
        return TAG_NONE
    if len(tags) > 1:
        raise ConfigError("records mix table tags; pass table= explicitly")
    tag = int(tags[0])
    return tag if tag in TAG_NAMES else TAG_NONE


def encode_binary(records: np.ndarray, table: int | None = None) -> bytes:
    tag = _dataset_tag(records, table)
    plen = payload_len_of(records)
    body = np.empty(len(records), dtype=_file_dtype(plen))
    body["key"] = records["key"]
    body["len"] = plen
    body["payload"] = records["payload"]
    return _HEADER.pack(MAGIC, FORMAT_VERSION, tag, 0, len(records)) + body.tobytes()


def decode_binary(data: bytes, payload_len: int = DEFAULT_PAYLOAD_LEN) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise DatasetParseError("truncated header", len(data))
    magic, version, tag, _reserved, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetParseError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise DatasetParseError(f"unsupported version {version}", 4)
    if tag not in TAG_NAMES:
        raise DatasetParseError(f"unknown table tag {tag}", 6)
    pos = _HEADER.size
    if count == 0:
        if len(data) != pos:
            raise DatasetParseError("trailing bytes after empty dataset", pos)
        return np.zeros(0, dtype=record_dtype(payload_len))
    if len(data) < pos + 12:
        raise DatasetParseError("truncated record", len(data))
    plen = struct.unpack_from("<I", data, pos + 8)[0]
    fdt = _file_dtype(plen)
    expected = pos + count * fdt.itemsize
    if len(data) < expected:
        raise DatasetParseError(
            f"truncated body: header declares {count} records of {fdt.itemsize} bytes", len(data))
    if len(data) > expected:
        raise DatasetParseError("trailing bytes after last record", expected)
    body = np.frombuffer(data, dtype=fdt, count=count, offset=pos)
    bad = np.flatnonzero(body["len"] != plen)
    if len(bad):
        raise DatasetParseError("payload length differs within dataset",
                                pos + int(bad[0]) * fdt.itemsize + 8)
    out = np.empty(count, dtype=record_dtype(plen))
    out["key"] = body["key"]
    out["table"] = tag
    out["payload"] = body["payload"]
    return out


def encode_text(records: np.ndarray, table: int | None = None) -> str:
    tag = _dataset_tag(records, table)
    buf = io.StringIO()
    buf.write(f"# table={TAG_NAMES[tag]} payload_len={payload_len_of(records)}\n")
    for key, payload in zip(records["key"].tolist(), records["payload"]):
        buf.write(f"{key}\t{bytes(payload).hex()}\n")
    return buf.getvalue()


def decode_text(text: str) -> np.ndarray:
    lines = text.splitlines(keepends=True)
    if not lines or not lines[0].startswith("# "):
        raise DatasetParseError("missing text header", 0)
    try:
        fields = dict(item.split("=", 1) for item in lines[0][2:].split())
        tag = TAG_BY_NAME[fields["table"]]
        plen = int(fields["payload_len"])
    except (KeyError, ValueError) as exc:
        raise DatasetParseError(f"bad text header: {exc}", 0) from None
    offset = len(lines[0].encode())
    keys, payloads = [], []
    for line in lines[1:]:
        try:
            k, hexp = line.rstrip("\n").split("\t")
            p = bytes.fromhex(hexp)
            keys.append(int(k))
        except ValueError:
            raise DatasetParseError("malformed text record", offset) from None
        if len(p) != plen:
            raise DatasetParseError("payload length differs within dataset", offset)
        payloads.append(p)
        offset += len(line.encode())
    out = np.empty(len(keys), dtype=record_dtype(plen))
    out["key"] = keys
    out["table"] = tag
    if keys:
        out["payload"] = np.frombuffer(b"".join(payloads), dtype=f"V{plen}") if plen else b""
    return out


def write_dataset(records: np.ndarray, path, format: str = "binary", table: int | None = None) -> None:
    path = Path(path)
    if format == "binary":
        path.write_bytes(encode_binary(records, table))
    elif format == "text":
        path.write_text(encode_text(records, table))
    else:
        raise ConfigError(f"unknown dataset format {format!r}")


def read_dataset(path, format: str = "binary", payload_len: int = DEFAULT_PAYLOAD_LEN) -> np.ndarray:
    path = Path(path)
    if format == "binary":
        return decode_binary(path.read_bytes(), payload_len)
    if format == "text":
        return decode_text(path.read_text())
    raise ConfigError(f"unknown dataset format {format!r}")

