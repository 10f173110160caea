"""Sequential ground truth: stable sort and per-key nested-loop equi-join."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import records as rec
from .errors import ConfigError


@dataclass
class JoinSummary:
    W: int
    size_s: int
    size_t: int
    per_key: dict = field(default_factory=dict)   # key -> (M_k, N_k)

    @property
    def sigma(self) -> float:
        return skew_factor(self)


def joined_dtype(payload_len_s: int, payload_len_t: int) -> np.dtype:
    return np.dtype([("key", "<i8"), ("s_payload", f"V{payload_len_s}"),
                     ("t_payload", f"V{payload_len_t}")])


def seq_sort(records: np.ndarray) -> np.ndarray:
    """Stable sort by primary key using Python's merge-based sort."""
    keys = records["key"].tolist()
    order = sorted(range(len(keys)), key=keys.__getitem__)
    return records[np.asarray(order, dtype=np.int64)]


def _group(table: np.ndarray) -> dict:
    groups = defaultdict(list)
    for i, k in enumerate(table["key"].tolist()):
        groups[k].append(i)
    return groups


def oracle_join(S: np.ndarray, T: np.ndarray, materialize: bool = True):
    """Exact equi-join. Returns (joined array or None, JoinSummary).

    Groups each table by key, then runs a nested loop inside every shared key.
    """
    gs, gt = _group(S), _group(T)
    per_key = {k: (len(gs[k]), len(gt[k])) for k in sorted(gs.keys() & gt.keys())}
    W = sum(a * b for a, b in per_key.values())
    summary = JoinSummary(W, len(S), len(T), per_key)
    if not materialize:
        return None, summary
    s_idx, t_idx = [], []
    for k in per_key:
        for i in gs[k]:
            for j in gt[k]:
                s_idx.append(i)
                t_idx.append(j)
    out = np.empty(W, dtype=joined_dtype(rec.payload_len_of(S), rec.payload_len_of(T)))
    s_idx = np.asarray(s_idx, dtype=np.int64)
    t_idx = np.asarray(t_idx, dtype=np.int64)
    out["key"] = S["key"][s_idx] if W else []
    out["s_payload"] = S["payload"][s_idx] if W else []
    out["t_payload"] = T["payload"][t_idx] if W else []
    return out, summary


def skew_factor(summary: JoinSummary) -> float:
    """sigma = |S join T| / (|S| + |T|)."""
    total = summary.size_s + summary.size_t
    if total == 0:
        raise ConfigError("skew factor undefined for empty inputs")
    return summary.W / total


def canonical_multiset(joined: np.ndarray) -> np.ndarray:
    """Order-free canonical form: rows viewed as raw bytes, sorted."""
    joined = np.ascontiguousarray(joined)
    return np.sort(joined.view(f"S{joined.dtype.itemsize}"))


def same_multiset(a: np.ndarray, b: np.ndarray) -> bool:
    if len(a) != len(b) or a.dtype != b.dtype:
        return False
    return bool(np.array_equal(canonical_multiset(a), canonical_multiset(b)))
