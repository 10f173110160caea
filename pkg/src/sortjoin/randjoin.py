"""RandJoin: one-round randomized skew join over an a x b machine matrix.

An S tuple picks a row i uniformly and is replicated to the b machines of that
row; a T tuple picks a column j and goes to the a machines of that column.
The pair (s, t) meets on exactly one machine, A[i, j].
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import records as rec
from .errors import ConfigError
from .metrics import build_report
from .oracle import joined_dtype
from .runtime import Cluster


@dataclass(frozen=True)
class MachineMatrix:
    a: int
    b: int

    @property
    def t(self) -> int:
        return self.a * self.b

    def machine(self, i: int, j: int) -> int:
        """Row-major: A[i, j] -> (i-1)*b + j."""
        return (i - 1) * self.b + j

    def row_of(self, machine_id: int) -> int:
        return (machine_id - 1) // self.b + 1

    def col_of(self, machine_id: int) -> int:
        return (machine_id - 1) % self.b + 1


def choose_matrix_dims(t: int, size_s: int, size_t: int) -> tuple[int, int]:
    """Factor pair a*b = t minimising a|T| + b|S|; ties go to the smaller a."""
    if t < 1:
        raise ConfigError(f"machine count must be >= 1, got {t}")
    best = None
    for a in range(1, t + 1):
        if t % a:
            continue
        b = t // a
        cost = a * size_t + b * size_s
        if best is None or cost < best[0]:
            best = (cost, a, b)
    return best[1], best[2]


def _interval(u: np.ndarray | float, count: int):
    return np.floor(np.asarray(u) * count).astype(np.int64) + 1


def assign_tuple(record, matrix: MachineMatrix, rng: np.random.Generator) -> list[int]:
    """Destination machines for one tagged tuple."""
    table = int(record["table"]) if not isinstance(record, rec.Record) else record.table
    if table == rec.TAG_S:
        i = int(_interval(rng.random(), matrix.a))
        return [matrix.machine(i, j) for j in range(1, matrix.b + 1)]
    if table == rec.TAG_T:
        j = int(_interval(rng.random(), matrix.b))
        return [matrix.machine(i, j) for i in range(1, matrix.a + 1)]
    raise ConfigError(f"tuple has no S/T table tag (tag={table})")


def draw_intervals(tables: np.ndarray, matrix: MachineMatrix, rng: np.random.Generator) -> np.ndarray:
    """Bulk form of :func:`assign_tuple`: one uniform per tuple, in order."""
    if np.any((tables != rec.TAG_S) & (tables != rec.TAG_T)):
        raise ConfigError("every tuple needs an S or T table tag")
    u = rng.random(len(tables))
    counts = np.where(tables == rec.TAG_S, matrix.a, matrix.b)
    return np.floor(u * counts).astype(np.int64) + 1


def local_join(s_part: np.ndarray, t_part: np.ndarray, s_group, t_group, materialize: bool):
    """Cross product of S and T rows sharing a group id (the key, or a rectangle id).

    Inputs must be sorted by group id. Returns (joined rows or None, pairs per S row).
    """
    s_group = np.asarray(s_group)
    t_group = np.asarray(t_group)
    lo = np.searchsorted(t_group, s_group, side="left")
    hi = np.searchsorted(t_group, s_group, side="right")
    cnt = hi - lo
    if not materialize:
        return None, cnt
    total = int(cnt.sum())
    out = np.empty(total, dtype=joined_dtype(rec.payload_len_of(s_part), rec.payload_len_of(t_part)))
    if total:
        s_idx = np.repeat(np.arange(len(s_part)), cnt)
        starts = np.cumsum(cnt) - cnt
        t_idx = lo[s_idx] + (np.arange(total) - starts[s_idx])
        out["key"] = s_part["key"][s_idx]
        out["s_payload"] = s_part["payload"][s_idx]
        out["t_payload"] = t_part["payload"][t_idx]
    return out, cnt


def _split_tables(part: np.ndarray):
    order = np.lexsort((part["table"], part["key"]))
    part = part[order]
    s_part = part[part["table"] == rec.TAG_S]
    t_part = part[part["table"] == rec.TAG_T]
    return s_part, t_part


def initial_partitions(S: np.ndarray, T: np.ndarray, t: int) -> list:
    return [np.concatenate((s, tt)) for s, tt in zip(np.array_split(S, t), np.array_split(T, t))]


def randjoin(cluster: Cluster, S: np.ndarray, T: np.ndarray, materialize: bool = True):
    """Join S and T; returns (per-machine outputs or None, per-machine counts, report)."""
    t = cluster.t
    if np.any(S["table"] != rec.TAG_S) or np.any(T["table"] != rec.TAG_T):
        raise ConfigError("randjoin expects S rows tagged S and T rows tagged T")
    a, b = choose_matrix_dims(t, len(S), len(T))
    matrix = MachineMatrix(a, b)
    cluster.scatter(initial_partitions(S, T, t))

    def map_phase(ctx):
        part = ctx.store
        iv = draw_intervals(part["table"], matrix, ctx.rng)
        is_s = part["table"] == rec.TAG_S
        outbox = {}
        for dest in range(1, t + 1):
            sel = (is_s & (iv == matrix.row_of(dest))) | (~is_s & (iv == matrix.col_of(dest)))
            if sel.any():
                outbox[dest] = part[sel]
        ctx.touch(len(part))
        return None, outbox

    r1 = cluster.execute_round(map_phase, "randjoin-map")

    def reduce_phase(ctx):
        streams = [ctx.inbox[i] for i in sorted(ctx.inbox)]
        got = np.concatenate(streams) if streams else np.zeros(0, dtype=S.dtype)
        s_part, t_part = _split_tables(got)
        out, cnt = local_join(s_part, t_part, s_part["key"], t_part["key"], materialize)
        produced = int(cnt.sum())
        ctx.touch(len(got) + produced)
        ctx.emit(produced)
        return out

    cluster.collect(reduce_phase)
    outputs = [mc.store for mc in cluster.machines] if materialize else None
    counts = list(r1.produced)
    W = sum(counts)
    return outputs, counts, _report(cluster, S, T, matrix, W)


def key_counts(table: np.ndarray) -> dict:
    keys, cnt = np.unique(table["key"], return_counts=True)
    return dict(zip(keys.tolist(), cnt.tolist()))


def balance_hypothesis(S: np.ndarray, T: np.ndarray, matrix: MachineMatrix) -> bool:
    """Every non-empty per-key result has M/a >= 300 and N/b >= 300."""
    cs, ct = key_counts(S), key_counts(T)
    return all(cs[k] >= 300 * matrix.a and ct[k] >= 300 * matrix.b for k in cs.keys() & ct.keys())


def _report(cluster, S, T, matrix, W):
    t = cluster.t
    r1 = cluster.round_log[0]
    n_in = len(S) + len(T)
    checks = {
        "replication": sum(r1.sent) == matrix.b * len(S) + matrix.a * len(T),
        # statistical: P(violation) <= 1.2e-9 when the hypothesis holds
        "output_balance": all(p * t < 2 * W for p in r1.produced) if W else True,
    }
    sigma = Fraction(W, n_in) if n_in else Fraction(0)
    extra = {"a": matrix.a, "b": matrix.b, "W": W, "sigma": float(sigma),
             "balance_hypothesis": balance_hypothesis(S, T, matrix)}
    if sigma:
        extra["theoretical_k"] = float(2 + t / sigma)
    return build_report(cluster.round_log, n_in, W, t, "randjoin", alpha=1,
                        checks=checks, extra=extra, notes=["self-sends counted in N_i"])
