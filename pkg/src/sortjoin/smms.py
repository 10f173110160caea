"""SMMS: deterministic three-round parallel sort.

Round 1 sorts each partition, tags duplicates with composite keys and sends
s+1 equi-depth samples to machine 1. Round 2 computes t+1 bucket boundaries
from the piecewise-constant density implied by the samples and broadcasts
them. Round 3 routes every record to its bucket's machine, which merges the
t incoming sorted streams.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import records as rec
from .errors import ConfigError
from .metrics import build_report
from .runtime import Cluster


@dataclass
class BucketBoundaries:
    values: np.ndarray  # b_0 .. b_t
    events: int = 0

    @property
    def t(self) -> int:
        return len(self.values) - 1

    def route(self, x: np.ndarray) -> np.ndarray:
        """Machine id (1-based) of each value: bucket k is [b_{k-1}, b_k).

        Values below b_0 go to machine 1; values at or above b_{t-1} to machine t,
        so the global maximum b_t lands on the last machine.
        """
        return np.searchsorted(self.values[1:-1], x, side="right") + 1


def tagged_dtype(record_dt: np.dtype) -> np.dtype:
    return np.dtype(record_dt.descr + [("origin", "<u4"), ("local", "<u4"), ("emb", "<f8")])


def sample_equidepth(sorted_keys: np.ndarray, s: int) -> np.ndarray:
    """lambda_0 = smallest key, lambda_j = ceil(j*m/s)-th smallest for j = 1..s."""
    m = len(sorted_keys)
    if m <= s:
        raise ConfigError(f"each machine needs more than s={s} records for strict samples, has {m}")
    j = np.arange(1, s + 1, dtype=np.int64)
    pos = (j * m + s - 1) // s
    return np.concatenate((sorted_keys[:1], sorted_keys[pos - 1]))


def sample_densities(samples: np.ndarray, m: int) -> np.ndarray:
    s = len(samples) - 1
    mu = np.zeros(s + 1)
    mu[:s] = (m / s) / np.diff(samples)
    return mu


def compute_bucket_boundaries(sample_set, m: int) -> BucketBoundaries:
    """Sweep all samples in value order, cutting a bucket every m units of estimated mass.

    ``sample_set`` holds one strictly increasing array of s+1 samples per machine.
    """
    sample_set = [np.asarray(lam, dtype=np.float64) for lam in sample_set]
    t = len(sample_set)
    for i, lam in enumerate(sample_set):
        if len(lam) < 2 or np.any(np.diff(lam) <= 0):
            raise ConfigError(f"samples from machine {i + 1} are not strictly increasing")
    lams = [lam.tolist() for lam in sample_set]
    mus = [sample_densities(lam, m).tolist() for lam in sample_set]

    heap = [(lams[i][0], i, 0) for i in range(t)]
    heapq.heapify(heap)
    past = [0.0] * t
    bounds: list[float] = []
    pdf = pre = cur = 0.0
    lam = 0.0
    events = 0
    while heap:
        lam, i, j = heapq.heappop(heap)
        events += 1
        if not bounds:
            bounds.append(lam)
            pre = lam
        gain = (lam - pre) * pdf
        # one interval can hold more than m of mass: cut as often as needed
        while cur + gain >= m and len(bounds) < t and pdf > 0:
            cut = pre + (m - cur) / pdf
            bounds.append(cut)
            gain = (lam - cut) * pdf
            pre = cut
            cur = 0.0
        cur += gain
        pre = lam
        pdf += mus[i][j] - past[i]
        past[i] = mus[i][j]
        if j + 1 < len(lams[i]):
            heapq.heappush(heap, (lams[i][j + 1], i, j + 1))
    while len(bounds) < t:
        bounds.append(lam)
    bounds.append(lam)
    return BucketBoundaries(np.array(bounds), events)


def bucket_masses(sample_set, m: int, boundaries) -> np.ndarray:
    """Estimated record count of every bucket by direct integration of the densities."""
    b = np.asarray(boundaries, dtype=np.float64)
    masses = np.zeros(len(b) - 1)
    for lam in sample_set:
        lam = np.asarray(lam, dtype=np.float64)
        mu = sample_densities(lam, m)[:-1]
        lo = np.maximum(lam[:-1, None], b[None, :-1])
        hi = np.minimum(lam[1:, None], b[None, 1:])
        masses += (np.clip(hi - lo, 0, None) * mu[:, None]).sum(axis=0)
    return masses


def kway_merge(streams) -> np.ndarray:
    """Merge sorted tagged streams with a size-t heap; returns the merged array."""
    streams = [s for s in streams if len(s)]
    if not streams:
        return None
    if len(streams) == 1:
        return streams[0].copy()
    iters = []
    for si, s in enumerate(streams):
        iters.append(zip(s["key"].tolist(), s["origin"].tolist(), s["local"].tolist(),
                         [si] * len(s), range(len(s))))
    offsets = np.cumsum([0] + [len(s) for s in streams])
    picks = np.fromiter((offsets[e[3]] + e[4] for e in heapq.merge(*iters)),
                        dtype=np.int64, count=int(offsets[-1]))
    return np.concatenate(streams)[picks]


def pad_to_multiple(data: np.ndarray, t: int) -> np.ndarray:
    """Append dummy records (key above every real key) so t divides n."""
    extra = (-len(data)) % t
    if not extra:
        return data
    top = int(data["key"].max()) if len(data) else 0
    if top == np.iinfo(np.int64).max:
        raise ConfigError("cannot pad: data already uses the maximum key")
    pad = np.zeros(extra, dtype=data.dtype)
    pad["key"] = top + 1
    pad["table"] = rec.TAG_DUMMY
    return np.concatenate((data, pad))


def even_split(data: np.ndarray, t: int) -> list:
    return np.array_split(data, t)


def smms_rounds(cluster: Cluster, r: int, group_keys: bool = False) -> BucketBoundaries:
    """Run the three SMMS rounds over the records already scattered on ``cluster``.

    With ``group_keys`` routing uses the primary key alone so every occurrence
    of a key lands on one machine (ties to the lower bucket).
    On return each machine's store is its merged, tagged bucket.
    """
    t = cluster.t
    s = r * t
    sizes = [len(m.store) for m in cluster.machines]
    if len(set(sizes)) != 1:
        raise ConfigError(f"SMMS needs an even distribution, got partition sizes {sizes}")
    m = sizes[0]
    if m <= s:
        raise ConfigError(f"m={m} records per machine must exceed s=r*t={s}")
    rec.check_embeddable(np.concatenate([mc.store["key"] for mc in cluster.machines]), t)
    tagged_dt = tagged_dtype(cluster.machines[0].store.dtype)

    def round1(ctx):
        data = ctx.store
        order = np.argsort(data["key"], kind="stable")
        data = data[order]
        local = rec.local_run_index(data["key"])
        tagged = np.empty(len(data), dtype=tagged_dtype(data.dtype))
        for name in data.dtype.names:
            tagged[name] = data[name]
        tagged["origin"] = ctx.id
        tagged["local"] = local
        tagged["emb"] = rec.embed(data["key"], ctx.id, local, t)
        ctx.touch(len(data))
        return tagged, {1: sample_equidepth(tagged["emb"], s)}

    cluster.execute_round(round1, "smms-sample")

    result = {}

    def round2(ctx):
        if ctx.id != 1:
            return ctx.store, {}
        sample_set = [ctx.inbox[i] for i in sorted(ctx.inbox)]
        bounds = compute_bucket_boundaries(sample_set, m)
        result["boundaries"] = bounds
        ctx.touch(bounds.events)
        return ctx.store, {dest: bounds.values.copy() for dest in range(1, t + 1)}

    cluster.execute_round(round2, "smms-boundaries")

    def round3(ctx):
        bounds = BucketBoundaries(ctx.inbox[1])
        data = ctx.store
        where = data["key"].astype(np.float64) if group_keys else data["emb"]
        dest = bounds.route(where)
        cuts = np.searchsorted(dest, np.arange(1, t + 2), side="left")
        outbox = {}
        for k in range(1, t + 1):
            lo, hi = cuts[k - 1], cuts[k]
            if hi > lo:
                outbox[k] = data[lo:hi]
        ctx.touch(len(data))
        return None, outbox

    cluster.execute_round(round3, "smms-route")

    def merge(ctx):
        merged = kway_merge([ctx.inbox[i] for i in sorted(ctx.inbox)])
        if merged is None:
            merged = np.zeros(0, dtype=tagged_dt)
        ctx.touch(len(merged))
        return merged

    cluster.collect(merge)
    return result["boundaries"]


def strip_tags(tagged: np.ndarray, record_dt: np.dtype) -> np.ndarray:
    out = np.empty(len(tagged), dtype=record_dt)
    for name in record_dt.names:
        out[name] = tagged[name]
    return out


def smms_round3_bound(n: int, r: int, t: int) -> Fraction:
    """Per-machine Round-3 load factor 1 + 2/r + t^2/n (multiply by m)."""
    return 1 + Fraction(2, r) + Fraction(t * t, n)


def smms_theoretical_k(n: int, r: int, t: int) -> Fraction:
    """k of the (3, k)-minimality guarantee: 1 + 2/r + r*t^3/n (valid for t^3 <= n)."""
    return 1 + Fraction(2, r) + Fraction(r * t ** 3, n)


def smms_sort(cluster: Cluster, data: np.ndarray, r: int = 1):
    """Sort ``data`` on ``cluster``; returns (per-machine sorted parts, report)."""
    t = cluster.t
    n_real = len(data)
    padded = pad_to_multiple(data, t)
    n = len(padded)
    m = n // t
    if m <= r * t:
        raise ConfigError(f"m={m} records per machine must exceed s=r*t={r * t}")
    cluster.scatter(even_split(padded, t))
    bounds = smms_rounds(cluster, r)
    parts = []
    for mc in cluster.machines:
        part = strip_tags(mc.store, data.dtype)
        parts.append(part[part["table"] != rec.TAG_DUMMY])

    round1, round2, round3 = cluster.round_log[:3]
    bound = smms_round3_bound(n, r, t) * m
    s = r * t
    checks = {
        "round3_load": all(x <= bound for x in round3.received),
        # samples reach machine 1 at the barrier closing round 1
        "round2_traffic": round1.received[0] == t * (s + 1) and round2.sent[0] == t * (t + 1),
    }
    report = build_report(
        cluster.round_log, n_real, n_real, t, "smms", alpha=3, checks=checks,
        extra={
            "r": r, "m": m, "padded_n": n,
            "round3_max_received": max(round3.received),
            "round3_load_bound": float(bound),
            "theoretical_k": float(smms_theoretical_k(n, r, t)),
            "boundary_events": bounds.events,
        },
        notes=_smms_notes(n, t),
    )
    report.boundaries = bounds
    return parts, report


def _smms_notes(n, t):
    notes = ["self-sends counted in N_i"]
    if t ** 3 > n:
        notes.append("t^3 > n: (3,k) network/cpu guarantee assumes t^3 <= n")
    return notes
