"""Terasort with exact-count selection sampling (Algorithm S).

Round 1: every machine selects exactly ceil(ln(n t)) of its records and sends
them to machine 1. Round 2: machine 1 sorts the t*ceil(ln(n t)) samples, picks
t-1 boundary objects and broadcasts them. Round 3: records in (b_{j-1}, b_j]
go to machine j, which sorts what it receives.
"""
from __future__ import annotations

import math
import warnings
from fractions import Fraction

import numba
import numpy as np

from . import records as rec
from .errors import ConfigError
from .metrics import build_report
from .runtime import Cluster
from .smms import even_split, strip_tags, tagged_dtype


def sample_quota(n: int, t: int) -> int:
    """ceil(ln(n * t))."""
    return math.ceil(math.log(n * t))


@numba.njit(cache=True)
def _selection_kernel(u, c):
    trials, m = u.shape
    mask = np.zeros((trials, m), dtype=np.bool_)
    for tr in range(trials):
        need = c
        for k in range(m):
            if need == 0:
                break
            remaining = m - k
            # forced pick when the quota equals what is left; never rounding-dependent
            if need >= remaining or u[tr, k] * remaining < need:
                mask[tr, k] = True
                need -= 1
    return mask


def algorithm_s_mask(uniforms: np.ndarray, c: int) -> np.ndarray:
    """Selection mask from pre-drawn uniforms; rows are independent trials.

    Item k (0-based) of m is taken with probability (c - j) / (m - k), j the
    number already taken.
    """
    u = np.asarray(uniforms, dtype=np.float64)
    single = u.ndim == 1
    u2 = u.reshape(1, -1) if single else u
    if c > u2.shape[1]:
        raise ConfigError(f"cannot select c={c} of m={u2.shape[1]} records")
    if c < 0:
        raise ConfigError(f"sample count must be >= 0, got {c}")
    mask = _selection_kernel(np.ascontiguousarray(u2), int(c))
    return mask[0] if single else mask


def algorithm_s_sample(m: int, c: int, rng: np.random.Generator) -> np.ndarray:
    """Indices (ascending) of exactly c of m items, each with inclusion probability c/m."""
    if c > m:
        raise ConfigError(f"cannot select c={c} of m={m} records")
    return np.flatnonzero(algorithm_s_mask(rng.random(m), c))


def pick_boundary_objects(sorted_samples: np.ndarray, t: int) -> np.ndarray:
    """b_i = ceil(i*s/t)-th smallest sample for i = 1..t-1."""
    s = len(sorted_samples)
    if s < t:
        raise ConfigError(f"need at least t={t} samples, got {s}")
    i = np.arange(1, t, dtype=np.int64)
    pos = (i * s + t - 1) // t
    return np.asarray(sorted_samples)[pos - 1]


def route_right_closed(boundaries: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Machine j gets (b_{j-1}, b_j], with b_0 = -inf and b_t = +inf."""
    return np.searchsorted(boundaries, x, side="left") + 1


def terasort(cluster: Cluster, data: np.ndarray, debug_samples: list | None = None):
    """Sort ``data``; returns (per-machine sorted parts, report).

    ``debug_samples``, when a list, receives (machine, sample value) pairs.
    """
    t = cluster.t
    n = len(data)
    notes = ["self-sends counted in N_i"]
    if n < 4 * t:
        warnings.warn(f"n={n} < 4t={4 * t}: the 5m+1 load bound does not apply", stacklevel=2)
        notes.append("n < 4t: max-bucket bound void")
    c = sample_quota(n, t)
    if math.log(n * t) >= t:
        notes.append("ln(nt) >= t: network bound hypothesis unmet")
    parts = even_split(data, t)
    if min(len(p) for p in parts) < c:
        raise ConfigError(f"every machine needs at least c=ceil(ln(nt))={c} records")
    rec.check_embeddable(data["key"], t)
    tagged_dt = tagged_dtype(data.dtype)
    cluster.scatter(parts)

    def round1(ctx):
        part = ctx.store
        local = rec.local_run_index(part["key"])
        tagged = np.empty(len(part), dtype=tagged_dt)
        for name in part.dtype.names:
            tagged[name] = part[name]
        tagged["origin"] = ctx.id
        tagged["local"] = local
        tagged["emb"] = rec.embed(part["key"], ctx.id, local, t)
        picked = algorithm_s_sample(len(part), c, ctx.rng)
        ctx.touch(len(part))
        return tagged, {1: tagged["emb"][picked]}

    r1 = cluster.execute_round(round1, "terasort-sample")
    if debug_samples is not None:
        inbox = cluster.machine(1).inbox
        debug_samples.extend((src, float(v)) for src in sorted(inbox) for v in inbox[src])

    def round2(ctx):
        if ctx.id != 1:
            return ctx.store, {}
        samples = np.sort(np.concatenate([ctx.inbox[i] for i in sorted(ctx.inbox)]))
        ctx.touch(len(samples))
        b = pick_boundary_objects(samples, t)
        return ctx.store, {dest: b.copy() for dest in range(1, t + 1)}

    cluster.execute_round(round2, "terasort-boundaries")

    def round3(ctx):
        data_i = ctx.store
        b = ctx.inbox[1]
        dest = route_right_closed(b, data_i["emb"])
        outbox = {}
        order = np.argsort(dest, kind="stable")
        grouped = data_i[order]
        cuts = np.searchsorted(dest[order], np.arange(1, t + 2), side="left")
        for j in range(1, t + 1):
            if cuts[j] > cuts[j - 1]:
                outbox[j] = grouped[cuts[j - 1]:cuts[j]]
        ctx.touch(len(data_i))
        return None, outbox

    r3 = cluster.execute_round(round3, "terasort-route")

    def local_sort(ctx):
        streams = [ctx.inbox[i] for i in sorted(ctx.inbox)]
        got = np.concatenate(streams) if streams else np.zeros(0, dtype=tagged_dt)
        order = np.lexsort((got["local"], got["origin"], got["key"]))
        ctx.touch(len(got))
        return got[order]

    cluster.collect(local_sort)
    out = [strip_tags(mc.store, data.dtype) for mc in cluster.machines]

    m = Fraction(n, t)
    bound = 5 * m + 1
    checks = {
        "max_bucket": all(x <= bound for x in r3.received),
        "exact_sample_count": all(x == c for x in r1.sent),
    }
    report = build_report(
        cluster.round_log, n, n, t, "terasort", alpha=3, checks=checks,
        extra={
            "samples_per_machine": c,
            "round3_max_received": max(r3.received),
            "max_bucket_bound": float(bound),
            "theoretical_k": float(5 + Fraction(t ** 3, n)),
        },
        notes=notes,
    )
    return out, report
