"""Acceptance criteria, each run at its stated scale and tolerance.

Every test logs a pass/fail line through ``record_criterion``; the terminal
summary prints one line per criterion.
"""
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from sortjoin import records as rec
from sortjoin.oracle import oracle_join, same_multiset, seq_sort
from sortjoin.randjoin import choose_matrix_dims, randjoin
from sortjoin.runtime import create_cluster
from sortjoin.smms import (compute_bucket_boundaries, sample_equidepth, smms_round3_bound,
                           smms_sort)
from sortjoin.statjoin import statjoin
from sortjoin.terasort import algorithm_s_mask, sample_quota, terasort

SEEDS = [1, 2, 3, 4, 5]


@lru_cache(maxsize=None)
def uniform(n, seed, payload_len=rec.DEFAULT_PAYLOAD_LEN):
    return rec.gen_uniform(n, (1, 12 * 10 ** 6), seed=seed, payload_len=payload_len)


@lru_cache(maxsize=2)
def oracle_bytes(n, seed):
    return rec.encode_binary(seq_sort(uniform(n, seed)), rec.TAG_NONE)


@lru_cache(maxsize=None)
def smms_uniform_run(r):
    _, report = smms_sort(create_cluster(16, seed=0), uniform(10 ** 6, 1, 0), r=r)
    return report


@lru_cache(maxsize=None)
def terasort_uniform_run():
    _, report = terasort(create_cluster(16, seed=1), uniform(10 ** 6, 1, 0))
    return report


# -- 1 -----------------------------------------------------------------------

@pytest.mark.parametrize("n", [10 ** 4, 10 ** 6])
def test_c01_sort_correctness(n, record_criterion):
    failures = []
    runs = 0
    for seed in SEEDS:
        data = uniform(n, seed)
        expected = oracle_bytes(n, seed)
        for t in (4, 16):
            for algo in ("smms", "terasort"):
                cluster = create_cluster(t, seed=seed)
                if algo == "smms":
                    parts, _ = smms_sort(cluster, data, r=2)
                else:
                    parts, _ = terasort(cluster, data)
                got = rec.encode_binary(np.concatenate(parts), rec.TAG_NONE)
                runs += 1
                if got != expected:
                    failures.append((algo, t, seed))
    ok = record_criterion(1, not failures, f"n={n}: {runs - len(failures)}/{runs} runs byte-exact")
    assert ok, failures


# -- 2 -----------------------------------------------------------------------

@pytest.mark.parametrize("r", [1, 2, 6])
def test_c02_round3_load_bound(r, record_criterion):
    n, t = 10 ** 6, 16
    worst = []
    datasets = [uniform(n, s, 0) for s in (1, 2, 3)]
    # a heavily duplicated dataset exercises the composite-key path
    datasets.append(rec.gen_zipf(n, (1000, 1999), 0.0, seed=9, payload_len=0))
    for i, data in enumerate(datasets):
        _, report = smms_sort(create_cluster(t, seed=i), data, r=r)
        m = n // t
        bound = smms_round3_bound(n, r, t) * m
        got = report.extra["round3_max_received"]
        worst.append(Fraction(got) / bound)
        assert report.passed("round3_load") == (got <= bound)
    ok = all(w <= 1 for w in worst)
    record_criterion(2, ok, f"r={r}: max received / bound = {float(max(worst)):.4f} over {len(worst)} runs")
    assert ok


def test_c02_symbolic_two_m(record_criterion):
    b = smms_round3_bound(25 * 10 ** 6, 2, 50)
    ok = b == Fraction(20001, 10000) and abs(float(b) - 2) < 1e-3
    record_criterion(2, ok, f"r=2,t=50,n=25e6 bound = {b} m (about 2m)")
    assert ok


# -- 3 -----------------------------------------------------------------------

def test_c03_smms_near_optimal(record_criterion):
    imb = smms_uniform_run(2).imbalance
    ok = imb <= 1.10
    record_criterion(3, ok, f"SMMS uniform n=1e6 t=16 r=2 imbalance={imb:.4f} (<= 1.10)")
    assert ok


# -- 4 -----------------------------------------------------------------------

def _exact_masses(sample_set, m, bounds):
    b = [Fraction(x) for x in bounds]
    out = [Fraction(0)] * (len(b) - 1)
    for lam in sample_set:
        lam = [Fraction(x) for x in lam]
        s = len(lam) - 1
        for j in range(s):
            mu = Fraction(m, s) / (lam[j + 1] - lam[j])
            for k in range(len(b) - 1):
                lo, hi = max(lam[j], b[k]), min(lam[j + 1], b[k + 1])
                if hi > lo:
                    out[k] += (hi - lo) * mu
    return out


def test_c04_density_and_hand_traces(record_criterion):
    worst = 0.0
    rng = np.random.default_rng(4)
    for trial in range(40):
        t = int(rng.integers(1, 9))
        r = int(rng.integers(1, 4))
        s = r * t
        m = s + 1 + int(rng.integers(0, 200))
        sample_set = [sample_equidepth(np.sort(rng.choice(10 ** 7, m, replace=False)).astype(float), s)
                      for _ in range(t)]
        b = compute_bucket_boundaries(sample_set, m).values
        masses = _exact_masses(sample_set, m, b.tolist())
        worst = max([worst] + [abs(float(x) - m) / m for x in masses[:-1]])
    b1 = compute_bucket_boundaries([[0, 10, 20], [0, 10, 20]], 6).values
    b2 = compute_bucket_boundaries([[0, 4, 20], [0, 10, 20]], 6).values
    exp2 = [0.0, 4 + 1.8 / 0.4875, 20.0]
    rel = max(abs(a - e) / max(abs(e), 1e-300) if e else abs(a) for a, e in
              zip(list(b1) + list(b2), [0.0, 10.0, 20.0] + exp2))
    ok = worst <= 1e-6 and rel <= 1e-9
    record_criterion(4, ok, f"max bucket mass error {worst:.2e} m; hand traces rel err {rel:.1e}")
    assert ok


# -- 5 -----------------------------------------------------------------------

def test_c05_exact_sample_count(record_criterion):
    bad = runs = 0
    for seed in range(30):
        n = [10 ** 3, 10 ** 4, 5 * 10 ** 4][seed % 3]
        t = [2, 4, 16][seed % 3]
        cluster = create_cluster(t, seed=seed)
        _, report = terasort(cluster, uniform(n, seed, 0))
        c = sample_quota(n, t)
        runs += 1
        if cluster.round_log[0].sent != [c] * t or not report.passed("exact_sample_count"):
            bad += 1
    ok = bad == 0
    record_criterion(5, ok, f"exact ceil(ln(nt)) samples per machine in {runs - bad}/{runs} runs")
    assert ok


def test_c05_monte_carlo_unbiased(record_criterion):
    m, c, trials, chunk = 10 ** 4, 9, 10 ** 5, 2000
    rng = np.random.default_rng(5)
    hits = np.zeros(m, dtype=np.int64)
    for _ in range(trials // chunk):
        mask = algorithm_s_mask(rng.random((chunk, m)), c)
        assert np.all(mask.sum(axis=1) == c)
        hits += mask.sum(axis=0)
    p = c / m
    sigma = math.sqrt(p * (1 - p) / trials)
    z = np.abs(hits / trials - p) / sigma
    ok = bool(np.all(z <= 4))
    record_criterion(5, ok, f"10^5 trials m=1e4 c=9: max |z| = {z.max():.2f} over {m} records (<= 4)")
    assert ok


# -- 6 -----------------------------------------------------------------------

def test_c06_terasort_load_tail(record_criterion):
    n, t = 10 ** 5, 16
    bound = 5 * Fraction(n, t) + 1
    within = 0
    worst = 0
    for seed in range(200):
        _, report = terasort(create_cluster(t, seed=seed), uniform(n, 1000 + seed, 0))
        got = report.extra["round3_max_received"]
        worst = max(worst, got)
        within += got <= bound
    ok = within >= 198
    record_criterion(6, ok, f"{within}/200 runs within 5m+1={float(bound):.0f} (worst {worst})")
    assert ok


# -- 7 -----------------------------------------------------------------------

def test_c07_smms_beats_terasort(record_criterion):
    smms_imb = smms_uniform_run(2).imbalance
    tera_imb = terasort_uniform_run().imbalance
    ok = smms_imb < tera_imb
    record_criterion(7, ok, f"uniform n=1e6 t=16: SMMS {smms_imb:.4f} < Terasort {tera_imb:.4f}")
    assert ok


# -- 8 / 9 -------------------------------------------------------------------

def join_datasets():
    n = 10 ** 4
    out = {"scalar": (rec.gen_scalar_skew(n, 1000, 11, payload_len=8, table=rec.TAG_S),
                      rec.gen_scalar_skew(n, 200, 12, payload_len=8, table=rec.TAG_T))}
    for theta in (0.0, 0.7, 1.0):
        out[f"zipf{theta}"] = (rec.gen_zipf(n, (1000, 1999), theta, 21, payload_len=8, table=rec.TAG_S),
                               rec.gen_zipf(n, (1000, 1999), theta, 22, payload_len=8, table=rec.TAG_T))
    return out


@pytest.mark.parametrize("name", ["scalar", "zipf0.0", "zipf0.7", "zipf1.0"])
def test_c08_join_correctness(name, record_criterion):
    S, T = join_datasets()[name]
    expected, summary = oracle_join(S, T)
    results = []
    for seed in (1, 2, 3):
        outputs, counts, _ = randjoin(create_cluster(15, seed=seed), S, T)
        results.append(same_multiset(np.concatenate(outputs), expected) and sum(counts) == summary.W)
    outputs, counts, _, _ = statjoin(create_cluster(15), S, T)
    results.append(same_multiset(np.concatenate(outputs), expected) and sum(counts) == summary.W)
    ok = all(results)
    record_criterion(8, ok, f"{name}: W={summary.W} randjoin x3 + statjoin exact={results}")
    assert ok


def test_c09_statjoin_output_bound(record_criterion):
    checked = skipped = 0
    violations = []
    for name, (S, T) in join_datasets().items():
        W = oracle_join(S, T, materialize=False)[1].W
        for t in (4, 15, 16):
            _, counts, report, plan = statjoin(create_cluster(t), S, T, materialize=False)
            if not plan.splittable:
                skipped += 1
                continue
            checked += 1
            if not all(p * t <= 2 * W for p in counts) or not report.passed("output_bound"):
                violations.append((name, t))
    ok = not violations and checked > 0
    record_criterion(9, ok, f"{checked} runs with max(M,N) >= t for every big result, "
                            f"{len(violations)} over 2W/t ({skipped} outside hypothesis)")
    assert ok


# -- 10 ----------------------------------------------------------------------

def test_c10_randjoin_output_balance(record_criterion):
    M = N = 3000
    S = rec.make_records(np.full(M, 7), rec.TAG_S, 0)
    T = rec.make_records(np.full(N, 7), rec.TAG_T, 0)
    bad = 0
    worst = 0
    for seed in range(100):
        _, counts, report = randjoin(create_cluster(4, seed=seed), S, T, materialize=False)
        assert (report.extra["a"], report.extra["b"]) == (2, 2)
        worst = max(worst, max(counts))
        bad += max(counts) * 4 >= 2 * M * N
    ok = bad == 0
    record_criterion(10, ok, f"100 runs, {bad} with max output >= 2MN/t={2 * M * N // 4} (worst {worst})")
    assert ok


# -- 11 ----------------------------------------------------------------------

def test_c11_replication(record_criterion):
    S, T = join_datasets()["scalar"]
    exact = True
    for t in (3, 4, 7, 15):
        cluster = create_cluster(t, seed=t)
        _, _, report = randjoin(cluster, S, T, materialize=False)
        a, b = report.extra["a"], report.extra["b"]
        exact &= sum(cluster.round_log[0].sent) == b * len(S) + a * len(T)
    record_criterion(11, exact, "map-side sent == b|S| + a|T| for t in {3,4,7,15}")
    assert exact


REFERENCE_DIMS = {3: (1, 3), 7: (1, 7), 15: (3, 5), 30: (5, 6), 60: (6, 10), 120: (12, 10), 180: (12, 15)}


@pytest.mark.parametrize("t", sorted(REFERENCE_DIMS))
def test_c11_matrix_table(t, record_criterion):
    size = 1_500_000
    got = choose_matrix_dims(t, size, size)
    ok = got == REFERENCE_DIMS[t]
    record_criterion(11, ok, f"t={t}: chose {got}, table {REFERENCE_DIMS[t]}")
    assert ok


# -- 12 ----------------------------------------------------------------------

def test_c12_not_desk_reproducible(record_criterion):
    record_criterion(12, None, "cluster wall-clock results are not reproduced; "
                               "covered by simulated W_i/N_i accounting in 1-11")
    pytest.skip("not desk-reproducible")
