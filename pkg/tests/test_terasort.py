import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sortjoin import records as rec
from sortjoin.errors import ConfigError
from sortjoin.oracle import seq_sort
from sortjoin.runtime import create_cluster
from sortjoin.terasort import (algorithm_s_mask, algorithm_s_sample, pick_boundary_objects,
                               route_right_closed, sample_quota, terasort)


def test_quota():
    assert sample_quota(20, 2) == 4          # ceil(ln 40) = ceil(3.69)
    assert sample_quota(10 ** 5, 16) == math.ceil(math.log(1.6e6)) == 15


def test_quota_filled_forces_skip():
    # the first four draws are below any threshold, so items 1..4 are taken
    mask = algorithm_s_mask(np.zeros(10), 4)
    assert np.flatnonzero(mask).tolist() == [0, 1, 2, 3]


def test_forced_selection_at_the_end():
    # draws that never fall below (c-j)/(m-k+1) until it reaches 1 at item 7
    u = np.full(10, 0.999999)
    mask = algorithm_s_mask(u, 4)
    assert np.flatnonzero(mask).tolist() == [6, 7, 8, 9]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 200), st.data())
def test_exact_count_any_draws(m, data):
    c = data.draw(st.integers(0, m))
    u = np.asarray(data.draw(st.lists(st.floats(0, 1, exclude_max=True), min_size=m, max_size=m)))
    assert algorithm_s_mask(u, c).sum() == c


def test_sample_too_large():
    with pytest.raises(ConfigError):
        algorithm_s_sample(3, 4, np.random.default_rng(0))


def test_batched_mask_matches_rowwise():
    u = np.random.default_rng(1).random((20, 50))
    batched = algorithm_s_mask(u, 7)
    for row, m in zip(u, batched):
        assert np.array_equal(algorithm_s_mask(row, 7), m)


def test_inclusion_probability_small_exact():
    # m=5, c=2: each item kept with probability 2/5; check the sequential rule by enumeration
    rng = np.random.default_rng(3)
    trials = 200_000
    freq = algorithm_s_mask(rng.random((trials, 5)), 2).mean(axis=0)
    sd = math.sqrt(0.4 * 0.6 / trials)
    assert np.all(np.abs(freq - 0.4) < 4 * sd)


def test_boundary_objects_positions():
    samples = np.arange(10, 18)              # s=8
    assert pick_boundary_objects(samples, 4).tolist() == [11, 13, 15]


def test_boundary_objects_single_machine():
    assert pick_boundary_objects(np.array([1, 2, 3]), 1).tolist() == []


def test_boundary_objects_s_equals_t():
    assert pick_boundary_objects(np.array([5, 6, 7, 8]), 4).tolist() == [5, 6, 7]


def test_boundary_objects_too_few_samples():
    with pytest.raises(ConfigError):
        pick_boundary_objects(np.array([1, 2]), 3)


def test_routing_is_right_closed():
    b = np.array([10.0, 20.0])
    x = np.array([-1.0, 10.0, 10.5, 20.0, 20.5])
    assert route_right_closed(b, x).tolist() == [1, 1, 2, 2, 3]


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32), st.lists(st.integers(-30, 30), min_size=60, max_size=400))
def test_sort_matches_oracle(t, seed, keys):
    data = rec.make_records(keys, payload_len=8)
    if len(keys) // t < sample_quota(len(keys), t):
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parts, report = terasort(create_cluster(t, seed=seed), data)
    assert rec.encode_binary(np.concatenate(parts), 0) == rec.encode_binary(seq_sort(data), 0)
    assert report.passed("exact_sample_count")


def test_same_seed_same_run():
    data = rec.gen_uniform(30000, (0, 10 ** 6), seed=2, payload_len=4)
    a = terasort(create_cluster(8, seed=5), data)[1]
    b = terasort(create_cluster(8, seed=5), data)[1]
    c = terasort(create_cluster(8, seed=6), data)[1]
    assert a.workload == b.workload
    assert a.workload != c.workload


def test_small_n_warns_and_notes():
    # n=3 < 4t=4 while m=3 still covers c=ceil(ln 3)=2
    data = rec.make_records([2, 0, 1], payload_len=0)
    with pytest.warns(UserWarning):
        parts, report = terasort(create_cluster(1, seed=0), data)
    assert any("max-bucket bound void" in n for n in report.notes)
    assert np.concatenate(parts)["key"].tolist() == [0, 1, 2]


def test_debug_samples_recorded():
    data = rec.gen_uniform(4000, (0, 100), seed=1, payload_len=0)
    samples = []
    terasort(create_cluster(4, seed=1), data, debug_samples=samples)
    c = sample_quota(4000, 4)
    assert len(samples) == 4 * c
    assert sorted({m for m, _ in samples}) == [1, 2, 3, 4]


def test_inclusion_frequencies_unbiased_jointly():
    # one joint test over all positions instead of m separate 4-sigma checks
    from scipy import stats
    m, c, trials = 2000, 9, 100_000
    rng = np.random.default_rng(77)
    hits = np.zeros(m, dtype=np.int64)
    for _ in range(trials // 5000):
        hits += algorithm_s_mask(rng.random((5000, m)), c).sum(axis=0)
    assert hits.sum() == c * trials
    assert stats.chisquare(hits).pvalue > 0.001
    # no drift along the scan order
    first, last = hits[: m // 2].sum(), hits[m // 2:].sum()
    sd = math.sqrt(c * trials / 2)
    assert abs(first - last) / 2 < 4 * sd
