from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdfuse.dcc import dcc, is_compact
from crowdfuse.errors import EmptyInput
from crowdfuse.fusion import cluster_counts, count_threshold, fuse_counts
from oracles import count_block_ok, min_compact_partitions, planted_count_instance


def absdist(a, b):
    return abs(a - b)


def mean(xs):
    return sum(xs) / len(xs)


def tagged(values):
    return [(v, f"w{i}") for i, v in enumerate(values)]


def test_counts_example_trace():
    dominant, clusters = cluster_counts(tagged([10, 10, 11, 30]), 0.1)
    assert dominant.indices == [0, 1, 2]
    assert dominant.head == pytest.approx(10.3333333)
    assert [c.indices for c in clusters] == [[0, 1, 2], [3]]


def test_zero_counts_merge_inclusively():
    value, cluster = fuse_counts(tagged([0, 0, 0, 5]), 0.1)
    assert value == 0
    assert cluster.indices == [0, 1, 2]


def test_single_element():
    dominant, clusters = dcc([(7.0, "a")], absdist, mean, 1.0)
    assert dominant.head == 7.0 and len(clusters) == 1


def test_far_pair_stays_apart_and_first_wins():
    dominant, clusters = dcc(tagged([0.0, 10.0]), absdist, mean, 2.0)
    assert len(clusters) == 2
    assert dominant.indices == [0]


def test_empty_input():
    with pytest.raises(EmptyInput):
        dcc([], absdist, mean, 1.0)


def test_same_worker_never_shares_a_cluster():
    dominant, clusters = dcc([(1.0, "a"), (1.0, "a"), (1.0, "b")], absdist, mean, 5.0)
    for c in clusters:
        assert len(set(c.workers)) == len(c.workers)
    assert dominant.indices == [0, 2]


def test_strict_threshold_blocks_boundary_merge():
    # heads exactly tau apart
    _, strict = dcc(tagged([0.0, 1.0]), absdist, mean, 1.0)
    _, loose = dcc(tagged([0.0, 1.0]), absdist, mean, 1.0, strict=False)
    assert len(strict) == 2 and len(loose) == 1


def test_heads_beyond_tau_never_merge_even_if_head_compact():
    # merged head 1.0 would be within 1.5 of both, but the heads are 2 apart
    _, clusters = dcc(tagged([0.0, 2.0]), absdist, mean, 1.5)
    assert len(clusters) == 2


def test_dominant_tie_broken_by_spread():
    # two clusters of size 2; the second is tighter
    dominant, _ = dcc(tagged([0.0, 1.0, 100.0, 100.2]), absdist, mean, 2.0)
    assert dominant.indices == [2, 3]


@pytest.mark.parametrize("seed", range(40))
def test_planted_partition_matches_bruteforce(seed):
    values, planted = planted_count_instance(np.random.default_rng(seed))
    n_blocks, partitions = min_compact_partitions(values, 0.1)
    assert partitions == [planted]
    _, clusters = cluster_counts(tagged(values), 0.1)
    assert frozenset(frozenset(c.indices) for c in clusters) == planted


def test_oracle_on_hand_instance():
    # frozen from min_compact_partitions
    n_blocks, partitions = min_compact_partitions([10.0, 10.0, 11.0, 30.0], 0.1)
    assert n_blocks == 2
    assert partitions == [frozenset({frozenset({0, 1, 2}), frozenset({3})})]
    assert count_block_ok([10.0, 10.0, 11.0], 0.1)
    assert not count_block_ok([10.0, 30.0], 0.1)


values = st.lists(st.integers(0, 60).map(float), min_size=1, max_size=10)
workers = st.sampled_from(["a", "b", "c", "d", "e"])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60).map(float), workers), min_size=1, max_size=10))
def test_clusters_partition_and_stay_compact(pairs):
    tau = count_threshold(0.1)
    dominant, clusters = dcc(pairs, absdist, mean, tau, strict=False)
    seen = sorted(i for c in clusters for i in c.indices)
    assert seen == list(range(len(pairs)))
    for c in clusters:
        assert len(set(c.workers)) == c.size
        items = [e for e, _ in c.members]
        assert c.head == pytest.approx(mean(items))
        assert is_compact(c.head, items, absdist, tau, strict=False)
    assert all(dominant.size >= c.size for c in clusters)


@settings(max_examples=100, deadline=None)
@given(values)
def test_dcc_deterministic(vals):
    a = cluster_counts(tagged(vals), 0.1)
    b = cluster_counts(tagged(vals), 0.1)
    assert [c.indices for c in a[1]] == [c.indices for c in b[1]]
    assert a[0].indices == b[0].indices


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=8), st.floats(0.5, 20))
def test_strict_compactness_post_hoc(vals, tau):
    _, clusters = dcc(tagged(vals), absdist, mean, tau)
    for c in clusters:
        if c.size > 1:
            assert all(abs(c.head - e) < tau for e, _ in c.members)


def test_threshold_is_floor_of_fraction():
    tau = count_threshold(0.1)
    assert tau(9.99) == 0
    assert tau(10.0) == 1
    assert tau(45.0) == 4
    assert math.isclose(tau(1.25), 0)
