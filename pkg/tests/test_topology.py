import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmslearn.topology import (
    Graph,
    MarkovSchedule,
    default_subset_size,
    expected_edges,
    laplacian,
    make_dms_schedule,
    make_static_schedule,
    make_subset_graph,
    make_topology,
    mixing_matrix,
    stationary_distribution,
    union_connectivity,
)

from oracles import mixing_by_loops


def test_ring_shape():
    g = make_topology("ring", 5)
    assert g.agent_count == 5
    assert len(g.sorted_edges) == 5
    assert all(d == 2 for d in g.degrees)


def test_ring_rejects_tiny():
    with pytest.raises(ValueError):
        make_topology("ring", 2)


def test_complete_shape():
    g = make_topology("complete", 6)
    assert len(g.sorted_edges) == 15
    assert all(d == 5 for d in g.degrees)


def test_star_hub_is_extra_node():
    g = make_topology("star", 4)
    # 4 leaves plus the hub
    assert g.agent_count == 5
    assert sorted(g.degrees) == [1, 1, 1, 1, 4]


def test_edges_canonicalized():
    g = Graph(4, frozenset({(2, 0), (3, 1)}))
    assert g.sorted_edges == ((0, 2), (1, 3))


def test_self_loop_rejected():
    with pytest.raises(ValueError):
        Graph(3, frozenset({(1, 1)}))


def test_isolated_and_active():
    g = make_subset_graph(6, (1, 2, 4))
    assert g.active() == (1, 2, 4)
    assert g.isolated() == (0, 3, 5)
    assert len(g.sorted_edges) == 3


def test_laplacian_row_sums_zero():
    g = make_topology("ring", 7)
    lap = laplacian(g)
    assert np.allclose(lap.sum(axis=1), 0)
    assert np.allclose(np.diag(lap), g.degrees)


def test_mixing_matches_loop_oracle():
    g = make_subset_graph(8, (0, 2, 3, 7))
    expected = mixing_by_loops(8, g.sorted_edges)
    assert np.allclose(mixing_matrix(g), expected)


def test_mixing_isolated_rows_are_identity():
    g = make_subset_graph(5, (1, 3, 4))
    a = mixing_matrix(g)
    for i in (0, 2):
        row = np.zeros(5)
        row[i] = 1.0
        assert np.array_equal(a[i], row)


@given(st.integers(3, 12), st.data())
@settings(max_examples=40, deadline=None)
def test_mixing_row_stochastic_on_random_subsets(n, data):
    size = data.draw(st.integers(2, n))
    members = tuple(sorted(data.draw(
        st.sets(st.integers(0, n - 1), min_size=size, max_size=size))))
    a = mixing_matrix(make_subset_graph(n, members))
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert (a >= 0).all()


def test_default_subset_size():
    assert default_subset_size(30) == 21
    assert default_subset_size(4) == 3
    assert default_subset_size(3) == 3
    assert default_subset_size(40) == 28


def test_static_schedule_repeats_graph():
    g = make_topology("ring", 4)
    sched = make_static_schedule(g)
    for _ in range(5):
        assert sched.advance() is g


def test_dms_schedule_substructures():
    sched = make_dms_schedule(30, rng=np.random.default_rng(3))
    assert len(sched.substructures) == 8
    for g in sched.substructures:
        assert len(g.active()) == 21
        # complete on the active subset
        assert len(g.sorted_edges) == 21 * 20 // 2
        assert g.agent_count == 30


def test_dms_schedule_draws_from_pool():
    sched = make_dms_schedule(
        10, subset_size=4, substructure_count=3, rng=np.random.default_rng(5))
    pool = {id(g) for g in sched.substructures}
    seen = {id(sched.advance()) for _ in range(50)}
    assert seen <= pool


def test_dms_schedule_seeded_sequences_match():
    a = make_dms_schedule(12, subset_size=5, rng=np.random.default_rng(9))
    b = make_dms_schedule(12, subset_size=5, rng=np.random.default_rng(9))
    for _ in range(20):
        assert a.advance().sorted_edges == b.advance().sorted_edges


def test_markov_schedule_rejects_bad_transition():
    g = make_topology("ring", 3)
    with pytest.raises(ValueError):
        MarkovSchedule([g, g], np.array([[0.5, 0.6], [0.5, 0.5]]),
                       np.random.default_rng(0))


def test_markov_schedule_rejects_empty():
    with pytest.raises(ValueError):
        MarkovSchedule([], np.ones((0, 0)), np.random.default_rng(0))


def test_subset_needs_three():
    with pytest.raises(ValueError):
        make_dms_schedule(10, subset_size=2, rng=np.random.default_rng(0))


def test_stationary_uniform_for_uniform_transition():
    assert np.allclose(stationary_distribution(np.full((3, 3), 1 / 3)),
                       [1 / 3, 1 / 3, 1 / 3])


def test_stationary_biased_chain():
    t = np.array([[0.9, 0.1], [0.3, 0.7]])
    pi = stationary_distribution(t)
    assert np.allclose(pi @ t, pi, atol=1e-12)
    assert pi[0] > pi[1]


def test_expected_edges_weights_substructures():
    g1 = make_subset_graph(6, (0, 1, 2))       # 3 edges
    g2 = make_subset_graph(6, (0, 1, 2, 3))    # 6 edges
    sched = MarkovSchedule([g1, g2], np.full((2, 2), 0.5), np.random.default_rng(0))
    assert expected_edges(sched) == pytest.approx(4.5)


def test_union_connectivity():
    g1 = make_subset_graph(6, (0, 1, 2))
    g2 = make_subset_graph(6, (2, 3, 4))
    g3 = make_subset_graph(6, (4, 5, 0))
    assert union_connectivity((g1, g2, g3))
    assert not union_connectivity((g1, g2))  # node 5 never appears


@given(st.integers(4, 20))
@settings(max_examples=30, deadline=None)
def test_subset_size_bounds(n):
    m = default_subset_size(n)
    assert 3 <= m <= n
