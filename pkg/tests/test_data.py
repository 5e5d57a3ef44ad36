import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sloma.data import (KERNEL, UNIFORM, DataError, EnsembleModel, FactorModel, LocalModel, Origin,
                        RatingMatrix, SocialGraph, arc_distances, epanechnikov, predict_local)

from conftest import make_ratings


def local(users, items, U, V, entries=(), origin=None):
    fm = FactorModel(np.array(U, float), np.array(V, float))
    return LocalModel(users, items, list(entries), origin or Origin("community", community=0), fm)


@st.composite
def rating_sets(draw):
    m = draw(st.integers(1, 8))
    n = draw(st.integers(1, 8))
    cells = draw(st.sets(st.tuples(st.integers(0, m - 1), st.integers(0, n - 1)), min_size=1))
    vals = draw(st.lists(st.floats(1, 5), min_size=len(cells), max_size=len(cells)))
    return m, n, [(u, i, v) for (u, i), v in zip(sorted(cells), vals)]


@given(rating_sets())
def test_indexes_round_trip(data):
    m, n, triples = data
    r = make_ratings(triples, m, n)
    by_user = sorted((u, int(r.items[e]), float(r.values[e]))
                     for u in range(m) for e in r.user_entries(u))
    by_item = sorted((int(r.users[e]), i, float(r.values[e]))
                     for i in range(n) for e in r.item_entries(i))
    flat = sorted((u, i, v) for u, i, v in r.entries())
    assert by_user == by_item == flat == sorted((u, i, float(v)) for u, i, v in triples)


def test_rejects_duplicate_pair():
    with pytest.raises(DataError):
        make_ratings([(0, 0, 3), (0, 0, 4)])


@pytest.mark.parametrize("bad", [(0, 0, 0.5), (0, 0, 5.5), (0, 0, float("nan"))])
def test_rejects_bad_rating(bad):
    with pytest.raises(DataError):
        make_ratings([bad])


def test_rejects_out_of_range_index():
    with pytest.raises(DataError):
        make_ratings([(2, 0, 3)], num_users=2, num_items=1)


def test_ratings_are_read_only():
    r = make_ratings([(0, 0, 3)])
    with pytest.raises(ValueError):
        r.values[0] = 4


@given(st.integers(2, 12), st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11))))
def test_graph_symmetric_without_loops(m, pairs):
    pairs = [(a, b) for a, b in pairs if a < m and b < m and a != b]
    g = SocialGraph(m, pairs)
    for i in range(m):
        assert list(g.neighbors(i)) == sorted(set(g.neighbors(i)))
        assert i not in g.neighbors(i)
        for j in g.neighbors(i):
            assert i in g.neighbors(j)
    assert g.num_edges == len({tuple(sorted(p)) for p in pairs})


def test_graph_dedups_reversed_edges():
    assert SocialGraph(2, [(0, 1), (1, 0)]).num_edges == 1


def test_graph_rejects_self_loop():
    with pytest.raises(DataError):
        SocialGraph(2, [(1, 1)])


def test_induced_relabels():
    g = SocialGraph(5, [(0, 2), (2, 4), (1, 3)])
    sub = g.induced(np.array([0, 2, 4]))
    assert sub.num_users == 3
    assert sorted(map(tuple, sub.edges.tolist())) == [(0, 1), (1, 2)]


def test_factor_model_predict_is_dot():
    fm = FactorModel(np.array([[0.5, 2.0]]), np.array([[2.0, 0.25]]))
    assert fm.predict(0, 0) == 1.5


def test_factor_model_rejects_non_finite():
    with pytest.raises(ValueError):
        FactorModel(np.array([[np.inf]]), np.array([[1.0]]))


def test_predict_local_identity():
    lm = local([0], [0], [[1, 0]], [[1, 0]])
    assert predict_local(lm, 0, 0) == 1.0


def test_predict_local_hand_dot():
    lm = local([3], [5], [[0.5, 2]], [[2, 0.25]])
    assert predict_local(lm, 3, 5) == 1.5


def test_predict_local_membership_miss():
    lm = local([3], [5], [[0.5, 2]], [[2, 0.25]])
    assert predict_local(lm, 4, 5) is None
    assert predict_local(lm, 3, 4) is None


def test_local_reindexing_is_bijective():
    lm = local([7, 2, 9], [4, 1], np.eye(3, 2), np.eye(2))
    assert [lm.local_user(u) for u in (2, 7, 9)] == [0, 1, 2]
    assert [lm.local_item(i) for i in (1, 4)] == [0, 1]
    umap, imap = lm.local_maps(10, 5)
    assert sorted(np.flatnonzero(umap >= 0).tolist()) == [2, 7, 9]
    assert sorted(imap[imap >= 0].tolist()) == [0, 1]


def test_local_ratings_reindex():
    r = make_ratings([(0, 0, 1), (2, 1, 4), (2, 3, 5), (1, 1, 2)], 3, 4)
    lm = LocalModel([2], [1, 3], [1, 2], Origin("connector", user=2))
    sub = lm.local_ratings(r)
    assert (sub.num_users, sub.num_items) == (1, 2)
    assert sorted(sub.entries()) == [(0, 0, 4.0), (0, 1, 5.0)]


def test_uniform_ensemble_average_and_fallback():
    a = local([0, 1], [0], [[3.0], [1.0]], [[1.0]])
    b = local([0], [0, 1], [[5.0]], [[1.0], [2.0]])
    ens = EnsembleModel([a, b], 3, 2, global_mean=2.5, combine_rule=UNIFORM)
    pred, fb = ens.predict([0, 1, 0, 2], [0, 0, 1, 0])
    assert pred.tolist() == [4.0, 1.0, 10.0, 2.5]
    assert fb.tolist() == [False, False, False, True]


def test_ensemble_needs_a_model():
    with pytest.raises(ValueError):
        EnsembleModel([], 1, 1, 3.0)


def test_epanechnikov_support():
    x = np.array([0.0, 0.4, 0.8, 1.2])
    assert epanechnikov(x, 0.8).tolist() == [1.0, 0.75, 0.0, 0.0]


def test_arc_distances_zero_row_is_far():
    X = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    d = arc_distances(X, np.array([1.0, 0.0]))
    assert d[0] == 0.0 and d[1] == pytest.approx(np.pi) and d[2] == pytest.approx(np.pi / 2)


def test_kernel_ensemble_needs_anchor_factors():
    a = local([0], [0], [[1.0]], [[1.0]], origin=Origin("anchor", user=0, item=0))
    with pytest.raises(ValueError):
        EnsembleModel([a], 1, 1, 3.0, combine_rule=KERNEL)
