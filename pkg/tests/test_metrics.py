import math

import pytest
from hypothesis import given, strategies as st

from frag.metrics import EmptyGoldError, mrr, ndcg_at_k, recall_at_k, weighted_mean


def test_recall_examples():
    assert recall_at_k(["e3", "e1", "e2"], {"e1"}, 1) == 0.0
    assert recall_at_k(["e3", "e1", "e2"], {"e1"}, 2) == 1.0
    assert recall_at_k(["e1", "e3", "e2"], {"e1", "e2"}, 2) == 0.5


def test_mrr_and_ndcg_examples():
    assert mrr(["a", "b", "g"], {"g"}) == pytest.approx(1 / 3)
    assert mrr(["a"], {"g"}) == 0.0
    assert ndcg_at_k(["a", "g"], {"g"}, 2) == pytest.approx(1 / math.log2(3))


def test_weighted_mean_example():
    assert weighted_mean([0.8, 0.4], [100, 300]) == pytest.approx(0.5)


def test_empty_gold_and_bad_k():
    with pytest.raises(EmptyGoldError):
        recall_at_k(["a"], set(), 1)
    with pytest.raises(ValueError):
        ndcg_at_k(["a"], {"a"}, 0)


ranked_lists = st.lists(st.integers(0, 30), unique=True, max_size=20)
gold_sets = st.sets(st.integers(0, 30), min_size=1, max_size=6)


@given(ranked_lists, gold_sets, st.integers(1, 25))
def test_metric_bounds_and_monotonicity(ranked, gold, k):
    r = recall_at_k(ranked, gold, k)
    assert 0.0 <= r <= 1.0
    assert r <= recall_at_k(ranked, gold, k + 1)
    assert 0.0 <= ndcg_at_k(ranked, gold, k) <= 1.0 + 1e-12
    assert 0.0 <= mrr(ranked, gold) <= 1.0
