import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmamba.errors import ProtocolError
from hmamba.metrics import Metrics, compute_metrics, format_report, metrics_from_ranks


def ranking_with(target, rank, n=20):
    others = [i for i in range(1, n + 1) if i != target]
    return others[: rank - 1] + [target] + others[rank - 1:]


@pytest.mark.parametrize("rank,hr,ndcg,mrr", [
    (1, 1.0, 1.0, 1.0),
    (2, 1.0, 1 / math.log2(3), 0.5),
    (10, 1.0, 1 / math.log2(11), 0.1),
    (11, 0.0, 0.0, 0.0),
])
def test_hand_values(rank, hr, ndcg, mrr):
    m = compute_metrics([ranking_with(5, rank)], [5], K=10)
    assert (m.hr, m.ndcg, m.mrr) == pytest.approx((hr, ndcg, mrr), rel=1e-15)
    assert m.n_users == 1 and m.k == 10


def test_rank_two_ndcg_value():
    assert compute_metrics([ranking_with(3, 2)], [3]).ndcg == pytest.approx(0.6309, abs=5e-5)


def test_absent_target():
    with pytest.raises(ProtocolError):
        compute_metrics([[1, 2, 3]], [4])
    with pytest.raises(ProtocolError):
        compute_metrics([[1, 2]], [1, 2])


@given(st.lists(st.integers(1, 40), min_size=1, max_size=60), st.integers(1, 20))
def test_ordering_invariant(ranks, K):
    m = metrics_from_ranks(ranks, K)
    assert 0.0 <= m.mrr <= m.ndcg <= m.hr <= 1.0


@given(st.lists(st.integers(1, 40), min_size=1, max_size=60), st.randoms(use_true_random=False))
def test_user_order_invariant(ranks, rnd):
    shuffled = list(ranks)
    rnd.shuffle(shuffled)
    assert metrics_from_ranks(ranks) == metrics_from_ranks(shuffled)


def test_random_rankings_ordering():
    rng = np.random.default_rng(0)
    rankings = [list(rng.permutation(30) + 1) for _ in range(200)]
    targets = [int(t) for t in rng.integers(1, 31, size=200)]
    m = compute_metrics(rankings, targets)
    assert m.mrr <= m.ndcg <= m.hr


def test_report_format():
    text = format_report([Metrics(0.5, 0.25, 0.125, 10, 4)], {"<100": [Metrics(1.0, 1.0, 1.0, 10, 1)]}, table=True)
    lines = text.splitlines()
    assert lines[:3] == ["hr\t10\t0.500000\t4", "ndcg\t10\t0.250000\t4", "mrr\t10\t0.125000\t4"]
    assert lines[3] == "hr[<100]\t10\t1.000000\t1"
    assert "metric" in lines[7]
