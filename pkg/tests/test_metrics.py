import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jfbar.errors import InvalidArgumentError
from jfbar.metrics import GROUP_WEIGHTS, grouping_statistic, mse, selection_metrics, summarize


class TestSelection:
    def test_perfect(self):
        assert selection_metrics([0, 9, 10, 11], [0, 9, 10, 11]) == (4, 0, 1.0, True)

    def test_partial(self):
        tp, fp, sm, exact = selection_metrics([0, 9, 10, 5], [0, 9, 10, 11])
        assert (tp, fp, exact) == (3, 1, False)
        assert sm == pytest.approx(0.75)

    def test_empty_estimate(self):
        assert selection_metrics([], [0, 1]) == (0, 0, 0.0, False)

    def test_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            selection_metrics([25], [0], p=20)

    @settings(max_examples=50, deadline=None)
    @given(st.sets(st.integers(0, 19)), st.sets(st.integers(0, 19), min_size=1), st.permutations(list(range(20))))
    def test_relabelling_invariance(self, est, tru, perm):
        a = selection_metrics(est, tru)
        b = selection_metrics({perm[j] for j in est}, {perm[j] for j in tru})
        assert a == b


class TestMse:
    def test_exact(self):
        assert mse([[1.0, 2.0], [1.0, 2.0]], [1.0, 2.0]) == (0.0, 0.0)

    def test_two_point(self):
        m, sd = mse([[1.0, 0.0], [1.0, math.sqrt(2.0)]], [0.0, 0.0])
        assert m == pytest.approx(2.0) and sd == pytest.approx(math.sqrt(2.0))

    def test_single_replication(self):
        assert mse([[3.0, 4.0]], [0.0, 0.0]) == (25.0, 0.0)


class TestGrouping:
    def test_weights_sum_to_one(self):
        assert 2 * sum(GROUP_WEIGHTS) == pytest.approx(1.0, abs=0)

    def test_perfect(self):
        truth = [0, 1, 8, 9, 10, 11, 18, 19]
        assert grouping_statistic(truth) == pytest.approx(1.0)

    def test_everything_selected(self):
        assert grouping_statistic(range(20)) == pytest.approx(0.4)

    def test_nothing_selected(self):
        assert grouping_statistic([]) == pytest.approx(0.6)

    def test_split_group_loses_its_weight(self):
        # drop one member of the first group of the recurrent sub-model
        assert grouping_statistic([0, 8, 9, 10, 11, 18, 19]) == pytest.approx(0.9)

    @settings(max_examples=50, deadline=None)
    @given(st.sets(st.integers(0, 19)))
    def test_range(self, est):
        assert 0.0 <= grouping_statistic(est) <= 1.0


class TestSummarize:
    def test_report(self):
        truth = np.zeros(20)
        truth[[0, 9, 10, 11]] = [1.0, -1.0, 1.0, -0.5]
        supports = [(0, 9, 10, 11), (0, 9, 10, 11, 3)]
        est = np.tile(truth, (2, 1))
        est[1, 3] = 0.5
        rep = summarize(supports, est, truth, gammas=[0.9, 1.1], phis=[1.0, 1.0])
        assert rep.tp == 4.0 and rep.fp == 0.5 and rep.tm == 0.5
        assert rep.mse == pytest.approx(0.125) and rep.gamma_mean == pytest.approx(1.0)
        assert rep.phi_sd == 0.0 and rep.g is None
        assert len(rep.per_replication) == 2 and rep.row()["TM"] == 0.5

    def test_grouped(self):
        truth = np.zeros(20)
        truth[[0, 1, 8, 9, 10, 11, 18, 19]] = 0.8
        rep = summarize([(0, 1, 8, 9, 10, 11, 18, 19)], [truth], truth, groups=(2, 3, 3, 2))
        assert rep.g == pytest.approx(1.0) and rep.row()["G"] == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            summarize([], np.zeros((0, 2)), [1.0, 0.0])
