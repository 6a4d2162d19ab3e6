"""Directional checks of the training harness on the default blobs task.

These reuse the 10-seed grid from ``conftest.trend_runs`` (a few minutes).
"""

import pytest
from scipy import stats

pytestmark = pytest.mark.slow


def test_naive_below_replay(trend_runs):
    naive, replay = trend_runs["naive"], trend_runs[("epr", 5, 0.01)]
    assert naive.mean() < replay.mean()
    assert stats.ttest_rel(replay, naive).pvalue < 0.05


@pytest.mark.parametrize("storage", [0.01, 0.1])
def test_more_replay_steps_help(trend_runs, storage):
    runs = [trend_runs[("epr", k, storage)] for k in (1, 3, 5, 8)]
    for fewer, more in zip(runs, runs[1:]):
        assert more.mean() > fewer.mean()
        assert stats.ttest_rel(more, fewer).pvalue < 0.05


def test_naive_below_multi_epoch(trend_runs):
    naive, multi = trend_runs["naive"], trend_runs[("multi", 9)]
    assert (multi > naive).all()
    assert stats.ttest_rel(multi, naive).pvalue < 0.05


@pytest.mark.parametrize("k", [1, 3, 5, 8])
def test_multi_epoch_dominates_replay(trend_runs, k):
    assert trend_runs[("multi", k + 1)].mean() >= trend_runs[("epr", k, 0.1)].mean()


@pytest.mark.parametrize("k", [1, 3, 5, 8])
def test_bigger_buffer_helps(trend_runs, k):
    assert trend_runs[("epr", k, 0.1)].mean() >= trend_runs[("epr", k, 0.01)].mean()
