import time

import numpy as np
import pytest

from onepass.config import ExperimentConfig
from onepass.harness import HarnessConfig, run_multi_epoch, run_naive, run_one_pass

TREND_SEEDS = range(10)
REPLAY_STEPS = (1, 3, 5, 8)
STORAGE = (0.01, 0.1)

_criteria: dict[str, list] = {}


@pytest.fixture(scope="session")
def trend_runs():
    """Accuracy per configuration over 10 seeds on the default blobs task.

    Keys: ``naive``, ``("epr", k, storage)``, ``("noiw", 5, 0.01)``,
    ``("multi", epochs)``; plus ``"_seconds"`` for the wall time spent.
    """
    config = ExperimentConfig()
    train, test = config.dataset.load()
    learner = config.learner
    start = time.perf_counter()
    runs: dict = {}

    def add(key, value):
        runs.setdefault(key, []).append(value)

    for seed in TREND_SEEDS:
        add("naive", run_naive(train, test, learner, seed, seed).top1_accuracy)
        for k in REPLAY_STEPS:
            for frac in STORAGE:
                report = run_one_pass(HarnessConfig(k, frac), train, test, learner, seed, seed)
                add(("epr", k, frac), report.top1_accuracy)
            add(("multi", k + 1), run_multi_epoch(k + 1, train, test, learner, seed, seed).top1_accuracy)
        no_iw = HarnessConfig(5, 0.01, importance_weights=False)
        add(("noiw", 5, 0.01), run_one_pass(no_iw, train, test, learner, seed, seed).top1_accuracy)
    out = {key: np.array(v) for key, v in runs.items()}
    out["_seconds"] = time.perf_counter() - start
    return out


@pytest.fixture
def criterion(request):
    """Record a labelled detail line for the acceptance summary."""

    def record(label: str, detail: str) -> None:
        _criteria[request.node.nodeid] = [label, detail, None]

    return record


def pytest_runtest_logreport(report):
    if report.when == "call" and report.nodeid in _criteria:
        _criteria[report.nodeid][2] = report.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, detail, passed in sorted(_criteria.values(), key=lambda c: c[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {label}: {detail}")
