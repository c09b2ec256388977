import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_reach_warning():
    # short windows make the dilated stack reach past the left edge; expected in tiny instances
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*reach.*")
        yield


# ---------------------------------------------------------------- acceptance summary
# Tests marked ``criterion(n)`` are tallied per criterion; a criterion passes only
# if every one of its tests passed.

CRITERIA = {
    1: "gradient fidelity of the micro-instance (max rel err <= 1e-4, <= 2 min)",
    2: "Top-U reductions (U >= N dense to 1e-10, U=1 one-hot, min(U, N) nonzeros)",
    3: "locality with the sparse branch ablated (exact, 20 configurations)",
    4: "receptive field 12 at P=16, backward mirrored, union covers all steps",
    5: "metric oracles to 1e-12 on 1000 vectors, PCC exactly +1 and -1",
    6: "overfit to train MAE < 0.02 in 500 epochs (< 5 min), lr=0 loss constant",
    7: "desk experiment complete, finite, deterministic, tables written (< 30 min)",
    8: "census proportions sum to 100 +- 0.1, intra and cross counts nonzero",
    9: "manifest replay reproduces artifacts bit for bit",
}
_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(mark.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, text in CRITERIA.items():
        runs = _outcomes.get(n)
        status = "NOT RUN" if runs is None else ("PASS" if all(runs) else "FAIL")
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")
