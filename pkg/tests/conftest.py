import numpy as np
import pytest

from mtd_sim.config import default_config


def random_stable(rng, n, radius=0.9):
    A = rng.standard_normal((n, n))
    return A * (radius / max(abs(np.linalg.eigvals(A))))


def random_spd(rng, n, floor=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_cfg():
    return default_config()


# --- acceptance reporting: one PASS/FAIL line per criterion --------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    number, title = mark
    failed = report.failed
    prev = _CRITERIA.get(number, (title, True))
    if report.when == "call" or failed:
        _CRITERIA[number] = (title, prev[1] and not failed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}")
