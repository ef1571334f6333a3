import numpy as np
import pytest

from scenecloak.models import (
    ConstantSaliency,
    SpectralResidualSaliency,
    linear_classifier,
    neg_total_variation_aesthetics,
    reference_conv_classifier,
)
from scenecloak.synthetic import make_synthetic_set

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        # a criterion may span several tests; the worst outcome wins
        rank = {"passed": 0, "skipped": 1, "failed": 2}
        prev = _ACCEPTANCE.get(marker, "passed")
        _ACCEPTANCE[marker] = max(prev, report.outcome, key=rank.get)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        report._acceptance = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), outcome in sorted(_ACCEPTANCE.items()):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def linear_model():
    return linear_classifier(num_classes=4, seed=0)


@pytest.fixture(scope="session")
def conv_model():
    return reference_conv_classifier(seed=0)


@pytest.fixture(scope="session")
def synthetic_eval():
    return make_synthetic_set(50, size=32, seed=1)


@pytest.fixture
def spectral():
    return SpectralResidualSaliency()


@pytest.fixture
def tv():
    return neg_total_variation_aesthetics()


@pytest.fixture
def no_saliency():
    return ConstantSaliency(0.0)
