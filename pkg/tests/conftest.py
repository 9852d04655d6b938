import numpy as np
import pytest

from skilleval.synth_data import GenConfig, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """4 subjects, short segments: enough structure for fast pipeline tests."""
    return generate_dataset(GenConfig(n_subjects=4, frames_min=6, frames_max=10, seed=3))


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(GenConfig())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"{n}. {'PASS' if ok else 'FAIL'}  {detail}")
