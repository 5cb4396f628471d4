import numpy as np
import pytest

from simplex_recovery.config import ExperimentConfig
from simplex_recovery.dynamics import build_default_drone_model
from simplex_recovery.target_set import TargetForm, validate_params


@pytest.fixture
def model():
    return build_default_drone_model()


@pytest.fixture
def band():
    return validate_params(TargetForm.STRIP, ([1.0, 0.0], 9.5, 10.5))


@pytest.fixture
def cfg():
    return ExperimentConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, n, scale=1.0):
    M = rng.normal(size=(n, n)) * scale
    return M @ M.T + 1e-3 * scale * scale * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "VERDICTS", []), key=lambda l: int(l.split()[1].rstrip(":")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
