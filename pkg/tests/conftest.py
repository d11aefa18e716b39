import numpy as np
import pytest
from hypothesis import settings

from causal_distill.data import ObservationalDataset
from causal_distill.datagen import DgpConfig, generate_observational

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def make_dataset(x, t, y, **kw) -> ObservationalDataset:
    return ObservationalDataset(x=np.asarray(x, dtype=float), t=np.asarray(t), y=np.asarray(y, dtype=float), **kw)


@pytest.fixture(scope="session")
def linear_ds():
    return generate_observational(DgpConfig(n=400, d=3, noise_sd=0.5, seed=7))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LOG: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LOG):
            terminalreporter.write_line(line)
