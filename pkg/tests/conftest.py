import logging

import numpy as np
import pytest

from acceptance_log import RESULTS
from popbias.data import InteractionDataset
from popbias.synthetic import make_skewed_dataset


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        passed, detail = RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def tiny_dataset():
    return InteractionDataset.from_triples(
        [("u1", "i1", 5), ("u1", "i2", 3), ("u2", "i1", 4), ("u2", "i3", 2), ("u3", "i2", 1)],
        rating_scale=(1.0, 5.0),
    )


@pytest.fixture(scope="session")
def small_skewed():
    return make_skewed_dataset(n_users=300, n_items=150, mean_profile=15, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)
