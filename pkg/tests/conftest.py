import sys

import numpy as np
import pytest

from smie.data import Dataset, SynthConfig, generate_synthetic

SMALL = dict(n_classes=4, n_seen=3, samples_per_class_train=6, samples_per_class_test=3,
             K=20, J=2, C=3, D_s=8, noise_sigma=0.1, seed=3)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    _, split = generate_synthetic(SynthConfig(**SMALL), root)
    return Dataset.load(root), split


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = next((m.ACCEPTANCE_LINES for m in list(sys.modules.values())
                  if getattr(m, "__name__", "").endswith("test_acceptance")), None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
