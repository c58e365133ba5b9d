import numpy as np
import pytest

from polyprobe.metrics import train_classifier
from polyprobe.shapegen import PolygonSpec, generate_dataset


@pytest.fixture(scope="session")
def small_datasets():
    """Unshifted 16px datasets, one per class."""
    return [generate_dataset(PolygonSpec(n, 20, image_size=16, count=300, seed=100 + n)) for n in (3, 4, 5)]


@pytest.fixture(scope="session")
def small_classifier(small_datasets):
    return train_classifier(small_datasets, seed=7, min_accuracy=0.9, min_per_class=300, epochs=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
