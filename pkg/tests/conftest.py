import numpy as np
import pytest

from zonalseg.data import generate_phantom_dataset
from zonalseg.preprocess import harmonize_records


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_datasets():
    """Harmonized 72x72 d1/d2 phantoms, 4 patients x 4 slices each."""
    d1 = generate_phantom_dataset(None, "d1", 3, 4, 4, sizes=((72, 72),), write=False)
    d2 = generate_phantom_dataset(None, "d2", 3, 4, 4, sizes=((76, 96), (84, 112)), write=False)
    return {"d1": harmonize_records(d1, (72, 72)), "d2": harmonize_records(d2, (72, 72))}


def pytest_terminal_summary(terminalreporter):
    from cases import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
