import numpy as np
import pytest
from scipy import ndimage

from epps.synthetic import write_circle_folder

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0].lstrip("#"))):
        passed, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


def random_blob(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), rng.uniform(1.0, 4.0))
    return (field > np.quantile(field, rng.uniform(0.3, 0.8))).astype(np.uint8)


@pytest.fixture
def blob_rng():
    return np.random.default_rng(1234)


@pytest.fixture
def folder_dataset(tmp_path):
    return write_circle_folder(tmp_path / "data", n=10, resolution=64, seed=3)
