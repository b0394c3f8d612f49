import numpy as np
import pytest
from hypothesis import settings

from stegadv.corpus import synthetic_covers
from stegadv.jpegio import CoefficientImage, compress_gray, ijg_quant_table

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_coefficients(rng, h=32, w=32, qf=90, scale=20):
    """Valid coefficient image with heavy-tailed values and many zeros."""
    c = np.round(rng.laplace(0, scale, size=(h, w)) * (rng.random((h, w)) < 0.6)).astype(np.int32)
    c = np.clip(c, -1023, 1023)
    return CoefficientImage(c, ijg_quant_table(qf), qf)


@pytest.fixture(scope="session")
def covers64():
    return [compress_gray(x, 95) for x in synthetic_covers(8, 64, seed=11)]


@pytest.fixture(scope="session")
def cover64(covers64):
    return covers64[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
CRITERIA: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
