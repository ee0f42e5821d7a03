import numpy as np
import pytest

from perfhom.coefficients import CoefficientSet, MatrixField, SurfaceResistivity
from perfhom.effective import homogenize
from perfhom.geometry import CellGeometry, build_cell_mesh

# catalog fields shared by several modules
IDENTITY = MatrixField()
NONSYM_TRIG = MatrixField("trig", ((1.0, 0.5), (0.0, 1.0)), ((0.0, 0.3), (0.0, 0.0)), (1, 0))
SYM_TRIG = MatrixField("trig", ((1.0, 0.0), (0.0, 1.0)), ((0.3, 0.0), (0.0, 0.2)), (1, 1))
COS = SurfaceResistivity(((1.0, 0.0),))
COS_SIN2 = SurfaceResistivity(((1.0, 0.0), (0.0, 0.5)))


@pytest.fixture(scope="session")
def cell4():
    return build_cell_mesh(CellGeometry((0.5, 0.5), 0.25, 4))


@pytest.fixture(scope="session")
def plain3():
    return build_cell_mesh(CellGeometry((0.5, 0.5), 0.0, 3))


@pytest.fixture(scope="session")
def plain4():
    return build_cell_mesh(CellGeometry((0.5, 0.5), 0.0, 4))


@pytest.fixture(scope="session")
def nonsym_stage():
    return homogenize(CellGeometry((0.5, 0.5), 0.25, 4), CoefficientSet(A=NONSYM_TRIG, alpha=COS_SIN2))


@pytest.fixture(scope="session")
def cos_stage():
    return homogenize(CellGeometry((0.5, 0.5), 0.25, 4), CoefficientSet(alpha=COS))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.notes = number, title, []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc_type is not None and not detail:
            detail = f"{exc_type.__name__}: {exc}".splitlines()[0]
        line = f"criterion {self.number:>2} {status}: {self.title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
