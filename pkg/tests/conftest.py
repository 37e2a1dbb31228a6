import numpy as np
import pytest

from lfdsim.coefficients import build_kernels
from lfdsim.grid import make_grid

_VERDICTS: list[str] = []


class Criterion:
    """Records one PASS/FAIL line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []
        self.ok = True

    def check(self, cond: bool, detail: str) -> bool:
        cond = bool(cond)
        self.ok &= cond
        self.details.append(("" if cond else "!") + detail)
        return cond

    def line(self) -> str:
        tag = "PASS" if self.ok else "FAIL"
        return f"{tag} criterion {self.number:2d} {self.title}: " + "; ".join(self.details)


@pytest.fixture
def criterion(request):
    made = []

    def factory(number, title):
        c = Criterion(number, title)
        made.append(c)
        return c

    yield factory
    for c in made:
        line = c.line()
        _VERDICTS.append(line)
        print(line)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2])):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(6.0, 16, 1.0)


@pytest.fixture(scope="session")
def kernels16(grid16):
    return build_kernels(grid16)


@pytest.fixture(scope="session")
def grid8():
    return make_grid(4.0, 8, 1.0)


@pytest.fixture(scope="session")
def kernels8(grid8):
    return build_kernels(grid8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
