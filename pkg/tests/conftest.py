import numpy as np
import pytest

from perfhom.cell import build_corrector_set
from perfhom.coefficients import CoefficientField
from perfhom.geometry import PerforationSpec


@pytest.fixture(scope="session")
def disk():
    return PerforationSpec("disk", 0.25)


@pytest.fixture(scope="session")
def nohole():
    return PerforationSpec(hole_shape="none")


@pytest.fixture(scope="session")
def lame():
    return CoefficientField("isotropic_lame", 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fine_corrector(disk, lame):
    """Cell solve at the acceptance resolution h = 1/128."""
    return build_corrector_set(disk, lame, 1 / 128)


ACCEPTANCE_LINES = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> verdict line, printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
