import numpy as np
import pytest

from weakkam.config import load_config, shipped_config
from weakkam.discounted import SolverParams
from weakkam.model import HamiltonianModel, TorusGrid, VelocityGrid, legendre_transform
from weakkam.pipeline import Pipeline


def make_table(expr, n=32, vmax=4.0, m=33, dim=1, mechanical=True):
    xg, vg = TorusGrid(dim, n), VelocityGrid(dim, vmax, m)
    model = HamiltonianModel.mechanical(expr, dim) if mechanical else HamiltonianModel.from_expression(expr, dim)
    return legendre_transform(model, xg, vg)


@pytest.fixture(scope="session")
def free_small():
    return make_table("0", n=16, m=17)


@pytest.fixture(scope="session")
def mech_small():
    return make_table("cos(2*pi*x1)", n=32, m=33)


@pytest.fixture(scope="session")
def mech_desk():
    """The desk-scale mechanical table (N=128, vmax=4, m=129)."""
    return make_table("cos(2*pi*x1)", n=128, m=129)


@pytest.fixture(scope="session")
def params():
    return SolverParams()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240917)


def _pipeline(name):
    return Pipeline(load_config(shipped_config(name)))


@pytest.fixture(scope="session")
def mech_pipeline():
    return _pipeline("mechanical")


@pytest.fixture(scope="session")
def free_pipeline():
    return _pipeline("free_motion")


@pytest.fixture(scope="session")
def double_well_pipeline():
    return _pipeline("double_well")


@pytest.fixture(scope="session")
def constant_pipeline():
    return _pipeline("constant_subsolution")


# --- acceptance report ---------------------------------------------------

ACCEPTANCE = {}


def record_criterion(number, title, parts):
    """Store and print one PASS/FAIL line; ``parts`` maps sub-check names to booleans."""
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}"
    if failed:
        line += f" (failed: {', '.join(failed)})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
