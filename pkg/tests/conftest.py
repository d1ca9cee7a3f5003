"""Shared, session-scoped pipeline fixtures (reference, linearization, LQR
gains and the nominal ILC run) so the expensive pieces are built once."""

from __future__ import annotations

import numpy as np
import pytest

from sts_robust import constants as C
from sts_robust.ilc import IlcGains, IlcScenario
from sts_robust.lqr import linearize, paper_weights, solve_riccati, stiffness_substeps
from sts_robust.planner import PlanSpec, build_reference


@pytest.fixture(scope="session")
def spec():
    return PlanSpec()


@pytest.fixture(scope="session")
def ref(spec):
    return build_reference(spec)


@pytest.fixture(scope="session")
def lin(ref):
    return linearize(ref, C.P_NOMINAL)


@pytest.fixture(scope="session")
def star_gains(lin):
    return solve_riccati(lin, paper_weights())


@pytest.fixture(scope="session")
def star_substeps(lin, star_gains):
    return stiffness_substeps(lin, star_gains)


@pytest.fixture(scope="session")
def nominal_scenario(ref, lin, star_gains):
    return IlcScenario(ref, lin, star_gains, C.P_NOMINAL.copy())


@pytest.fixture(scope="session")
def nominal_run(nominal_scenario):
    return nominal_scenario.run(IlcGains.paper())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line."""

    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
