import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rmtse.grid import build_admittance, load_case  # noqa: E402
from rmtse.powerflow import full_scada_plan, measurement_function, solve_power_flow  # noqa: E402


@functools.lru_cache(maxsize=None)
def solved(name: str):
    """(case, admittance, plan, power-flow state, true measurements) for a shipped case."""
    case = load_case(name)
    adm = build_admittance(case)
    state = solve_power_flow(case, adm).state
    plan = full_scada_plan(case)
    return case, adm, plan, state, measurement_function(state, plan, adm)


@pytest.fixture
def case30():
    return solved("case30")
