import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import reassembled_ybus, two_bus_text
from rmtse.grid import (
    Branch,
    Bus,
    CaseFormatError,
    GridCase,
    SingularBranchError,
    build_admittance,
    load_case,
    parse_case,
    serialize_case,
    shipped_cases,
)
from rmtse.powerflow import full_scada_plan


def test_minimal_two_bus_case():
    case = parse_case(two_bus_text(pd=10))
    assert case.n_bus == 2 and case.n_branch == 1
    assert case.buses[0].type == "slack"
    assert case.buses[1].load_p == pytest.approx(0.1)


def test_pegase_1354_counts():
    case = load_case("case1354pegase")
    assert (case.n_bus, case.n_branch, len(case.gens)) == (1354, 1991, 260)


def test_ieee30_plan_has_254_variables():
    assert len(full_scada_plan(load_case("case30"))) == 254


def test_pegase_plan_length():
    # 4 * 1991 + 3 * 1354; the paper quotes 12015 for the same formula
    assert len(full_scada_plan(load_case("case1354pegase"))) == 12026


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda t: t.replace("mpc.bus = [", "mpc.bus = ("), "malformed"),
        (lambda t: t.replace("\t2\t1\t0", "\t2\t1\tabc"), "non-numeric"),
        (lambda t: t.replace("\t1\t3\t0", "\t1\t1\t0"), "no slack"),
    ],
)
def test_parse_errors_carry_line_numbers(mutate, needle):
    with pytest.raises(CaseFormatError, match=needle) as err:
        parse_case(mutate(two_bus_text()))
    assert err.value.line is not None


def test_zero_buses_rejected():
    text = two_bus_text()
    start, end = text.index("mpc.bus = [") + len("mpc.bus = ["), text.index("];")
    with pytest.raises(CaseFormatError, match="zero buses"):
        parse_case(text[:start] + "\n" + text[end:])


def test_ignored_sections_warn():
    text = two_bus_text() + "mpc.gencost = [\n\t2\t0\t0\t3\t0.01\t40\t0;\n];\n"
    with pytest.warns(UserWarning, match="gencost"):
        parse_case(text)


def test_out_of_service_branch_dropped_and_zero_tap_is_nominal():
    text = two_bus_text()
    cut = text.rindex("];")
    text = text[:cut] + "\t1\t2\t0.01\t0.2\t0\t0\t0\t0\t0\t0\t0;\n" + text[cut:]
    case = parse_case(text)
    assert case.n_branch == 1
    assert case.branches[0].tap_ratio == 1.0


def test_series_admittance_of_pure_reactance():
    adm = build_admittance(parse_case(two_bus_text(x=0.1)))
    assert adm.yff[0] == pytest.approx(-10j)
    assert adm.ytt[0] == pytest.approx(-10j)
    assert adm.yft[0] == pytest.approx(10j)
    assert adm.ytf[0] == pytest.approx(10j)


def test_shunt_only_case_is_diagonal():
    buses = (
        Bus(1, "slack", 0, 0, 0.1, 0.2, 1.0),
        Bus(2, "PQ", 0, 0, 0.0, -0.5, 1.0),
    )
    adm = build_admittance(GridCase(100.0, buses, ()))
    assert np.allclose(adm.ybus.toarray(), np.diag([0.1 + 0.2j, -0.5j]))


def test_zero_impedance_branch_is_singular():
    buses = (Bus(1, "slack", 0, 0, 0, 0, 1.0), Bus(2, "PQ", 0, 0, 0, 0, 1.0))
    case = GridCase(100.0, buses, (Branch(1, 2, 0.0, 0.0, 0.0),))
    with pytest.raises(SingularBranchError):
        build_admittance(case)


@pytest.mark.parametrize("name", ["case30", "case57", "case118", "case300"])
def test_assembly_identity(name):
    case = load_case(name)
    ybus = build_admittance(case).ybus.toarray()
    assert np.max(np.abs(ybus - reassembled_ybus(case))) < 1e-12


def test_ybus_symmetric_with_nominal_taps():
    case = load_case("case30")
    nominal = GridCase(
        case.base_mva,
        case.buses,
        tuple(Branch(b.from_bus, b.to_bus, b.r, b.x, b.total_line_charging_b) for b in case.branches),
        case.gens,
    )
    y = build_admittance(nominal).ybus
    assert abs(y - y.T).max() < 1e-15


def test_branch_permutation_leaves_ybus_unchanged():
    case = load_case("case57")
    order = np.random.default_rng(1).permutation(case.n_branch)
    shuffled = GridCase(case.base_mva, case.buses, tuple(case.branches[i] for i in order), case.gens)
    diff = build_admittance(case).ybus - build_admittance(shuffled).ybus
    assert abs(diff).max() < 1e-12


@pytest.mark.parametrize("name", shipped_cases())
def test_round_trip(name):
    case = load_case(name)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = parse_case(serialize_case(case), name=case.name)
    assert again == case


@settings(max_examples=30, deadline=None)
@given(
    r=st.floats(0.0, 0.5),
    x=st.floats(0.01, 1.0),
    pd=st.floats(-200, 200),
    qd=st.floats(-200, 200),
)
def test_round_trip_random_values(r, x, pd, qd):
    case = parse_case(two_bus_text(pd=pd, qd=qd, r=r, x=x))
    assert parse_case(serialize_case(case)) == case


def test_invariants_enforced():
    bus = Bus(1, "PQ", 0, 0, 0, 0, 1.0)
    with pytest.raises(ValueError, match="slack"):
        GridCase(100.0, (bus,), ())
    slack = Bus(1, "slack", 0, 0, 0, 0, 1.0)
    with pytest.raises(ValueError, match="unknown bus"):
        GridCase(100.0, (slack,), (Branch(1, 9, 0.0, 0.1, 0.0),))
