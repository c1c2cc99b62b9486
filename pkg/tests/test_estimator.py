import json

import numpy as np
import pytest

from conftest import solved
from rmtse.estimator import (
    StateEstimate,
    UnobservableError,
    WlsConfig,
    error_decomposition,
    rwls_estimate,
    state_mae,
    wls_estimate,
)
from rmtse.estimator import _gauss_newton  # noqa: PLC2701
from rmtse.grid import shipped_cases
from rmtse.noise import NoiseSpec, build_window, draw_bias, sample_noise, sigma_from_truth
from rmtse.powerflow import MeasurementPlan, OperatingState, measurement_function

FLAT = WlsConfig(init="flat")


def _noisy(name, seed=0):
    case, adm, plan, state, h = solved(name)
    rng = np.random.default_rng(seed)
    sigma = sigma_from_truth(h, plan, 0.05, 0.01)
    bias = draw_bias(len(plan), rng)
    z = h + sample_noise(NoiseSpec("gaussian", sigma, bias), len(plan), rng)
    return case, adm, plan, state, h, sigma, z


@pytest.mark.parametrize("name", shipped_cases())
def test_noiseless_recovery(name):
    case, adm, plan, state, h = solved(name)
    sigma = sigma_from_truth(h, plan, 0.05, 0.01)
    est = wls_estimate(case, plan, h, sigma, FLAT, adm=adm)
    assert est.converged
    assert np.max(np.abs(est.state.as_vector() - state.as_vector())) < 1e-6


def test_random_init_recovers_noiseless_case30(case30):
    case, adm, plan, state, h = case30
    sigma = sigma_from_truth(h, plan, 0.05, 0.01)
    for seed in range(5):
        est = wls_estimate(case, plan, h, sigma, WlsConfig(), np.random.default_rng(seed), adm)
        assert np.max(np.abs(est.state.as_vector() - state.as_vector())) < 1e-6


def test_duplication_invariance(case30):
    case, adm, plan, _, _, sigma, z = _noisy("case30")
    twice = MeasurementPlan(plan.kinds * 2, np.r_[plan.index, plan.index])
    a = wls_estimate(case, plan, z, sigma, FLAT, adm=adm)
    b = wls_estimate(case, twice, np.r_[z, z], np.r_[sigma, sigma], FLAT, adm=adm)
    assert np.max(np.abs(a.state.as_vector() - b.state.as_vector())) < 1e-10


def test_objective_and_residual_identities():
    case, adm, plan, _, _, sigma, z = _noisy("case30", 1)
    est = wls_estimate(case, plan, z, sigma, FLAT, adm=adm)
    zhat = measurement_function(est.state, plan, adm)
    assert np.max(np.abs(zhat - (z - est.residual))) < 1e-12
    assert est.objective == pytest.approx(float(np.sum(est.residual**2 / sigma**2)), rel=1e-12)


def test_slack_angle_pinned():
    case, adm, plan, _, _, sigma, z = _noisy("case57", 2)
    est = wls_estimate(case, plan, z, sigma, WlsConfig(), np.random.default_rng(0), adm)
    assert est.state.va[case.slack] == case.buses[case.slack].va


def test_monotone_objective():
    case, adm, plan, state, h, sigma, z = _noisy("case118", 3)
    rng = np.random.default_rng(4)
    x0 = OperatingState(np.abs(rng.normal(1, 0.05, case.n_bus)), rng.normal(0, 0.157, case.n_bus))
    x0.va[case.slack] = 0.0
    w = 1 / sigma**2
    objs = []
    for k in range(1, 8):
        cfg = WlsConfig(max_iter=k)
        objs.append(_gauss_newton(case, plan, adm, z, w, cfg, x0)[4])
    assert all(b <= a * (1 + 1e-12) for a, b in zip(objs, objs[1:]))


def test_known_bias_is_subtracted(case30):
    case, adm, plan, state, h = case30
    sigma = sigma_from_truth(h, plan, 0.05, 0.01)
    bias = draw_bias(len(plan), np.random.default_rng(5))
    est = wls_estimate(case, plan, h + bias, sigma, FLAT, adm=adm, bias=bias)
    assert np.max(np.abs(est.state.as_vector() - state.as_vector())) < 1e-6


def test_unobservable_by_count(case30):
    case, adm, plan, _, h = case30
    few = MeasurementPlan(plan.kinds[:10], plan.index[:10])
    with pytest.raises(UnobservableError):
        wls_estimate(case, few, h[:10], np.ones(10), FLAT, adm=adm)


def test_unobservable_by_structure(case30):
    case, adm, plan, _, h = case30
    # plenty of rows, but only magnitudes: every angle column of H is zero
    vm_rows = plan.rows("Vm")
    rows = np.tile(vm_rows, 3)
    sub = MeasurementPlan(tuple(plan.kinds[i] for i in rows), plan.index[rows])
    with pytest.raises(UnobservableError):
        wls_estimate(case, sub, h[rows], np.ones(rows.size), FLAT, adm=adm)


def test_input_validation(case30):
    case, adm, plan, _, h = case30
    with pytest.raises(ValueError):
        wls_estimate(case, plan, h[:-1], np.ones(len(plan)), FLAT, adm=adm)
    with pytest.raises(ValueError):
        wls_estimate(case, plan, h, np.zeros(len(plan)), FLAT, adm=adm)


def test_non_convergence_is_flagged(case30):
    case, adm, plan, _, _, sigma, z = _noisy("case30")
    est = wls_estimate(case, plan, z, sigma, WlsConfig(init="flat", max_iter=1), adm=adm)
    assert not est.converged and est.iterations == 1


def test_estimate_serialises(case30):
    case, adm, plan, _, h = case30
    est = wls_estimate(case, plan, h, np.ones(len(plan)), FLAT, adm=adm)
    d = json.loads(json.dumps(est.to_dict()))
    assert d["converged"] and len(d["vm"]) == case.n_bus
    assert isinstance(est, StateEstimate)


# error decomposition --------------------------------------------------------------


def test_perfect_estimate_decomposition():
    rng = np.random.default_rng(6)
    h = rng.normal(size=20)
    z = h + rng.normal(size=20)
    d = error_decomposition(z, h, h, np.ones(20))
    assert not d["estimated_error"].any()
    assert np.array_equal(d["residual"], d["measurement_error"])


def test_triangle_inequality():
    rng = np.random.default_rng(7)
    for _ in range(200):
        z, h, hh = rng.normal(size=(3, 15))
        w = rng.uniform(0.1, 10, 15)
        d = error_decomposition(z, h, hh, w)
        for norm in ("l1", "l2"):
            assert d[f"{norm}_estimated_error"] <= d[f"{norm}_residual"] + d[f"{norm}_measurement_error"] + 1e-12


def test_decomposition_length_check():
    with pytest.raises(ValueError):
        error_decomposition(np.ones(3), np.ones(3), np.ones(2), np.ones(3))


def test_small_residual_hides_large_estimation_error():
    case, adm, plan, state, h, sigma, z = _noisy("case30", 8)
    est = wls_estimate(case, plan, z, sigma, FLAT, adm=adm)
    d = error_decomposition(z, h, measurement_function(est.state, plan, adm), est.weights)
    assert np.max(np.abs(d["estimated_error"])) > 3 * np.median(np.abs(d["residual"]))


# two-stage pipeline ----------------------------------------------------------------


@pytest.mark.parametrize("ratio", [1.2, 2.0])
def test_noiseless_rwls_matches_wls(case30, ratio):
    case, adm, plan, state, h = case30
    n = len(plan)
    t = round(ratio * n)
    sigma = sigma_from_truth(h, plan, 0.05, 0.01)
    rng = np.random.default_rng(9)
    w = build_window(h[:, None] * (1 + 1e-6 * rng.standard_normal((n, t))), NoiseSpec("gaussian", sigma, 0.0), plan)
    a = wls_estimate(case, plan, h, sigma, FLAT, adm=adm)
    b = rwls_estimate(case, plan, w, FLAT, adm=adm)
    assert np.max(np.abs(a.state.as_vector() - b.state.as_vector())) < 1e-6


def test_rwls_reports_both_stages(case30):
    case, adm, plan, state, h = case30
    n = len(plan)
    t = round(1.2 * n)
    rng = np.random.default_rng(10)
    sigma = sigma_from_truth(h, plan, 0.05, 0.01)
    spec = NoiseSpec("gaussian", sigma, draw_bias(n, rng))
    raw = h[:, None] + np.column_stack([sample_noise(spec, n, rng) for _ in range(t)])
    w = build_window(raw, spec, plan)
    est = rwls_estimate(case, plan, w, WlsConfig(), rng, adm)
    assert np.allclose(est.stages["raw"], raw[:, -1], rtol=1e-13, atol=1e-15)
    assert est.stages["cleaned"].shape == (n,)
    assert np.array_equal(est.weights, 1 / sigma**2)
    plain = wls_estimate(case, plan, raw[:, -1], sigma, WlsConfig(), np.random.default_rng(0), adm)
    assert state_mae(est.state, state) < state_mae(plain.state, state)


def test_state_mae_counts_all_entries():
    a = OperatingState(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    b = OperatingState(np.array([1.0, 0.9]), np.array([0.0, 0.2]))
    assert state_mae(a, b) == pytest.approx(0.3 / 4)
