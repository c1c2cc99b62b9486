import numpy as np
import pytest
from scipy import integrate, linalg, stats

from _oracles import deterministic_equivalent_g, outlier_location, outlier_overlap, spiked_window
from rmtse.noise import NoiseSpec, build_window, sigma_from_truth
from rmtse.rmt import (
    CleanedSpectrum,
    CleaningRefused,
    DegeneratePointError,
    clean_eigenvalues,
    clean_matrix,
    clean_window,
    dilation_matrix,
    dilation_spectrum,
    mp_cdf,
    mp_density,
    mp_edges,
    oracle_overlap,
    reconstruct_cleaned,
    shrinkage_formula,
    spectrum_diagnostics,
    stieltjes_at,
)


# dilation ------------------------------------------------------------------


def test_zero_matrix_dilation():
    spec = dilation_spectrum(np.zeros((2, 3)))
    assert np.array_equal(spec.raw_sv, [0.0, 0.0])
    assert np.array_equal(spec.dilation_eigenvalues(), np.zeros(5))


def test_diagonal_like_dilation():
    spec = dilation_spectrum(np.array([[3.0, 0, 0], [0, 4.0, 0]]))
    assert np.allclose(spec.raw_sv, [4, 3])
    assert np.allclose(np.sort(spec.dilation_eigenvalues()), [-4, -3, 0, 3, 4])


@pytest.mark.parametrize("seed", range(5))
def test_dense_dilation_oracle(seed):
    z = np.random.default_rng(seed).standard_normal((5, 8))
    dense = linalg.eigvalsh(dilation_matrix(z))
    implied = np.sort(dilation_spectrum(z).dilation_eigenvalues())
    assert np.max(np.abs(dense - implied)) < 1e-10
    assert np.allclose(implied, -implied[::-1], atol=0)  # exactly sign-symmetric


def test_covariance_eigenvalues_are_scaled_squares():
    z = np.random.default_rng(0).standard_normal((6, 9))
    spec = dilation_spectrum(z)
    assert np.allclose(np.sort(spec.covariance_eigenvalues), np.sort(linalg.eigvalsh(z @ z.T / 9)))


def test_dilation_rejects_non_finite():
    z = np.ones((3, 4))
    z[1, 1] = np.nan
    with pytest.raises(ValueError):
        dilation_spectrum(z)


# Stieltjes / Marchenko-Pastur ------------------------------------------------


def test_single_pole():
    s = stieltjes_at([0.0], 1.0, 1e-9)
    assert s.h == pytest.approx(1.0)
    assert s.rho == pytest.approx(0.0, abs=1e-8)


def test_symmetric_poles():
    for eta in (1e-3, 0.1, 2.0):
        assert stieltjes_at([0.0, 2.0], 1.0, eta).h == pytest.approx(0.0, abs=1e-15)


def test_stieltjes_rejects_nonpositive_eta():
    with pytest.raises(ValueError):
        stieltjes_at([1.0], 1.0, 0.0)


def test_stieltjes_density_tracks_mp():
    n, t = 1000, 2000
    g = np.random.default_rng(1).standard_normal((n, t))
    eigs = linalg.eigvalsh(g @ g.T / t)
    for lam in (0.4, 1.0, 1.8):
        rho = stieltjes_at(eigs, lam, n**-0.5).rho
        assert rho == pytest.approx(mp_density(lam, n / t), rel=0.10)


def test_mp_edges_vanish():
    a, b = mp_edges(0.5)
    assert mp_density(a, 0.5) == 0.0 and mp_density(b, 0.5) == 0.0


@pytest.mark.parametrize("q", [0.1, 0.5, 0.83, 1.0])
def test_mp_density_integrates_to_one(q):
    a, b = mp_edges(q, 1.3)
    total = integrate.quad(mp_density, a, b, args=(q, 1.3), limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-3)


def test_mp_density_substitution():
    # q = 1, sigma = 1: edges 0 and 4; sqrt((4 - 2)(2 - 0)) / (2 pi * 2)
    assert mp_density(2.0, 1.0) == pytest.approx(1 / (2 * np.pi))


def test_mp_ks_distance():
    n, t = 500, 1000
    g = np.random.default_rng(2).standard_normal((n, t))
    eigs = linalg.eigvalsh(g @ g.T / t)
    ks = stats.kstest(eigs, lambda x: mp_cdf(x, n / t)).statistic
    assert ks < 0.05


# cleaning formula -------------------------------------------------------------


def test_q_to_zero_limit_is_noise_subtraction():
    n, t = 40, 40_000
    rng = np.random.default_rng(3)
    z, _ = spiked_window(n, t, [4.0, 9.0], rng)
    lam = np.linalg.svd(z, compute_uv=False) ** 2 / t
    xi = clean_eigenvalues(lam, n / t)
    assert np.allclose(xi, np.clip(lam - 1, 0, None), atol=2e-2)


def test_shrinkage_formula_symbolic_limit():
    lam = np.array([0.5, 2.0, 7.0])
    assert np.allclose(shrinkage_formula(lam, 1e-12, 0.3, 0.1), lam - 1)


def test_clean_eigenvalues_input_checks():
    with pytest.raises(ValueError):
        clean_eigenvalues([1.0, 2.0], 1.5)
    with pytest.raises(ValueError):
        clean_eigenvalues([1.0, np.inf], 0.5)
    with pytest.raises(ValueError):
        clean_eigenvalues([1.0, -1.0], 0.5)


def test_pure_noise_trace_shrinks():
    n, t = 300, 600
    g = np.random.default_rng(5).standard_normal((n, t))
    res = clean_matrix(g)
    assert res.xi.sum() < res.eigenvalues.sum()
    assert np.all(res.xi >= 0)


def _frobenius_wins(n, q_c, spikes, trials=100):
    wins = 0
    for seed in range(trials):
        t = int(round(n / q_c))
        rng = np.random.default_rng(seed)
        k = len(spikes)
        basis = np.linalg.qr(rng.standard_normal((n, k)))[0]
        h = basis @ (np.sqrt(np.asarray(spikes))[:, None] * rng.standard_normal((k, t)))
        c = h @ h.T / t
        z = h + rng.standard_normal((n, t))
        e = z @ z.T / t
        res = clean_matrix(z)
        u = res.spectrum.left_basis
        cleaned = (u * res.xi) @ u.T
        wins += np.linalg.norm(cleaned - c) <= np.linalg.norm(e - c)
    return wins


@pytest.mark.parametrize("n", [100, 200])
@pytest.mark.parametrize("q_c", [0.5, 0.83])
def test_frobenius_dominance(n, q_c):
    assert _frobenius_wins(n, q_c, [2.0, 4.0, 8.0, 16.0, 32.0], trials=100) >= 95


def test_frobenius_dominance_rank_one():
    assert _frobenius_wins(200, 0.5, [10.0], trials=100) >= 95


# overlap oracle / identity ------------------------------------------------------


def test_overlap_rho_zero_substitution():
    # from the resolvent; the tempting (lam + c)(1 - q) - (1 - q) does not follow from it
    lam, c, q = 2.5, 1.3, 0.4
    beta = (lam - c) - (1 - q)
    assert oracle_overlap(lam, c, q, 0.0, 0.0) == pytest.approx(q * (lam + c) / beta**2)


def test_overlap_degenerate_point():
    # h = rho = 0, lam - c = 1 - q makes beta vanish
    with pytest.raises(DegeneratePointError):
        oracle_overlap(1.5, 1.0, 0.5, 0.0, 0.0)


def test_overlap_pure_noise_monte_carlo():
    n, t = 200, 400
    q = n / t
    lam0 = 1 + q  # centre of the bulk
    g = deterministic_equivalent_g(lam0, np.zeros(n), q, inside=True)
    predicted = float(oracle_overlap(lam0, 0.0, q, g.real, g.imag / np.pi))
    rng = np.random.default_rng(6)
    samples = []
    for _ in range(50):
        x = rng.standard_normal((n, t))
        w, v = linalg.eigh(x @ x.T / t)
        k = np.argmin(np.abs(w - lam0))
        samples.append(n * np.mean(v[:, k] ** 2))
    assert np.mean(samples) == pytest.approx(predicted, rel=0.15)


def test_overlap_spiked_monte_carlo():
    # bulk eigenvectors against a planted direction with known c
    n, t = 200, 400
    q = n / t
    spike = 3.0
    c = np.zeros(n)
    c[0] = spike
    lam0 = 1 + q
    g = deterministic_equivalent_g(lam0, c, q, inside=True)
    predicted = float(oracle_overlap(lam0, spike, q, g.real, g.imag / np.pi))
    rng = np.random.default_rng(17)
    samples = []
    for _ in range(50):
        u = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        right = rng.standard_normal(t)
        right *= np.sqrt(spike * t) / np.linalg.norm(right)
        z = np.outer(u, right) + rng.standard_normal((n, t))
        w, v = linalg.eigh(z @ z.T / t)
        near = np.argsort(np.abs(w - lam0))[:10]
        samples.extend(n * (v[:, near].T @ u) ** 2)
    assert np.mean(samples) == pytest.approx(predicted, rel=0.15)
    assert predicted < 1.0


def test_identity_with_known_population():
    n, t = 200, 400
    q = n / t
    rng = np.random.default_rng(7)
    z, c = spiked_window(n, t, [3.0, 6.0, 10.0], rng)
    lam = np.linalg.svd(z, compute_uv=False) ** 2 / t
    eta = n**-0.5
    lo, hi = mp_edges(q)
    checked = 0
    for l in lam:
        if not (lo + 3 * eta < l < hi - 3 * eta):
            continue
        g = deterministic_equivalent_g(l, c, q, inside=True)
        h, rho = g.real, g.imag / np.pi
        direct = shrinkage_formula(l, q, h, rho)
        composite = np.sum(c * oracle_overlap(l, c, q, h, rho)) / n
        assert abs(direct - composite) <= 1e-6 * abs(direct)
        checked += 1
    assert checked > 100


@pytest.mark.parametrize("spike", [1.0, 3.0, 10.0])
def test_identity_at_outliers(spike):
    # outside the bulk the overlap is a point mass on the spike direction
    q = 0.5
    lam = outlier_location(spike, q)
    g = complex(deterministic_equivalent_g(lam, np.zeros(1), q, inside=False))
    assert g.imag == 0.0
    direct = shrinkage_formula(lam, q, g.real, 0.0)
    assert abs(direct - spike * outlier_overlap(lam, spike, q)) <= 1e-12 * direct


def test_weak_spike_has_no_outlier():
    assert outlier_location(0.5, 0.5) is None


# reconstruction -----------------------------------------------------------------


def test_identity_shrinkage_reconstructs_input():
    z = np.random.default_rng(8).standard_normal((6, 10))
    spec = dilation_spectrum(z)
    assert np.max(np.abs(reconstruct_cleaned(spec.with_cleaned(spec.raw_sv)) - z)) < 1e-10


def test_zero_shrinkage_gives_zero():
    z = np.random.default_rng(9).standard_normal((4, 7))
    spec = dilation_spectrum(z)
    assert not reconstruct_cleaned(spec.with_cleaned(np.zeros(4))).any()


def test_truncated_svd_oracle():
    z = np.random.default_rng(10).standard_normal((5, 8))
    spec = dilation_spectrum(z)
    sv = spec.raw_sv.copy()
    sv[-1] = 0.0
    u, s, vt = np.linalg.svd(z)
    best = (u[:, :4] * s[:4]) @ vt[:4]
    assert np.max(np.abs(reconstruct_cleaned(spec.with_cleaned(sv)) - best)) < 1e-10


def test_reconstruct_checks_lengths():
    spec = dilation_spectrum(np.eye(3, 4))
    with pytest.raises(ValueError):
        reconstruct_cleaned(spec)
    with pytest.raises(ValueError):
        reconstruct_cleaned(CleanedSpectrum(spec.raw_sv, spec.left_basis, spec.right_basis, 0.75, 0.5, np.ones(2)))


def test_subspaces_preserved():
    rng = np.random.default_rng(11)
    z, _ = spiked_window(80, 160, [5.0, 9.0, 20.0], rng)
    res = clean_matrix(z)
    gamma = res.matrix()
    u0 = res.spectrum.left_basis[:, :3]
    u1 = np.linalg.svd(gamma)[0][:, :3]
    assert np.max(linalg.subspace_angles(u0, u1)) < 1e-10


def test_column_matches_full_matrix():
    z = np.random.default_rng(12).standard_normal((30, 50))
    res = clean_matrix(z)
    assert np.allclose(res.column(-1), res.matrix()[:, -1])


def test_preserve_trace_option():
    rng = np.random.default_rng(13)
    z, _ = spiked_window(60, 120, [4.0, 8.0], rng)
    res = clean_matrix(z, preserve_trace=True)
    assert res.xi.sum() == pytest.approx(res.eigenvalues.sum() - 60)


# windows --------------------------------------------------------------------------


def _window(n, t, h, sigma, noise, bias, rng):
    raw = h[:, None] + bias[:, None] + noise * sigma[:, None] * rng.standard_normal((n, t))
    return build_window(raw, NoiseSpec("gaussian", sigma, bias))


def test_clean_window_refuses_wide_windows():
    w = build_window(np.ones((5, 5)), NoiseSpec("gaussian", 1.0, 0.0))
    with pytest.raises(CleaningRefused):
        clean_window(w)


@pytest.mark.parametrize("t", [80, 48])
def test_noiseless_window_recovers_truth(t):
    n = 40
    rng = np.random.default_rng(14)
    h = rng.uniform(0.5, 2.0, n)
    wiggle = 1e-6
    raw = h[:, None] * (1 + wiggle * rng.standard_normal((1, t)))
    sigma = np.full(n, 0.01)
    w = build_window(raw, NoiseSpec("gaussian", sigma, 0.0))
    out = clean_window(w)
    assert np.max(np.abs(out - h)) < 10 * wiggle * h.max()


def test_cleaning_reduces_measurement_error(case30):
    _, _, plan, _, h = case30
    rng = np.random.default_rng(15)
    n = len(plan)
    t = round(1.2 * n)
    sigma = sigma_from_truth(h, plan, 0.05, 0.01)
    bias = rng.uniform(-0.03, 0.03, n)
    w = _window(n, t, h, sigma, 1.0, bias, rng)
    raw_err = np.mean(np.abs(w.current() - h))
    clean_err = np.mean(np.abs(clean_window(w) - h))
    assert clean_err < raw_err
    assert clean_err <= 0.5 * raw_err


def test_spectrum_diagnostics_columns():
    z = np.random.default_rng(16).standard_normal((20, 40))
    d = spectrum_diagnostics(z)
    assert set(d) == {"lambda", "h", "rho", "xi"}
    assert np.all(d["rho"] >= 0)
    assert np.all(np.diff(d["lambda"]) <= 0)
