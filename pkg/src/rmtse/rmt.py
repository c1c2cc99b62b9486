"""Random-matrix cleaning of a measurement window.

A window ``Z`` (N x T, N < T) of normalized measurements is modelled as
``Z = H + G`` with ``G`` i.i.d. zero mean, unit variance. The Hermitian
dilation ``[[0, Z], [Z^T, 0]]`` has eigenvalues ``+-s_i`` (the singular values
of ``Z``) plus ``|T - N|`` structural zeros, so shrinking the eigenvalues of
the sample covariance ``E = Z Z^T / T`` and mapping them back through
``s = sqrt(T * xi)`` cleans ``Z`` itself while keeping its singular vectors.

Internally ``q = N / T`` (in ``(0, 1]``); the window ratio ``T / N`` that the
experiment configs talk about is its reciprocal.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .noise import MeasurementWindow, denormalize

__all__ = [
    "CleanedSpectrum",
    "CleaningRefused",
    "CleaningResult",
    "DegeneratePointError",
    "StieltjesSample",
    "clean_eigenvalues",
    "clean_matrix",
    "clean_window",
    "dilation_matrix",
    "dilation_spectrum",
    "mp_cdf",
    "mp_density",
    "mp_edges",
    "oracle_overlap",
    "reconstruct_cleaned",
    "shrinkage_formula",
    "spectrum_diagnostics",
    "stieltjes_at",
]


class CleaningRefused(ValueError):
    """The window violates N < T; callers may fall back to uncleaned data."""


class DegeneratePointError(ZeroDivisionError):
    pass


@dataclass(frozen=True, eq=False)
class CleanedSpectrum:
    raw_sv: np.ndarray
    left_basis: np.ndarray
    right_basis: np.ndarray
    q_c: float
    eta: float
    cleaned_sv: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.left_basis.shape[0]

    @property
    def n_cols(self) -> int:
        return self.right_basis.shape[0]

    @property
    def covariance_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``Z Z^T / T`` (nonincreasing, zero-padded when N > T)."""
        lam = self.raw_sv**2 / self.n_cols
        return np.pad(lam, (0, self.n_rows - lam.size))

    def dilation_eigenvalues(self) -> np.ndarray:
        """Spectrum implied for the (N+T)-square dilation, ascending."""
        zeros = np.zeros(abs(self.n_cols - self.n_rows))
        return np.sort(np.concatenate([self.raw_sv, -self.raw_sv, zeros]))

    def with_cleaned(self, cleaned_sv: np.ndarray) -> "CleanedSpectrum":
        return replace(self, cleaned_sv=np.asarray(cleaned_sv, dtype=float))


@dataclass(frozen=True)
class StieltjesSample:
    lam: float
    h: float
    rho: float


@dataclass(frozen=True, eq=False)
class CleaningResult:
    spectrum: CleanedSpectrum
    eigenvalues: np.ndarray
    h: np.ndarray
    rho: np.ndarray
    xi: np.ndarray

    def matrix(self) -> np.ndarray:
        return reconstruct_cleaned(self.spectrum)

    def column(self, k: int = -1) -> np.ndarray:
        """One column of the cleaned matrix without forming all of it."""
        s = self.spectrum
        return s.left_basis @ (s.cleaned_sv * s.right_basis[k])


# --------------------------------------------------------------------------
# dilation


def dilation_matrix(z: np.ndarray) -> np.ndarray:
    """Dense ``[[0, Z], [Z^H, 0]]``; only for checks on small matrices."""
    n, t = z.shape
    d = np.zeros((n + t, n + t), dtype=z.dtype)
    d[:n, n:] = z
    d[n:, :n] = z.conj().T
    return d


def dilation_spectrum(z_matrix: np.ndarray, eta: float | None = None) -> CleanedSpectrum:
    z = np.asarray(z_matrix, dtype=float)
    if z.ndim != 2 or min(z.shape) < 2:
        raise ValueError("need a matrix with at least 2 rows and 2 columns")
    if not np.all(np.isfinite(z)):
        raise ValueError("window contains non-finite entries")
    n, t = z.shape
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    return CleanedSpectrum(
        raw_sv=s,
        left_basis=u,
        right_basis=vt.T,
        q_c=n / t,
        eta=float(eta) if eta is not None else n**-0.5,
    )


# --------------------------------------------------------------------------
# Stieltjes transform and Marchenko-Pastur law


def stieltjes_at(eigs, lam: float, eta: float, exclude: int | None = None) -> StieltjesSample:
    """``g(lam - i eta) = (1/N) sum 1 / (lam - i eta - l_j)``, split into h and rho.

    ``exclude`` drops one pole from the sum (the normalization stays 1/N).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    eigs = np.asarray(eigs, dtype=float)
    terms = 1.0 / ((lam - 1j * eta) - eigs)
    if exclude is not None:
        terms[exclude] = 0.0
    g = terms.sum() / eigs.size
    return StieltjesSample(float(lam), float(g.real), float(g.imag / np.pi))


def _stieltjes_self_excluded(eigs: np.ndarray, eta: float, chunk: int = 1024):
    n = eigs.size
    h = np.empty(n)
    rho = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = eigs[start:stop, None] - eigs[None, :]
        denom = diff * diff + eta * eta
        re = diff / denom
        im = eta / denom
        rows = np.arange(stop - start)
        re[rows, rows + start] = 0.0
        im[rows, rows + start] = 0.0
        h[start:stop] = re.sum(axis=1) / n
        rho[start:stop] = im.sum(axis=1) / (n * np.pi)
    return h, rho


def mp_edges(q: float, sigma: float = 1.0) -> tuple[float, float]:
    s2 = sigma * sigma
    return s2 * (1 - np.sqrt(q)) ** 2, s2 * (1 + np.sqrt(q)) ** 2


def mp_density(lam, q: float, sigma: float = 1.0):
    """Marchenko-Pastur density of ``G G^T / T`` for ratio ``q = N / T``.

    Integrates to 1 for ``q <= 1``; for ``q > 1`` the continuous part carries
    mass ``1 / q`` and the rest sits at zero.
    """
    if q <= 0 or sigma <= 0:
        raise ValueError("q and sigma must be positive")
    a, b = mp_edges(q, sigma)
    lam = np.asarray(lam, dtype=float)
    inside = (lam > a) & (lam < b)
    safe = np.where(inside, lam, 1.0)
    val = np.sqrt(np.clip((b - safe) * (safe - a), 0.0, None)) / (2 * np.pi * safe * q * sigma**2)
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def mp_cdf(lam, q: float, sigma: float = 1.0):
    """Cumulative distribution of :func:`mp_density` (atom at zero included for q > 1)."""
    a, b = mp_edges(q, sigma)
    atom = max(0.0, 1.0 - 1.0 / q)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    order = np.argsort(lam)
    out = np.empty_like(lam)
    acc, prev = atom, a
    for k in order:
        x = lam[k]
        if x < 0:
            out[k] = 0.0
            continue
        hi = min(max(x, a), b)
        if hi > prev:
            acc += integrate.quad(mp_density, prev, hi, args=(q, sigma), limit=200)[0]
            prev = hi
        out[k] = min(acc, 1.0)
    return out


# --------------------------------------------------------------------------
# eigenvalue cleaning


def shrinkage_formula(lam, q: float, h, rho):
    """Cleaned covariance eigenvalue from ``lam`` and the Stieltjes terms at ``lam``.

    Derived for ``E = (H + G)(H + G)^T / T`` with unit-variance noise; ``h``
    and ``rho`` are the real part and the density from ``g(lam - i 0+)``.
    """
    lam, h, rho = (np.asarray(a, dtype=float) for a in (lam, h, rho))
    pr2 = (np.pi * rho) ** 2
    phi = 1.0 - h * (lam - (1.0 - q)) - q * lam * (pr2 - h * h)
    return (1.0 - q * h) * (lam - (1.0 - q) - 2.0 * q * lam * h) + q * phi


def clean_eigenvalues(eigs, q: float, eta: float | None = None, *, return_terms: bool = False):
    """Shrink the eigenvalues of ``E = Z Z^T / T``; negative outputs clip to 0.

    The Stieltjes transform at each eigenvalue excludes that eigenvalue's own
    pole. ``eta`` defaults to ``N ** -0.5``.
    """
    if not 0 < q <= 1:
        raise ValueError(f"q = N/T must lie in (0, 1], got {q}")
    eigs = np.asarray(eigs, dtype=float)
    if not np.all(np.isfinite(eigs)):
        raise ValueError("eigenvalues must be finite")
    if np.any(eigs < -1e-12 * max(1.0, float(np.max(np.abs(eigs))))):
        raise ValueError("eigenvalues must be non-negative")
    eigs = np.clip(eigs, 0.0, None)
    if eta is None:
        eta = eigs.size**-0.5
    h, rho = _stieltjes_self_excluded(eigs, eta)
    xi = shrinkage_formula(eigs, q, h, rho)
    if not np.all(np.isfinite(xi)):
        raise FloatingPointError("non-finite cleaned eigenvalues")
    xi = np.clip(xi, 0.0, None)
    if return_terms:
        return xi, h, rho
    return xi


def oracle_overlap(lam, c, q: float, h, rho):
    """``N * E[(v . u)^2]`` for a sample eigenvector at ``lam`` and a population one at ``c``.

    Computed from the deterministic equivalent of the resolvent,
    ``G(z) ~ (z Z - (1 - q) - C / Z)^-1`` with ``Z = 1 - q g(z)``, at
    ``z = lam`` and ``g = h + i pi rho``. Summing ``c_j`` times this over
    the population spectrum (divided by N) gives :func:`shrinkage_formula`
    whenever ``g`` solves the matching self-consistent equation.
    """
    lam, c, h, rho = (np.asarray(a, dtype=float) for a in (lam, c, h, rho))
    a = 1.0 - q * h
    b = q * np.pi * rho
    alpha = a * a + b * b
    gamma = b * (lam * alpha + c)
    beta = a * (lam * alpha - c) - (1.0 - q) * alpha
    den = beta * beta + gamma * gamma
    if np.any(den == 0):
        raise DegeneratePointError("overlap denominator vanishes")
    return q * alpha * (lam * alpha + c) / den


def reconstruct_cleaned(spectrum: CleanedSpectrum) -> np.ndarray:
    if spectrum.cleaned_sv is None:
        raise ValueError("spectrum has no cleaned singular values")
    if spectrum.cleaned_sv.shape != spectrum.raw_sv.shape:
        raise ValueError("cleaned/raw singular value lengths differ")
    return (spectrum.left_basis * spectrum.cleaned_sv) @ spectrum.right_basis.T


def clean_matrix(z_matrix: np.ndarray, eta: float | None = None, preserve_trace: bool = False) -> CleaningResult:
    """Full cleaning of a normalized window matrix (requires N < T).

    With ``preserve_trace`` the cleaned eigenvalues are rescaled so their sum
    equals ``tr(E) - N``, the unbiased estimate of ``tr(C)``.
    """
    z = np.asarray(z_matrix, dtype=float)
    n, t = z.shape
    if n >= t:
        raise CleaningRefused(f"cleaning needs N < T, window is {n} x {t}")
    spec = dilation_spectrum(z, eta)
    lam = spec.raw_sv**2 / t
    xi, h, rho = clean_eigenvalues(lam, spec.q_c, spec.eta, return_terms=True)
    if preserve_trace and xi.sum() > 0:
        xi = xi * max(lam.sum() - n, 0.0) / xi.sum()
    spec = spec.with_cleaned(np.sqrt(t * xi))
    return CleaningResult(spec, lam, h, rho, xi)


def clean_window(
    window: MeasurementWindow,
    eta: float | None = None,
    preserve_trace: bool = False,
    *,
    return_result: bool = False,
):
    """Cleaned current measurement vector in p.u.

    Normalization removes the bias along with the noise, so the cleaned
    column estimates ``h / sigma`` and maps back by ``sigma`` alone. With
    ``return_result`` the :class:`CleaningResult` comes back as well.
    """
    n, t = window.shape
    if n >= t:
        raise CleaningRefused(f"cleaning needs N < T, window is {n} x {t}")
    res = clean_matrix(window.z_matrix, eta, preserve_trace)
    col = res.column(-1)
    if not np.all(np.isfinite(col)):
        raise FloatingPointError("cleaning produced non-finite entries")
    out = denormalize(col, np.zeros_like(window.bias), window.sigma)
    return (out, res) if return_result else out


def spectrum_diagnostics(z_matrix: np.ndarray, eta: float | None = None) -> dict[str, np.ndarray]:
    """Per-eigenvalue table ``lambda, h, rho, xi`` for plotting."""
    res = clean_matrix(z_matrix, eta)
    return {"lambda": res.eigenvalues, "h": res.h, "rho": res.rho, "xi": res.xi}
