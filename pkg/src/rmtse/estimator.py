"""Weighted-least-squares state estimation and the two-stage clean-then-estimate pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .grid import AdmittanceMatrix, GridCase, build_admittance
from .noise import MeasurementWindow
from .powerflow import MeasurementPlan, OperatingState, measurement_function, measurement_jacobian
from .rmt import clean_window

__all__ = [
    "StateEstimate",
    "UnobservableError",
    "WlsConfig",
    "error_decomposition",
    "rwls_estimate",
    "state_mae",
    "wls_estimate",
]


class UnobservableError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class WlsConfig:
    """Gauss-Newton settings.

    ``init`` is ``"random"`` (magnitudes ~ N(vm_mean, vm_std), angles ~
    N(va_mean, va_std)), ``"flat"`` or an :class:`OperatingState`. Random
    starts on large grids can settle in a spurious local minimum of the
    objective, so with ``flat_companion`` a flat start is also run and the
    converged run with the lower objective is kept.
    """

    tol: float = 1e-6
    max_iter: int = 50
    init: str | OperatingState = "random"
    vm_mean: float = 1.0
    vm_std: float = 0.05
    va_mean: float = 0.0
    va_std: float = 0.157
    max_halvings: int = 10
    pivot_tol: float = 1e-10
    flat_companion: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.vm_std < 0 or self.va_std < 0:
            raise ValueError("initialization spreads must be non-negative")


@dataclass(frozen=True, eq=False)
class StateEstimate:
    state: OperatingState
    iterations: int
    converged: bool
    objective: float
    residual: np.ndarray
    weights: np.ndarray
    measurements: np.ndarray
    stages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "vm": self.state.vm.tolist(),
            "va": self.state.va.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "objective": self.objective,
        }


def _initial_state(case: GridCase, cfg: WlsConfig, rng) -> OperatingState:
    n = case.n_bus
    if isinstance(cfg.init, OperatingState):
        vm, va = cfg.init.vm.copy(), cfg.init.va.copy()
    elif cfg.init == "flat":
        vm, va = np.ones(n), np.zeros(n)
    elif cfg.init == "random":
        rng = rng if rng is not None else np.random.default_rng()
        vm = rng.normal(cfg.vm_mean, cfg.vm_std, n)
        va = rng.normal(cfg.va_mean, cfg.va_std, n)
        vm = np.abs(vm)
    else:
        raise ValueError(f"unknown init {cfg.init!r}")
    va[case.slack] = case.buses[case.slack].va
    return OperatingState(vm, va)


def _solve_gain(h, w, r, pivot_tol):
    hw = h.multiply(w[:, None]).tocsr()
    gain = (h.T @ hw).toarray()
    rhs = hw.T @ r
    d = np.sqrt(np.diag(gain))
    if np.any(d == 0):
        raise UnobservableError("gain matrix has an empty row (unobservable state)")
    scaled = gain / d[:, None] / d[None, :]
    try:
        chol = la.cholesky(scaled, lower=True)
    except la.LinAlgError:
        raise UnobservableError("gain matrix is not positive definite") from None
    if np.min(np.diag(chol)) ** 2 < pivot_tol:
        raise UnobservableError("gain matrix is numerically singular")
    y = la.cho_solve((chol, True), rhs / d)
    return y / d


def wls_estimate(
    case: GridCase,
    plan: MeasurementPlan,
    z: np.ndarray,
    sigma: np.ndarray,
    cfg: WlsConfig | None = None,
    rng: np.random.Generator | None = None,
    adm: AdmittanceMatrix | None = None,
    bias: np.ndarray | None = None,
) -> StateEstimate:
    """Gauss-Newton WLS with ``W = diag(1 / sigma^2)``.

    Plain WLS knows nothing about measurement bias; pass ``bias`` to
    subtract a known bias first. Steps that raise the objective are halved
    up to ``cfg.max_halvings`` times. Failure to converge is reported
    through ``converged``; ``stages["start"]`` names the winning start.
    """
    cfg = cfg or WlsConfig()
    adm = adm or build_admittance(case)
    z = np.asarray(z, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if z.shape != (len(plan),) or sigma.shape != z.shape:
        raise ValueError("z and sigma must match the plan length")
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be positive")
    if bias is not None:
        z = z - bias
    n_state = 2 * case.n_bus - 1
    if len(plan) < n_state:
        raise UnobservableError(f"{len(plan)} measurements for {n_state} states")
    w = 1.0 / sigma**2
    best = _gauss_newton(case, plan, adm, z, w, cfg, _initial_state(case, cfg, rng))
    start = cfg.init if isinstance(cfg.init, str) else "given"
    if cfg.init == "random" and cfg.flat_companion:
        flat = _gauss_newton(case, plan, adm, z, w, cfg, _initial_state(case, replace(cfg, init="flat"), None))
        # prefer a converged run, then the lower objective
        if (flat[2], -flat[4]) > (best[2], -best[4]):
            best, start = flat, "flat"
    x, it, converged, r, obj = best
    return StateEstimate(
        state=x,
        iterations=it,
        converged=converged,
        objective=obj,
        residual=r,
        weights=w,
        measurements=z,
        stages={"start": start},
    )


def _gauss_newton(case, plan, adm, z, w, cfg, x):
    n, slack = case.n_bus, case.slack
    keep = np.r_[np.arange(slack), np.arange(slack + 1, n)]
    r = z - measurement_function(x, plan, adm)
    obj = float(w @ (r * r))
    converged = False
    it = 0
    while it < cfg.max_iter:
        jac = measurement_jacobian(x, plan, adm, slack)
        dx = _solve_gain(jac, w, r, cfg.pivot_tol)
        it += 1
        small = np.max(np.abs(dx)) < cfg.tol
        step = 1.0
        for _ in range(cfg.max_halvings + 1):
            va = x.va.copy()
            vm = x.vm + step * dx[n - 1:]
            va[keep] += step * dx[: n - 1]
            if np.all(vm > 0):
                trial = OperatingState(vm, va)
                r_new = z - measurement_function(trial, plan, adm)
                obj_new = float(w @ (r_new * r_new))
                if small or obj_new <= obj:
                    break
            step *= 0.5
        else:
            break
        x, r, obj = trial, r_new, obj_new
        if small:
            converged = True
            break
    # angles are only defined modulo 2 pi; report them next to the reference
    ref = x.va[slack]
    va = ref + np.angle(np.exp(1j * (x.va - ref)))
    return OperatingState(x.vm, va), it, converged, r, obj


def rwls_estimate(
    case: GridCase,
    plan: MeasurementPlan,
    window: MeasurementWindow,
    cfg: WlsConfig | None = None,
    rng: np.random.Generator | None = None,
    adm: AdmittanceMatrix | None = None,
    cleaner=clean_window,
) -> StateEstimate:
    """Clean the window, then run WLS on the cleaned current vector.

    ``cleaner`` maps a window to an estimate of the true current values in
    p.u.; the weights are the window's own sigma, unchanged by cleaning.
    """
    cleaned = cleaner(window)
    est = wls_estimate(case, plan, cleaned, window.sigma, cfg, rng, adm)
    est.stages.update(cleaned=cleaned, raw=window.current())
    return est


def state_mae(estimate: OperatingState, truth: OperatingState) -> float:
    """MAE over ``[vm; va]`` of all buses (the pinned slack angle counts as a zero error)."""
    return float(np.mean(np.abs(estimate.as_vector() - truth.as_vector())))


def error_decomposition(z, h_true, h_hat, weights) -> dict:
    """Residual, measurement error and estimated error, with weighted l1/l2 sizes.

    ``r = z - h_hat``, ``e = z - h_true``, ``R_e = h_hat - h_true``.
    """
    z, h_true, h_hat, weights = (np.asarray(a, dtype=float) for a in (z, h_true, h_hat, weights))
    if not (z.shape == h_true.shape == h_hat.shape == weights.shape):
        raise ValueError("all inputs must have equal length")
    r = z - h_hat
    e = z - h_true
    re = h_hat - h_true
    out = {"residual": r, "measurement_error": e, "estimated_error": re}
    for name, vec in (("estimated_error", re), ("residual", r), ("measurement_error", e)):
        wv = weights * vec
        out[f"l1_{name}"] = float(np.sum(np.abs(wv)))
        out[f"l2_{name}"] = float(np.linalg.norm(wv))
    return out
