"""Measurement-error models, per-variable normalization and window assembly.

Every model is sampled at zero mean and unit variance and then scaled by the
per-variable standard deviation, so ``error = bias + sigma * standard_noise``.
The scale coefficients per model for a target standard deviation ``sigma``:

============  =====================================
gaussian      ``b = sigma``
laplace       ``b = sigma / sqrt(2)``
semicircle    radius ``a = 2 sigma``
linear        half-width ``a = sqrt(6) sigma`` (symmetric triangular)
nig           ``alpha = delta = 1, beta = mu = 0`` then times ``sigma``
============  =====================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import k1e

from .powerflow import MeasurementPlan

__all__ = [
    "MODELS",
    "MeasurementWindow",
    "NoiseSpec",
    "build_window",
    "denormalize",
    "draw_bias",
    "load_window",
    "nig_pdf",
    "noise_coefficients",
    "normalize",
    "sample_noise",
    "save_window",
    "sigma_from_truth",
    "standard_noise",
]

MODELS = ("gaussian", "laplace", "semicircle", "linear", "nig")
_ALIASES = {"sc": "semicircle", "sl": "linear", "symmetric_linear": "linear", "symmetriclinear": "linear"}

SIGMA_FLOOR = 1e-4


def _model(name: str) -> str:
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in MODELS:
        raise ValueError(f"unknown noise model {name!r}")
    return key


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    model: str
    sigma: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "model", _model(self.model))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        bias = np.broadcast_to(np.asarray(self.bias, dtype=float), sigma.shape).copy()
        if np.any(~(sigma > 0)):
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "bias", bias)


def noise_coefficients(model: str, sigma: float) -> dict[str, float]:
    """Distribution parameters that give standard deviation ``sigma``."""
    model = _model(model)
    if model == "gaussian":
        return {"mu": 0.0, "b": sigma}
    if model == "laplace":
        return {"mu": 0.0, "b": sigma / np.sqrt(2.0)}
    if model == "semicircle":
        return {"a": 2.0 * sigma}
    if model == "linear":
        return {"a": np.sqrt(6.0) * sigma}
    return {"alpha": 1.0, "beta": 0.0, "delta": 1.0, "mu": 0.0, "scale": sigma}


def nig_pdf(x, alpha=1.0, beta=0.0, delta=1.0, mu=0.0):
    """Normal-inverse Gaussian density, ``|beta| < alpha``."""
    if not abs(beta) < alpha:
        raise ValueError("NIG requires |beta| < alpha")
    gamma = np.sqrt(alpha**2 - beta**2)
    d = np.asarray(x, dtype=float) - mu
    r = np.sqrt(delta**2 + d**2)
    # k1e(z) = K1(z) exp(z) keeps the tails finite
    return alpha * delta * k1e(alpha * r) / (np.pi * r) * np.exp(delta * gamma + beta * d - alpha * r)


def standard_noise(model: str, size, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance draws from ``model``."""
    model = _model(model)
    if model == "gaussian":
        return rng.standard_normal(size)
    if model == "laplace":
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size)
    if model == "semicircle":
        return 2.0 * (2.0 * rng.beta(1.5, 1.5, size) - 1.0)
    if model == "linear":
        a = np.sqrt(6.0)
        return rng.triangular(-a, 0.0, a, size)
    # normal variance-mean mixture with an inverse-Gaussian mixing variable
    mixing = rng.wald(1.0, 1.0, size)
    return np.sqrt(mixing) * rng.standard_normal(size)


def sample_noise(spec: NoiseSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` error values; sigma/bias of length 1 broadcast, otherwise len must be n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.sigma.size not in (1, n):
        raise ValueError(f"spec describes {spec.sigma.size} variables, asked for {n}")
    return spec.bias + spec.sigma * standard_noise(spec.model, n, rng)


def sigma_from_truth(
    truth: np.ndarray,
    plan: MeasurementPlan,
    flow_pct: float,
    vm_pct: float,
    floor: float = SIGMA_FLOOR,
    mode: str = "std_fraction",
) -> np.ndarray:
    """Per-variable error standard deviation from the true measured values.

    ``std_fraction`` uses ``pct * |h|``; ``variance_fraction`` treats the
    percentage as a fraction of the value that the variance equals.
    """
    pct = np.where(np.asarray(plan.kinds) == "Vm", vm_pct, flow_pct)
    mag = np.abs(truth)
    if mode == "std_fraction":
        sigma = pct * mag
    elif mode == "variance_fraction":
        sigma = np.sqrt(pct * mag)
    else:
        raise ValueError(f"unknown sigma mode {mode!r}")
    return np.maximum(sigma, floor)


def draw_bias(n: int, rng: np.random.Generator, bias_range: float = 0.03) -> np.ndarray:
    return rng.uniform(-bias_range, bias_range, n)


def normalize(z, bias, sigma) -> np.ndarray:
    z, bias, sigma = (np.asarray(a, dtype=float) for a in (z, bias, sigma))
    if z.shape[0] != bias.shape[0] or z.shape[0] != sigma.shape[0]:
        raise ValueError("dimension mismatch")
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be positive")
    if z.ndim == 2:
        return (z - bias[:, None]) / sigma[:, None]
    return (z - bias) / sigma


def denormalize(zn, bias, sigma) -> np.ndarray:
    zn, bias, sigma = (np.asarray(a, dtype=float) for a in (zn, bias, sigma))
    if zn.shape[0] != bias.shape[0] or zn.shape[0] != sigma.shape[0]:
        raise ValueError("dimension mismatch")
    if zn.ndim == 2:
        return zn * sigma[:, None] + bias[:, None]
    return zn * sigma + bias


@dataclass(frozen=True, eq=False)
class MeasurementWindow:
    """N x T normalized measurements; the last column is the current sample."""

    z_matrix: np.ndarray
    sigma: np.ndarray
    bias: np.ndarray
    plan: MeasurementPlan | None = None

    def __post_init__(self):
        n = self.z_matrix.shape[0]
        if self.sigma.shape != (n,) or self.bias.shape != (n,):
            raise ValueError("sigma/bias length must equal the number of rows")
        if self.plan is not None and len(self.plan) != n:
            raise ValueError("plan length must equal the number of rows")
        self.z_matrix.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.z_matrix.shape

    @property
    def ratio(self) -> float:
        """Columns per row, T / N."""
        n, t = self.shape
        return t / n

    def current(self) -> np.ndarray:
        """Current raw measurement vector."""
        return denormalize(self.z_matrix[:, -1], self.bias, self.sigma)

    def rows(self, idx: np.ndarray) -> "MeasurementWindow":
        plan = None
        if self.plan is not None:
            plan = MeasurementPlan(tuple(self.plan.kinds[i] for i in idx), self.plan.index[idx])
        return MeasurementWindow(self.z_matrix[idx], self.sigma[idx], self.bias[idx], plan)


def build_window(histories, spec: NoiseSpec, plan: MeasurementPlan | None = None) -> MeasurementWindow:
    """Normalize T raw vectors (oldest first) into a window.

    ``histories`` may be a sequence of vectors or an N x T array.
    """
    if isinstance(histories, np.ndarray) and histories.ndim == 2:
        raw = np.array(histories, dtype=float)
    else:
        cols = [np.asarray(h, dtype=float) for h in histories]
        if len({c.shape for c in cols}) > 1:
            raise ValueError("ragged measurement histories")
        raw = np.column_stack(cols)
    if raw.shape[1] < 2:
        raise ValueError("a window needs at least two samples")
    n = raw.shape[0]
    sigma = np.broadcast_to(spec.sigma, (n,)).astype(float)
    bias = np.broadcast_to(spec.bias, (n,)).astype(float)
    return MeasurementWindow(normalize(raw, bias, sigma), sigma, bias, plan)


def save_window(window: MeasurementWindow, path, seed: int | None = None) -> Path:
    """Write the matrix (``.npy`` or ``.csv`` by suffix) plus a ``.json`` sidecar."""
    path = Path(path)
    if path.suffix == ".csv":
        np.savetxt(path, window.z_matrix, delimiter=",", fmt="%.17e")
    else:
        path = path.with_suffix(".npy")
        np.save(path, window.z_matrix)
    meta = {
        "shape": list(window.shape),
        "sigma": window.sigma.tolist(),
        "bias": window.bias.tolist(),
        "seed": seed,
        "plan_hash": window.plan.digest() if window.plan is not None else None,
        "plan": window.plan.to_dict() if window.plan is not None else None,
    }
    path.with_suffix(".json").write_text(json.dumps(meta))
    return path


def load_window(path) -> MeasurementWindow:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if path.suffix == ".csv":
        z = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        z = np.load(path)
    plan = MeasurementPlan.from_dict(meta["plan"]) if meta.get("plan") else None
    if plan is not None and meta.get("plan_hash") and plan.digest() != meta["plan_hash"]:
        raise ValueError("window sidecar plan hash does not match its plan")
    return MeasurementWindow(z, np.asarray(meta["sigma"]), np.asarray(meta["bias"]), plan)
