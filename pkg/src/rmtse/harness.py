"""Seeded experiment runner: synthetic measurement windows, WLS vs. clean-then-WLS.

Every trial draws from two streams derived from the master seed::

    noise stream  SeedSequence(seed, spawn_key=(trial, 0))
    init stream   SeedSequence(seed, spawn_key=(trial, 1, step))

The noise stream is consumed in a fixed order: the per-variable bias, the
current sample's noise, then the historical columns (row-major). Settings of
a sweep share the streams of a trial, so the bias and the current sample are
the same across ``r`` values, noise models and variance errors; only the
history grows or shrinks. Both estimators start from the same initial guess.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .estimator import WlsConfig, error_decomposition, rwls_estimate, state_mae, wls_estimate
from .grid import GridCase, build_admittance, load_case
from .noise import MODELS, MeasurementWindow, NoiseSpec, build_window, draw_bias, sigma_from_truth, standard_noise
from .powerflow import KINDS, OperatingState, full_scada_plan, measurement_function, power_mismatch, solve_power_flow
from .rmt import CleaningRefused, clean_window, mp_edges

__all__ = [
    "BASELINE_COLUMNS",
    "ExperimentConfig",
    "ExperimentReport",
    "LoadProfile",
    "NoiseConfig",
    "SCENARIOS",
    "emit_report",
    "inc_rat",
    "load_config",
    "load_report",
    "mae",
    "run_baseline",
    "run_divided",
    "run_experiment",
    "run_noise_models",
    "run_q_sweep",
    "run_time_varying",
    "run_variance_error",
    "strip_timing",
]

SCENARIOS = ("baseline", "q_sweep", "noise_models", "divided", "time_varying", "variance_error")
DESK_SCALE_BUSES = 300

BASELINE_COLUMNS = ("trial", "seed", "wls_mae", "rwls_mae", "meas_mae_raw", "meas_mae_clean", "iters", "wall_ms")
ROW_COLUMNS = BASELINE_COLUMNS + (
    "setting",
    "value",
    "status",
    "wls_iters",
    "wls_converged",
    "rwls_converged",
    "wls_debiased_mae",
    "meas_mae_raw_debiased",
    "wls_l1_estimated_error",
    "wls_l1_residual",
    "wls_l1_measurement_error",
    "wls_l2_estimated_error",
    "wls_l2_residual",
    "wls_l2_measurement_error",
    "rwls_l1_estimated_error",
    "rwls_l1_residual",
    "rwls_l1_measurement_error",
    "rwls_l2_estimated_error",
    "rwls_l2_residual",
    "rwls_l2_measurement_error",
)
AGGREGATE_COLUMNS = (
    "setting",
    "value",
    "n_trials",
    "n_failed",
    "n_refused",
    "wls_mae",
    "rwls_mae",
    "inc_rat",
    "meas_mae_raw",
    "meas_mae_clean",
    "wls_debiased_mae",
    "meas_mae_raw_debiased",
    "iters",
    "degraded",
)
PER_KIND_COLUMNS = ("setting", "kind", "meas_raw", "meas_clean", "wls_estimate", "rwls_estimate")
SPECTRUM_COLUMNS = ("lambda", "h", "rho", "xi")
RESIDUAL_COLUMNS = ("kind", "index", "wls_residual", "wls_estimated_error", "rwls_residual", "rwls_estimated_error")
TIMING_FIELDS = ("wall_ms", "timings")

_MEANED = ("wls_mae", "rwls_mae", "meas_mae_raw", "meas_mae_clean", "wls_debiased_mae", "meas_mae_raw_debiased", "iters")


def mae(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("mae of empty vectors")
    return float(np.mean(np.abs(a - b)))


def inc_rat(wls: float, rwls: float) -> float:
    """Relative improvement ``(wls - rwls) / wls``."""
    return (wls - rwls) / wls


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class NoiseConfig:
    model: str = "gaussian"
    flow_pct: float = 0.05
    vm_pct: float = 0.01
    bias_range: float = 0.03
    sigma_mode: str = "std_fraction"

    def __post_init__(self):
        if self.flow_pct < 0 or self.vm_pct < 0 or self.bias_range < 0:
            raise ValueError("noise percentages and bias range must be non-negative")


@dataclass(frozen=True)
class LoadProfile:
    """Active-load multiplier ``1 + amplitude * shape(t)`` at one bus.

    ``ramp`` rises linearly from 0 to 1 over the simulated horizon, ``sine``
    is ``sin(2 pi t / period)``, ``constant`` is 0.
    """

    bus: int
    shape: str = "ramp"
    amplitude: float = 0.2
    period: float = 500.0

    def __post_init__(self):
        if self.shape not in ("ramp", "sine", "constant"):
            raise ValueError(f"unknown load shape {self.shape!r}")
        if self.period <= 0:
            raise ValueError("period must be positive")

    def factor(self, n_steps: int) -> np.ndarray:
        t = np.arange(n_steps, dtype=float)
        if self.shape == "ramp":
            s = t / max(n_steps - 1, 1)
        elif self.shape == "sine":
            s = np.sin(2 * np.pi * t / self.period)
        else:
            s = np.zeros(n_steps)
        return 1.0 + self.amplitude * s


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "case30"
    scenario: str = "baseline"
    noise: NoiseConfig = NoiseConfig()
    window_ratio: float = 1.2
    trials: int = 10
    seed: int = 0
    wls: dict = field(default_factory=dict)
    eta: float | None = None
    q_list: tuple = (0.5, 1.2, 4.0, 8.0, 20.0)
    models: tuple = MODELS
    variance_ratios: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    variance_sign: str = "plus"
    groups: tuple = tuple((k,) for k in KINDS)
    profile: tuple = ()
    steps: int = 10
    workers: int = 1
    extended: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.window_ratio > 0 or any(not r > 0 for r in self.q_list):
            raise ValueError("window ratios must be positive")
        if self.steps < 1 or self.workers < 1:
            raise ValueError("steps and workers must be >= 1")
        if self.variance_sign not in ("plus", "minus", "random"):
            raise ValueError("variance_sign must be plus, minus or random")
        if any(r < 0 for r in self.variance_ratios):
            raise ValueError("variance ratios must be non-negative")
        WlsConfig(**self.wls)  # fail early on bad keys
        # normalise containers so equal configs compare and serialise equally
        object.__setattr__(self, "q_list", tuple(float(r) for r in self.q_list))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "variance_ratios", tuple(float(r) for r in self.variance_ratios))
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))
        object.__setattr__(
            self, "profile", tuple(p if isinstance(p, LoadProfile) else LoadProfile(**p) for p in self.profile)
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if "noise" in d and not isinstance(d["noise"], NoiseConfig):
            d["noise"] = NoiseConfig(**d["noise"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q_list"] = list(self.q_list)
        d["models"] = list(self.models)
        d["variance_ratios"] = list(self.variance_ratios)
        d["groups"] = [list(g) for g in self.groups]
        d["profile"] = [asdict(p) for p in self.profile]
        return d


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a YAML (or JSON) config; non-``None`` overrides replace top-level keys."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


# --------------------------------------------------------------------------
# report


@dataclass
class ExperimentReport:
    scenario: str
    config: dict
    rows: list = field(default_factory=list)
    aggregate: list = field(default_factory=list)
    per_kind: list = field(default_factory=list)
    spectrum: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False)

    def summary(self, setting: str | None = None) -> dict:
        for a in self.aggregate:
            if setting is None or a["setting"] == setting:
                return a
        raise KeyError(setting)


def strip_timing(d):
    """Copy of a report dict without wall-clock fields (for determinism checks)."""
    if isinstance(d, dict):
        return {k: strip_timing(v) for k, v in d.items() if k not in TIMING_FIELDS}
    if isinstance(d, list):
        return [strip_timing(v) for v in d]
    return d


def load_report(path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text()))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17e}"
    return str(v)


def csv_table(columns, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_fmt(rec.get(c)) for c in columns])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> Path:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def emit_report(report: ExperimentReport, fmt: str, path) -> list[Path]:
    """Write ``report.json`` or the CSV set into directory ``path``.

    CSV output is ``trials.csv``, ``aggregate.csv``, ``per_kind.csv``,
    ``spectrum.csv`` and ``residuals.csv``; numbers are written in full
    precision scientific notation.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        return [write_atomic(out / "report.json", report.to_json() + "\n")]
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    spec_rows = [dict(zip(SPECTRUM_COLUMNS, vals)) for vals in zip(*(report.spectrum.get(c, []) for c in SPECTRUM_COLUMNS))]
    files = {
        "trials.csv": (ROW_COLUMNS, report.rows),
        "aggregate.csv": (AGGREGATE_COLUMNS, report.aggregate),
        "per_kind.csv": (PER_KIND_COLUMNS, report.per_kind),
        "spectrum.csv": (SPECTRUM_COLUMNS, spec_rows),
        "residuals.csv": (RESIDUAL_COLUMNS, report.residuals),
    }
    return [write_atomic(out / name, csv_table(cols, recs)) for name, (cols, recs) in files.items()]


# --------------------------------------------------------------------------
# trial machinery


@dataclass(frozen=True, eq=False)
class _Context:
    case: GridCase
    adm: object
    plan: object
    state: OperatingState
    truth: np.ndarray
    sigma: np.ndarray
    scale: np.ndarray  # std of the generated noise; 0 on noiseless kinds
    wls: WlsConfig


def _context(cfg: ExperimentConfig, noise: NoiseConfig | None = None) -> _Context:
    noise = noise or cfg.noise
    case = load_case(cfg.case)
    if case.n_bus > DESK_SCALE_BUSES and not cfg.extended:
        raise ValueError(f"{case.name} has {case.n_bus} buses; cases above {DESK_SCALE_BUSES} need extended mode")
    adm = build_admittance(case)
    state = solve_power_flow(case, adm).state
    plan = full_scada_plan(case)
    truth = measurement_function(state, plan, adm)
    sigma = sigma_from_truth(truth, plan, noise.flow_pct, noise.vm_pct, mode=noise.sigma_mode)
    pct = np.where(np.asarray(plan.kinds) == "Vm", noise.vm_pct, noise.flow_pct)
    scale = np.where(pct > 0, sigma, 0.0)
    return _Context(case, adm, plan, state, truth, sigma, scale, WlsConfig(**cfg.wls))


def _streams(seed: int, trial: int, step: int = 0):
    noise = np.random.SeedSequence(seed, spawn_key=(trial, 0))
    init = np.random.SeedSequence(seed, spawn_key=(trial, 1, step))
    return np.random.default_rng(noise), init


def _n_cols(ratio: float, n: int) -> int:
    return max(2, int(round(ratio * n)))


def _draw(ctx: _Context, rng, n_cols: int, noise: NoiseConfig, truth_cols=None):
    """Raw N x n_cols measurements (current sample last) and the bias used."""
    n = len(ctx.plan)
    bias = draw_bias(n, rng, noise.bias_range)
    current = standard_noise(noise.model, n, rng)
    history = standard_noise(noise.model, (n, n_cols - 1), rng)
    err = np.column_stack([history, current]) * ctx.scale[:, None] + bias[:, None]
    truth = ctx.truth[:, None] if truth_cols is None else truth_cols
    return truth + err, bias


def _decomp(prefix: str, z, truth, h_hat, weights) -> dict:
    d = error_decomposition(z, truth, h_hat, weights)
    return {
        f"{prefix}_{norm}_{name}": d[f"{norm}_{name}"]
        for norm in ("l1", "l2")
        for name in ("estimated_error", "residual", "measurement_error")
    }


def _evaluate(ctx: _Context, window: MeasurementWindow, init_seed, truth, state, cleaner, sigma=None) -> dict:
    """Run WLS on the raw current sample and clean-then-WLS on the window."""
    sigma = window.sigma if sigma is None else sigma
    t0 = time.perf_counter()
    z = window.current()
    wls = wls_estimate(ctx.case, ctx.plan, z, sigma, ctx.wls, np.random.default_rng(init_seed), ctx.adm)
    debiased = wls_estimate(
        ctx.case, ctx.plan, z, sigma, ctx.wls, np.random.default_rng(init_seed), ctx.adm, bias=window.bias
    )
    status = "ok"
    try:
        rwls = rwls_estimate(ctx.case, ctx.plan, window, ctx.wls, np.random.default_rng(init_seed), ctx.adm, cleaner)
        cleaned = rwls.stages["cleaned"]
    except CleaningRefused:
        # too few samples for cleaning: fall back to plain WLS
        rwls, cleaned, status = wls, z, "refused"
    wall = (time.perf_counter() - t0) * 1e3

    h_wls = measurement_function(wls.state, ctx.plan, ctx.adm)
    h_rwls = measurement_function(rwls.state, ctx.plan, ctx.adm)
    row = {
        "wls_mae": state_mae(wls.state, state),
        "rwls_mae": state_mae(rwls.state, state),
        "meas_mae_raw": mae(z, truth),
        "meas_mae_clean": mae(cleaned, truth),
        "iters": rwls.iterations,
        "wall_ms": wall,
        "status": status,
        "wls_iters": wls.iterations,
        "wls_converged": wls.converged,
        "rwls_converged": rwls.converged,
        "wls_debiased_mae": state_mae(debiased.state, state),
        "meas_mae_raw_debiased": mae(z - window.bias, truth),
    }
    row.update(_decomp("wls", z, truth, h_wls, wls.weights))
    row.update(_decomp("rwls", cleaned, truth, h_rwls, rwls.weights))
    kinds = {}
    for k, idx in ctx.plan.groups().items():
        kinds[k] = (
            mae(z[idx], truth[idx]),
            mae(cleaned[idx], truth[idx]),
            mae(h_wls[idx], truth[idx]),
            mae(h_rwls[idx], truth[idx]),
        )
    extra = {
        "kinds": kinds,
        "residuals": (z - h_wls, h_wls - truth, cleaned - h_rwls, h_rwls - truth),
    }
    return {"row": row, "extra": extra}


class _Cleaner:
    """Window cleaner that keeps the first cleaning result for diagnostics."""

    def __init__(self, eta, groups=None, ratio=None, plan=None):
        self.eta = eta
        self.result = None
        self.group_rows = None
        if groups is not None:
            self.ratio = ratio
            self.group_rows = _partition(plan, groups)

    def __call__(self, window: MeasurementWindow) -> np.ndarray:
        if self.group_rows is None:
            out, res = clean_window(window, self.eta, return_result=True)
            self.result = self.result or res
            return out
        out = np.empty(window.shape[0])
        for idx in self.group_rows:
            sub = window.rows(idx)
            t = min(_n_cols(self.ratio, len(idx)), window.shape[1])
            sub = MeasurementWindow(sub.z_matrix[:, -t:], sub.sigma, sub.bias, sub.plan)
            out[idx] = clean_window(sub, self.eta)
        return out


def _partition(plan, groups) -> list[np.ndarray]:
    kinds = np.asarray(plan.kinds)
    seen = [k for g in groups for k in g]
    if sorted(seen) != sorted(set(seen)) or set(seen) != set(kinds):
        raise ValueError(f"groups {groups} must partition the measured kinds {sorted(set(kinds))}")
    return [np.flatnonzero(np.isin(kinds, g)) for g in groups]


def _run(cfg: ExperimentConfig, tasks, ctx: _Context) -> ExperimentReport:
    """Execute ``tasks`` (list of (setting, value, trial, fn)) and assemble a report."""
    t0 = time.perf_counter()

    def one(task):
        setting, value, trial, fn = task
        try:
            out = fn()
        except (np.linalg.LinAlgError, ArithmeticError, ValueError, RuntimeError) as exc:
            out = {"row": {"status": f"failed: {type(exc).__name__}: {exc}"}, "extra": None, "cleaner": None}
        out["row"].update(trial=trial, seed=cfg.seed, setting=setting, value=value)
        return out

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]

    report = ExperimentReport(scenario=cfg.scenario, config=cfg.to_dict())
    report.rows = [{c: r["row"].get(c) for c in ROW_COLUMNS} for r in results]
    order = list(dict.fromkeys((t[0], t[1]) for t in tasks))
    for setting, value in order:
        picked = [r for r, t in zip(results, tasks) if (t[0], t[1]) == (setting, value)]
        report.aggregate.append(_aggregate(setting, value, [p["row"] for p in picked]))
        good = [p["extra"] for p in picked if p["extra"] is not None]
        for k in KINDS:
            vals = [g["kinds"][k] for g in good if k in g["kinds"]]
            if vals:
                m = np.mean(vals, axis=0)
                report.per_kind.append(
                    dict(zip(PER_KIND_COLUMNS, (setting, k, *(float(x) for x in m))))
                )

    first = next((r for r in results if r.get("extra") is not None), None)
    if first is not None:
        res = first.get("cleaner")
        if res is not None:
            lo, hi = mp_edges(res.spectrum.q_c)
            report.spectrum = {
                "lambda": res.eigenvalues.tolist(),
                "h": res.h.tolist(),
                "rho": res.rho.tolist(),
                "xi": res.xi.tolist(),
                "q": res.spectrum.q_c,
                "eta": res.spectrum.eta,
                "mp_edges": [lo, hi],
            }
        a, b, c, d = first["extra"]["residuals"]
        report.residuals = [
            dict(zip(RESIDUAL_COLUMNS, (k, int(i), float(w), float(x), float(y), float(v))))
            for k, i, w, x, y, v in zip(ctx.plan.kinds, ctx.plan.index, a, b, c, d)
        ]
    report.timings = {"total_s": time.perf_counter() - t0}
    return report


def _aggregate(setting, value, rows) -> dict:
    ok = [r for r in rows if not str(r.get("status", "")).startswith("failed")]
    agg = {
        "setting": setting,
        "value": value,
        "n_trials": len(rows),
        "n_failed": len(rows) - len(ok),
        "n_refused": sum(r.get("status") == "refused" for r in ok),
    }
    for c in _MEANED:
        agg[c] = float(np.mean([r[c] for r in ok])) if ok else None
    agg["inc_rat"] = inc_rat(agg["wls_mae"], agg["rwls_mae"]) if ok and agg["wls_mae"] > 0 else None
    agg["degraded"] = agg["n_refused"] > 0
    return {c: agg.get(c) for c in AGGREGATE_COLUMNS}


def _trial_fn(ctx, cfg, trial, *, ratio=None, noise=None, cleaner_args=None, sigma_error=None):
    """Closure running one stationary-state trial."""
    ratio = cfg.window_ratio if ratio is None else ratio
    noise = noise or cfg.noise

    def fn():
        rng, init = _streams(cfg.seed, trial)
        raw, bias = _draw(ctx, rng, _n_cols(ratio, len(ctx.plan)), noise)
        sigma = ctx.sigma
        if sigma_error is not None:
            sigma = _perturbed_sigma(ctx.sigma, sigma_error, cfg, trial)
        window = build_window(raw, NoiseSpec(noise.model, sigma, bias), ctx.plan)
        cleaner = _Cleaner(cfg.eta, **(cleaner_args or {}))
        out = _evaluate(ctx, window, init, ctx.truth, ctx.state, cleaner)
        out["cleaner"] = cleaner.result
        return out

    return fn


def _perturbed_sigma(sigma, ratio, cfg, trial):
    if cfg.variance_sign == "plus":
        sign = 1.0
    elif cfg.variance_sign == "minus":
        sign = -1.0
    else:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(trial, 2)))
        sign = rng.choice([-1.0, 1.0], size=sigma.size)
    out = sigma * (1.0 + sign * ratio)
    if np.any(out <= 0):
        raise ValueError("variance error ratio drives sigma to zero")
    return out


# --------------------------------------------------------------------------
# scenarios


def run_baseline(cfg: ExperimentConfig) -> ExperimentReport:
    """Fixed operating state, fresh noise per column, ``cfg.trials`` repetitions."""
    ctx = _context(cfg)
    tasks = [("baseline", cfg.window_ratio, k, _trial_fn(ctx, cfg, k)) for k in range(cfg.trials)]
    return _run(cfg, tasks, ctx)


def run_q_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Baseline per window ratio ``r = T / N``; ``r <= 1`` falls back to plain WLS."""
    ctx = _context(cfg)
    tasks = [
        (f"r={r:g}", r, k, _trial_fn(ctx, cfg, k, ratio=r)) for r in cfg.q_list for k in range(cfg.trials)
    ]
    return _run(cfg, tasks, ctx)


def run_noise_models(cfg: ExperimentConfig) -> ExperimentReport:
    ctx = _context(cfg)
    tasks = []
    for model in cfg.models:
        noise = replace(cfg.noise, model=model)
        tasks += [(model, model, k, _trial_fn(ctx, cfg, k, noise=noise)) for k in range(cfg.trials)]
    return _run(cfg, tasks, ctx)


def run_divided(cfg: ExperimentConfig) -> ExperimentReport:
    """Undivided cleaning next to per-group cleaning on the same draws.

    Each group ``g`` is cleaned on its own window of the last
    ``round(r * N_g)`` columns.
    """
    ctx = _context(cfg)
    divided = {"groups": cfg.groups, "ratio": cfg.window_ratio, "plan": ctx.plan}
    _partition(ctx.plan, cfg.groups)
    tasks = [("undivided", 1, k, _trial_fn(ctx, cfg, k)) for k in range(cfg.trials)]
    tasks += [
        ("divided", len(cfg.groups), k, _trial_fn(ctx, cfg, k, cleaner_args=divided)) for k in range(cfg.trials)
    ]
    report = _run(cfg, tasks, ctx)
    report.extras["group_sizes"] = {
        "+".join(g): [len(idx), _n_cols(cfg.window_ratio, len(idx))]
        for g, idx in zip(cfg.groups, _partition(ctx.plan, cfg.groups))
    }
    return report


def run_variance_error(cfg: ExperimentConfig) -> ExperimentReport:
    """Cleaning and WLS weights use ``sigma * (1 +- ratio)``; noise uses the true sigma."""
    ctx = _context(cfg)
    tasks = [
        (f"ratio={r:g}", r, k, _trial_fn(ctx, cfg, k, sigma_error=r if r > 0 else None))
        for r in cfg.variance_ratios
        for k in range(cfg.trials)
    ]
    return _run(cfg, tasks, ctx)


def _balance_error(case: GridCase, adm, state: OperatingState) -> float:
    """Largest violated power-flow equation (P at PV/PQ buses, Q at PQ buses)."""
    s = power_mismatch(case, adm.ybus, state)
    return float(np.max(np.abs(np.r_[s.real[np.r_[case.pv, case.pq]], s.imag[case.pq]])))


def _time_varying_truth(ctx: _Context, profile, n_cols: int):
    """Per-column true states and measurements under the load profile."""
    case = ctx.case
    base_p = case.bus_array("load_p")
    factors = np.ones((case.n_bus, n_cols))
    for p in profile:
        if p.bus not in case.bus_index:
            raise ValueError(f"profile bus {p.bus} not in {case.name}")
        factors[case.bus_index[p.bus]] = p.factor(n_cols)
    varying = np.flatnonzero(np.any(factors != 1.0, axis=1))
    truth = np.empty((len(ctx.plan), n_cols))
    states = []
    worst = _balance_error(case, ctx.adm, ctx.state)
    prev = ctx.state
    for j in range(n_cols):
        if len(varying):
            cj = case.with_loads(base_p * factors[:, j])
            prev = solve_power_flow(cj, ctx.adm, init=prev).state
            worst = max(worst, _balance_error(cj, ctx.adm, prev))
        states.append(prev)
        truth[:, j] = ctx.truth if not len(varying) else measurement_function(prev, ctx.plan, ctx.adm)
    return truth, states, worst


def run_time_varying(cfg: ExperimentConfig) -> ExperimentReport:
    """Loads follow ``cfg.profile`` over the window; one estimate per time step.

    Step ``s`` uses the ``T`` columns ending at column ``s + T - 1`` and is
    scored against that column's state. The noise standard deviations stay
    those of the base operating point.
    """
    ctx = _context(cfg)
    n = len(ctx.plan)
    t = _n_cols(cfg.window_ratio, n)
    total = t + cfg.steps - 1
    truth, states, worst = _time_varying_truth(ctx, cfg.profile, total)

    def make(trial, step):
        def fn():
            rng, _ = _streams(cfg.seed, trial)
            raw, bias = _draw(ctx, rng, total, cfg.noise, truth_cols=truth)
            _, init = _streams(cfg.seed, trial, step)
            cols = raw[:, step : step + t]
            window = build_window(cols, NoiseSpec(cfg.noise.model, ctx.sigma, bias), ctx.plan)
            cleaner = _Cleaner(cfg.eta)
            cur = step + t - 1
            out = _evaluate(ctx, window, init, truth[:, cur], states[cur], cleaner)
            out["cleaner"] = cleaner.result
            return out

        return fn

    tasks = [(f"step={s}", s, k, make(k, s)) for s in range(cfg.steps) for k in range(cfg.trials)]
    report = _run(cfg, tasks, ctx)
    report.extras["max_power_mismatch"] = worst
    report.extras["profile"] = [asdict(p) for p in cfg.profile]
    return report


_RUNNERS = {
    "baseline": run_baseline,
    "q_sweep": run_q_sweep,
    "noise_models": run_noise_models,
    "divided": run_divided,
    "time_varying": run_time_varying,
    "variance_error": run_variance_error,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    return _RUNNERS[cfg.scenario](cfg)
