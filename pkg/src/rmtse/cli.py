"""Command-line entry point ``rmt-se``.

    rmt-se run <config>            run an experiment config, write its report
    rmt-se clean <window-file>     clean a saved window, write the current vector
    rmt-se powerflow <case>        solve a case, write its operating point
    rmt-se spectrum <window-file>  per-eigenvalue cleaning diagnostics
    rmt-se window <case>           synthesize a window file to feed clean/spectrum
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .grid import build_admittance, load_case
from .harness import (
    DESK_SCALE_BUSES,
    NoiseConfig,
    csv_table,
    emit_report,
    load_config,
    run_experiment,
    write_atomic,
)
from .noise import NoiseSpec, build_window, draw_bias, load_window, save_window, sigma_from_truth, standard_noise
from .powerflow import full_scada_plan, measurement_function, solve_power_flow
from .rmt import CleaningRefused, clean_window, spectrum_diagnostics


def _write_table(out_dir: Path, stem: str, fmt: str, columns: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        data = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in columns.items()}
        return write_atomic(out_dir / f"{stem}.json", json.dumps(data, indent=1) + "\n")
    names = list(columns)
    recs = [dict(zip(names, vals)) for vals in zip(*columns.values())]
    return write_atomic(out_dir / f"{stem}.csv", csv_table(names, recs))


def _cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, trials=args.trials, extended=args.extended or None)
    report = run_experiment(cfg)
    paths = emit_report(report, args.format, args.out_dir)
    for a in report.aggregate:
        wls, rwls = a["wls_mae"], a["rwls_mae"]
        line = f"{a['setting']:>14}  WLS {wls:.6f}  R-WLS {rwls:.6f}" if wls is not None else f"{a['setting']:>14}  failed"
        if a["n_refused"]:
            line += "  (cleaning refused: N >= T, plain WLS used)"
        if a["n_failed"]:
            line += f"  ({a['n_failed']} failed trials)"
        print(line)
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_clean(args) -> int:
    window = load_window(args.window_file)
    cleaned = clean_window(window)
    cols = {"raw": window.current(), "cleaned": cleaned}
    if window.plan is not None:
        cols = {"kind": list(window.plan.kinds), "index": window.plan.index.tolist(), **cols}
    print(f"window {window.shape[0]} x {window.shape[1]}  (T/N = {window.ratio:.3f})")
    print(f"wrote {_write_table(Path(args.out_dir), 'cleaned', args.format, cols)}")
    return 0


def _cmd_spectrum(args) -> int:
    window = load_window(args.window_file)
    if window.shape[0] >= window.shape[1]:
        raise CleaningRefused(f"cleaning needs N < T, window is {window.shape[0]} x {window.shape[1]}")
    diag = spectrum_diagnostics(window.z_matrix)
    lam, xi = diag["lambda"], diag["xi"]
    print(f"{lam.size} eigenvalues, largest {lam[0]:.4g} -> {xi[0]:.4g}, trace {lam.sum():.4g} -> {xi.sum():.4g}")
    print(f"wrote {_write_table(Path(args.out_dir), 'spectrum', args.format, diag)}")
    return 0


def _cmd_powerflow(args) -> int:
    case = load_case(args.case)
    res = solve_power_flow(case, build_admittance(case))
    cols = {
        "bus": [b.id for b in case.buses],
        "vm": res.state.vm,
        "va_deg": np.degrees(res.state.va),
    }
    print(f"{case.name}: {case.n_bus} buses, converged in {res.iterations} iterations (mismatch {res.max_mismatch:.2e})")
    print(f"wrote {_write_table(Path(args.out_dir), f'{case.name}_powerflow', args.format, cols)}")
    return 0


def _cmd_window(args) -> int:
    case = load_case(args.case)
    if case.n_bus > DESK_SCALE_BUSES and not args.extended:
        raise ValueError(f"{case.name} has {case.n_bus} buses; pass --extended")
    noise = NoiseConfig(model=args.model, flow_pct=args.flow_pct, vm_pct=args.vm_pct)
    adm = build_admittance(case)
    plan = full_scada_plan(case)
    truth = measurement_function(solve_power_flow(case, adm).state, plan, adm)
    sigma = sigma_from_truth(truth, plan, noise.flow_pct, noise.vm_pct)
    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    n = len(plan)
    t = max(2, round(args.ratio * n))
    bias = draw_bias(n, rng, noise.bias_range)
    raw = truth[:, None] + bias[:, None] + sigma[:, None] * standard_noise(noise.model, (n, t), rng)
    window = build_window(raw, NoiseSpec(noise.model, sigma, bias), plan)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if args.format == "csv" else ".npy"
    path = save_window(window, out / f"{case.name}_window{suffix}", seed=seed)
    np.savetxt(out / f"{case.name}_truth.csv", truth, fmt="%.17e")
    print(f"wrote {path} ({n} x {t}) and {out / f'{case.name}_truth.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmt-se", description="Random-matrix cleaning + WLS state estimation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="out", help="output directory (default: out)")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="output format (default: csv)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--trials", type=int, default=None, help="trial count (overrides the config)")
    common.add_argument("--extended", action="store_true", help=f"allow cases above {DESK_SCALE_BUSES} buses")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", parents=[common], help="run an experiment config")
    s.add_argument("config")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("clean", parents=[common], help="clean a saved measurement window")
    s.add_argument("window_file")
    s.set_defaults(func=_cmd_clean)

    s = sub.add_parser("powerflow", parents=[common], help="solve the power flow of a case")
    s.add_argument("case", help="shipped case name (case30, case57, case118, case300, case1354pegase) or a .m path")
    s.set_defaults(func=_cmd_powerflow)

    s = sub.add_parser("spectrum", parents=[common], help="eigenvalue cleaning diagnostics of a window")
    s.add_argument("window_file")
    s.set_defaults(func=_cmd_spectrum)

    s = sub.add_parser("window", parents=[common], help="synthesize a noisy measurement window")
    s.add_argument("case")
    s.add_argument("--ratio", type=float, default=1.2, help="columns per row, T/N (default 1.2)")
    s.add_argument("--model", default="gaussian")
    s.add_argument("--flow-pct", type=float, default=0.05)
    s.add_argument("--vm-pct", type=float, default=0.01)
    s.set_defaults(func=_cmd_window)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CleaningRefused as exc:
        print(f"rmt-se: cleaning refused: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"rmt-se: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
