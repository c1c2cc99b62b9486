"""Seeded experiments through the harness (the same runs ``rmt-se run`` makes).

Kept small so it finishes in about a minute; the configs in ``configs/``
use ten trials.
"""

from pathlib import Path

from rmtse import ExperimentConfig, NoiseConfig, emit_report, run_experiment

noise = NoiseConfig("gaussian", flow_pct=0.05, vm_pct=0.01)

base = run_experiment(ExperimentConfig(case="case30", noise=noise, trials=3))
a = base.summary()
print(f"baseline: WLS {a['wls_mae']:.5f}  R-WLS {a['rwls_mae']:.5f}  Inc.Rat {a['inc_rat']:.1%}")

sweep = run_experiment(ExperimentConfig(case="case30", noise=noise, trials=2, scenario="q_sweep", q_list=(0.5, 1.2, 4)))
for a in sweep.aggregate:
    flag = "  (N >= T: cleaning refused)" if a["degraded"] else ""
    print(f"{a['setting']:>6}: R-WLS {a['rwls_mae']:.5f}{flag}")

models = run_experiment(
    ExperimentConfig(case="case30", noise=noise, trials=2, scenario="noise_models", models=("gaussian", "laplace", "nig"))
)
for a in models.aggregate:
    print(f"{a['setting']:>9}: Inc.Rat {a['inc_rat']:.1%}")

out = Path("out/demo")
for p in emit_report(base, "csv", out):
    print("wrote", p)
