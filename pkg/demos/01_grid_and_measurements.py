"""Load a case, solve its power flow and look at the measurement vector.

Run with ``python3 demos/01_grid_and_measurements.py``.
"""

import numpy as np

from rmtse import build_admittance, full_scada_plan, load_case, measurement_function, solve_power_flow

case = load_case("case30")
adm = build_admittance(case)
print(f"{case.name}: {case.n_bus} buses, {case.n_branch} branches, slack at bus {case.buses[case.slack].id}")

pf = solve_power_flow(case, adm)
print(f"Newton-Raphson converged in {pf.iterations} iterations, largest mismatch {pf.max_mismatch:.1e} p.u.")
print("lowest voltage:", pf.state.vm.min().round(4), "at bus", case.buses[int(np.argmin(pf.state.vm))].id)

# every flow at both ends, every injection, every voltage magnitude
plan = full_scada_plan(case)
h = measurement_function(pf.state, plan, adm)
print(f"\n{len(plan)} measurements = 4 x {case.n_branch} branches + 3 x {case.n_bus} buses")
for kind, rows in plan.groups().items():
    print(f"  {kind:5s} {rows.size:4d} rows, mean |h| = {np.abs(h[rows]).mean():.4f}")

# losses: sending-end plus receiving-end active flow, summed over branches
loss = h[plan.rows("Pf")].sum() + h[plan.rows("Pt")].sum()
print(f"\nactive losses {loss * case.base_mva:.3f} MW")
