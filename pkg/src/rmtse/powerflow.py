"""Newton-Raphson AC power flow and the SCADA measurement model.

The state vector used by the estimator is ordered ``[va[non-slack], vm[all]]``;
the slack angle is pinned to the case reference and never estimated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import AdmittanceMatrix, GridCase

__all__ = [
    "KINDS",
    "MeasurementPlan",
    "OperatingState",
    "PowerFlowError",
    "PowerFlowResult",
    "full_scada_plan",
    "measurement_function",
    "measurement_jacobian",
    "power_mismatch",
    "solve_power_flow",
]

# block order of the full SCADA plan; Pinj/Qinj are the "Pb"/"Qb" rows of
# the per-kind reports
KINDS = ("Pt", "Pf", "Pinj", "Qt", "Qf", "Qinj", "Vm")
BRANCH_KINDS = frozenset({"Pt", "Pf", "Qt", "Qf"})


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class OperatingState:
    vm: np.ndarray
    va: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.vm) <= 0):
            raise ValueError("voltage magnitudes must be positive")

    @property
    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    def as_vector(self) -> np.ndarray:
        """``[vm; va]`` over all buses, the layout used for state MAE."""
        return np.concatenate([self.vm, self.va])


@dataclass(frozen=True)
class PowerFlowResult:
    state: OperatingState
    iterations: int
    max_mismatch: float


@dataclass(frozen=True, eq=False)
class MeasurementPlan:
    """Ordered measured quantities; ``index`` is a branch or bus position."""

    kinds: tuple[str, ...]
    index: np.ndarray

    def __post_init__(self):
        if len(self.kinds) != len(self.index):
            raise ValueError("kinds and index lengths differ")
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise ValueError(f"unknown measurement kinds {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.kinds)

    def rows(self, kind: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.kinds) == kind)

    def groups(self) -> dict[str, np.ndarray]:
        """Row indices per kind, in block order, skipping absent kinds."""
        return {k: r for k in KINDS if len(r := self.rows(k))}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.kinds).encode())
        h.update(np.asarray(self.index, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"kinds": list(self.kinds), "index": [int(i) for i in self.index]}

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementPlan":
        return cls(tuple(d["kinds"]), np.asarray(d["index"], dtype=int))


def full_scada_plan(case: GridCase) -> MeasurementPlan:
    """Every branch flow at both ends, every injection and every voltage magnitude."""
    nl, nb = case.n_branch, case.n_bus
    kinds: list[str] = []
    index: list[np.ndarray] = []
    for k in KINDS:
        n = nl if k in BRANCH_KINDS else nb
        kinds += [k] * n
        index.append(np.arange(n))
    return MeasurementPlan(tuple(kinds), np.concatenate(index))


# --------------------------------------------------------------------------
# power flow


def _dsbus_dv(ybus, v):
    ibus = ybus @ v
    dv = sp.diags(v)
    dvn = sp.diags(v / np.abs(v))
    di = sp.diags(ibus)
    ds_dvm = dv @ np.conj(ybus @ dvn) + np.conj(di) @ dvn
    ds_dva = 1j * dv @ np.conj(di - ybus @ dv)
    return sp.csr_matrix(ds_dvm), sp.csr_matrix(ds_dva)


def power_mismatch(case: GridCase, ybus, state: OperatingState) -> np.ndarray:
    """Complex injection minus schedule at every bus (p.u.)."""
    v = state.voltage
    return v * np.conj(ybus @ v) - case.injections()


def solve_power_flow(
    case: GridCase,
    adm: AdmittanceMatrix,
    tol: float = 1e-8,
    max_iter: int = 30,
    init: OperatingState | None = None,
) -> PowerFlowResult:
    """Polar Newton-Raphson power flow.

    PV buses hold the generator voltage setpoint; reactive limits are not
    enforced.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    ybus = adm.ybus
    pv, pq = case.pv, case.pq
    pvpq = np.r_[pv, pq]
    sched = case.injections()

    if init is None:
        vm = case.voltage_setpoints()
        va = np.full(case.n_bus, case.buses[case.slack].va)
    else:
        vm, va = init.vm.copy(), init.va.copy()
        vset = case.voltage_setpoints()
        reg = np.r_[case.slack, pv].astype(int)
        vm[reg] = vset[reg]
        va[case.slack] = case.buses[case.slack].va
    v = vm * np.exp(1j * va)

    def mismatch(v):
        s = v * np.conj(ybus @ v) - sched
        return np.r_[s.real[pvpq], s.imag[pq]]

    f = mismatch(v)
    err = np.max(np.abs(f)) if f.size else 0.0
    it = 0
    while err >= tol:
        if it >= max_iter:
            raise PowerFlowError(f"no convergence after {max_iter} iterations (mismatch {err:.3e})")
        ds_dvm, ds_dva = _dsbus_dv(ybus, v)
        j11 = ds_dva[pvpq][:, pvpq].real
        j12 = ds_dvm[pvpq][:, pq].real
        j21 = ds_dva[pq][:, pvpq].imag
        j22 = ds_dvm[pq][:, pq].imag
        jac = sp.vstack([sp.hstack([j11, j12]), sp.hstack([j21, j22])], format="csc")
        try:
            dx = spla.splu(jac).solve(-f)
        except RuntimeError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}") from None
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular power-flow Jacobian")
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        err = np.max(np.abs(f))
        it += 1
    return PowerFlowResult(OperatingState(np.abs(v), np.angle(v)), it, float(err))


# --------------------------------------------------------------------------
# measurement model


def _kind_codes(plan: MeasurementPlan) -> np.ndarray:
    lookup = {k: i for i, k in enumerate(KINDS)}
    return np.array([lookup[k] for k in plan.kinds], dtype=int)


def _check_plan(plan, adm):
    codes = _kind_codes(plan)
    nl = len(adm.f)
    limit = np.where(np.isin(codes, [0, 1, 3, 4]), nl, adm.n_bus)
    if np.any((plan.index < 0) | (plan.index >= limit)):
        raise IndexError("measurement plan index out of range")
    return codes


def measurement_function(state: OperatingState, plan: MeasurementPlan, adm: AdmittanceMatrix) -> np.ndarray:
    """True value of every planned measurement, per unit."""
    codes = _check_plan(plan, adm)
    v = state.voltage
    sf = v[adm.f] * np.conj(adm.yf @ v)
    st = v[adm.t] * np.conj(adm.yt @ v)
    sbus = v * np.conj(adm.ybus @ v)
    table = [st.real, sf.real, sbus.real, st.imag, sf.imag, sbus.imag, state.vm]
    out = np.empty(len(plan))
    for c, values in enumerate(table):
        sel = codes == c
        out[sel] = values[plan.index[sel]]
    return out


def measurement_jacobian(
    state: OperatingState, plan: MeasurementPlan, adm: AdmittanceMatrix, slack: int
) -> sp.csr_matrix:
    """Sparse Jacobian of :func:`measurement_function`, columns ``[va[non-slack]; vm]``."""
    codes = _check_plan(plan, adm)
    n = adm.n_bus
    nl = len(adm.f)
    v = state.voltage
    vn = v / np.abs(v)
    dv, dvn = sp.diags(v), sp.diags(vn)
    rows = np.arange(nl)

    def branch_derivs(ybr, idx):
        c = sp.csr_matrix((np.ones(nl), (rows, idx)), shape=(nl, n))
        ibr = ybr @ v
        dvb = sp.diags(v[idx])
        dib = sp.diags(ibr)
        ds_dva = 1j * (np.conj(dib) @ c @ dv - dvb @ np.conj(ybr @ dv))
        ds_dvm = dvb @ np.conj(ybr @ dvn) + np.conj(dib) @ c @ dvn
        return sp.csr_matrix(ds_dva), sp.csr_matrix(ds_dvm)

    sf_va, sf_vm = branch_derivs(adm.yf, adm.f)
    st_va, st_vm = branch_derivs(adm.yt, adm.t)
    sb_vm, sb_va = _dsbus_dv(adm.ybus, v)
    eye = sp.identity(n, format="csr")
    zero = sp.csr_matrix((n, n))

    blocks_va = [st_va.real, sf_va.real, sb_va.real, st_va.imag, sf_va.imag, sb_va.imag, zero]
    blocks_vm = [st_vm.real, sf_vm.real, sb_vm.real, st_vm.imag, sf_vm.imag, sb_vm.imag, eye]

    keep = np.r_[np.arange(slack), np.arange(slack + 1, n)]
    order = np.argsort(codes, kind="stable")
    parts = []
    for c in range(len(KINDS)):
        sel = order[codes[order] == c]
        if len(sel) == 0:
            continue
        ridx = plan.index[sel]
        parts.append(sp.hstack([sp.csr_matrix(blocks_va[c])[ridx][:, keep], sp.csr_matrix(blocks_vm[c])[ridx]]))
    stacked = sp.vstack(parts, format="csr")
    # undo the grouping so rows follow the plan order
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    return stacked[inverse]
