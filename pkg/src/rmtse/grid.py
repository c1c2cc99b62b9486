"""MATPOWER-style case parsing and nodal admittance assembly.

Only the ``baseMVA``, ``bus``, ``gen`` and ``branch`` sections are read. Any
other ``mpc.*`` section (``gencost``, ``areas``, ``bus_name``...) is skipped
with a warning. All stored quantities are per unit on ``base_mva``; angles
are stored in radians.

Conventions
-----------
* Branches with status 0 are dropped at parse time.
* A tap ratio of 0 in the file means a nominal ratio of 1.
* Bus type codes follow MATPOWER: 1 = PQ, 2 = PV, 3 = slack. Isolated buses
  (type 4) are rejected.
"""

from __future__ import annotations

import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "AdmittanceMatrix",
    "Branch",
    "Bus",
    "CaseFormatError",
    "Gen",
    "GridCase",
    "SingularBranchError",
    "build_admittance",
    "load_case",
    "parse_case",
    "serialize_case",
    "shipped_cases",
]

logger = logging.getLogger(__name__)

BUS_TYPES = {1: "PQ", 2: "PV", 3: "slack"}
_TYPE_CODES = {v: k for k, v in BUS_TYPES.items()}

_HEADER = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


class CaseFormatError(ValueError):
    """Malformed case file. ``line`` is 1-based, or None for whole-file errors."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class SingularBranchError(ValueError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    load_p: float
    load_q: float
    shunt_g: float
    shunt_b: float
    vm_setpoint: float
    va: float = 0.0
    base_kv: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    total_line_charging_b: float
    tap_ratio: float = 1.0
    phase_shift: float = 0.0
    status: int = 1


@dataclass(frozen=True)
class Gen:
    bus: int
    p_setpoint: float
    vm_setpoint: float
    q_limits: tuple[float, float] = (-math.inf, math.inf)
    q_setpoint: float = 0.0
    status: int = 1


@dataclass(frozen=True)
class GridCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Gen, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not self.buses:
            raise ValueError("case has no buses")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bus ids")
        n_slack = sum(b.type == "slack" for b in self.buses)
        if n_slack != 1:
            raise ValueError(f"expected exactly one slack bus, found {n_slack}")
        known = set(ids)
        for k, br in enumerate(self.branches):
            if br.from_bus not in known or br.to_bus not in known:
                raise ValueError(f"branch {k} references unknown bus")
            if br.r < 0:
                raise ValueError(f"branch {k} has negative resistance")
        for k, g in enumerate(self.gens):
            if g.bus not in known:
                raise ValueError(f"generator {k} references unknown bus")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """External bus id -> internal position."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.type == "slack")

    @cached_property
    def pv(self) -> np.ndarray:
        """PV buses that have at least one in-service generator."""
        regulated = {self.bus_index[g.bus] for g in self.gens if g.status > 0}
        return np.array(
            [i for i, b in enumerate(self.buses) if b.type == "PV" and i in regulated],
            dtype=int,
        )

    @cached_property
    def pq(self) -> np.ndarray:
        pv = set(self.pv.tolist())
        return np.array(
            [i for i in range(self.n_bus) if i != self.slack and i not in pv], dtype=int
        )

    def bus_array(self, attr: str) -> np.ndarray:
        return np.array([getattr(b, attr) for b in self.buses], dtype=float)

    def voltage_setpoints(self) -> np.ndarray:
        """Bus voltage magnitudes with generator setpoints on regulated buses."""
        vm = self.bus_array("vm_setpoint")
        for g in self.gens:
            if g.status > 0:
                i = self.bus_index[g.bus]
                if self.buses[i].type != "PQ":
                    vm[i] = g.vm_setpoint
        return vm

    def injections(self) -> np.ndarray:
        """Scheduled complex power injection per bus (generation minus load), p.u."""
        s = -(self.bus_array("load_p") + 1j * self.bus_array("load_q"))
        for g in self.gens:
            if g.status > 0:
                s[self.bus_index[g.bus]] += g.p_setpoint + 1j * g.q_setpoint
        return s

    def with_loads(self, load_p: np.ndarray, load_q: np.ndarray | None = None) -> "GridCase":
        """Copy of the case with bus loads replaced (p.u.)."""
        if load_q is None:
            load_q = self.bus_array("load_q")
        buses = tuple(
            Bus(**{**b.__dict__, "load_p": float(p), "load_q": float(q)})
            for b, p, q in zip(self.buses, load_p, load_q)
        )
        return GridCase(self.base_mva, buses, self.branches, self.gens, self.name)


# --------------------------------------------------------------------------
# parsing


def _strip_comment(line: str) -> str:
    i = line.find("%")
    return line if i < 0 else line[:i]


def _parse_row(chunk: str, lineno: int) -> list[float]:
    out = []
    for tok in chunk.replace(",", " ").split():
        try:
            out.append(float(tok))
        except ValueError:
            raise CaseFormatError(f"non-numeric field {tok!r}", lineno) from None
    return out


def _read_sections(text: str) -> tuple[dict[str, tuple[int, object]], list[str]]:
    """Split text into {name: (header line, value)}; matrices are lists of (lineno, row)."""
    sections: dict[str, tuple[int, object]] = {}
    skipped: list[str] = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        raw = _strip_comment(lines[i]).strip()
        i += 1
        if not raw or raw.startswith("function"):
            continue
        m = _HEADER.match(raw)
        if m is None:
            raise CaseFormatError(f"malformed section header {raw!r}", lineno)
        name, rest = m.group(1), m.group(2).strip()
        if rest.startswith("{"):
            # cell arrays (bus_name etc.) are never used
            depth = rest.count("{") - rest.count("}")
            while depth > 0 and i < len(lines):
                seg = _strip_comment(lines[i])
                depth += seg.count("{") - seg.count("}")
                i += 1
            skipped.append(name)
            continue
        if rest.startswith("["):
            body = rest[1:]
            rows: list[tuple[int, list[float]]] = []
            closed = False
            cur = lineno
            while True:
                if "]" in body:
                    body, closed = body[: body.index("]")], True
                for chunk in body.split(";"):
                    if chunk.strip():
                        rows.append((cur, _parse_row(chunk, cur)))
                if closed or i >= len(lines):
                    break
                body = _strip_comment(lines[i])
                cur = i + 1
                i += 1
            if not closed:
                raise CaseFormatError(f"unterminated matrix for mpc.{name}", lineno)
            sections[name] = (lineno, rows)
            continue
        value = rest.rstrip(";").strip()
        if name == "baseMVA":
            try:
                sections[name] = (lineno, float(value))
            except ValueError:
                raise CaseFormatError(f"non-numeric baseMVA {value!r}", lineno) from None
        else:
            sections[name] = (lineno, value)
    return sections, skipped


def _require(sections, name, ncol):
    if name not in sections:
        raise CaseFormatError(f"missing mpc.{name} section")
    lineno, rows = sections[name]
    for ln, row in rows:
        if len(row) < ncol:
            raise CaseFormatError(f"mpc.{name} row has {len(row)} columns, need {ncol}", ln)
    return lineno, rows


def parse_case(text: str, name: str = "") -> GridCase:
    """Parse MATPOWER-format case text into a :class:`GridCase`.

    Bus, branch and generator order is preserved from the file (minus
    out-of-service branches).
    """
    sections, skipped = _read_sections(text)
    ignored = [k for k in sections if k not in ("baseMVA", "bus", "gen", "branch", "version")]
    ignored += skipped
    if ignored:
        warnings.warn(f"ignoring case sections: {', '.join(sorted(ignored))}", stacklevel=2)

    if "baseMVA" not in sections:
        raise CaseFormatError("missing mpc.baseMVA")
    base_line, base = sections["baseMVA"]
    if not base > 0:
        raise CaseFormatError("baseMVA must be positive", base_line)

    bus_line, bus_rows = _require(sections, "bus", 9)
    if not bus_rows:
        raise CaseFormatError("case has zero buses", bus_line)
    buses = []
    for ln, row in bus_rows:
        code = int(row[1])
        if code not in BUS_TYPES:
            raise CaseFormatError(f"unsupported bus type {code}", ln)
        buses.append(
            Bus(
                id=int(row[0]),
                type=BUS_TYPES[code],
                load_p=row[2] / base,
                load_q=row[3] / base,
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
                vm_setpoint=row[7],
                va=math.radians(row[8]),
                base_kv=row[9] if len(row) > 9 else 0.0,
            )
        )
    ids = {b.id for b in buses}
    if len(ids) != len(buses):
        raise CaseFormatError("duplicate bus ids", bus_line)
    if sum(b.type == "slack" for b in buses) == 0:
        raise CaseFormatError("no slack bus", bus_line)
    if sum(b.type == "slack" for b in buses) > 1:
        raise CaseFormatError("more than one slack bus", bus_line)

    gens = []
    if "gen" in sections:
        _, gen_rows = _require(sections, "gen", 8)
        for ln, row in gen_rows:
            if int(row[0]) not in ids:
                raise CaseFormatError(f"generator at unknown bus {int(row[0])}", ln)
            gens.append(
                Gen(
                    bus=int(row[0]),
                    p_setpoint=row[1] / base,
                    q_setpoint=row[2] / base,
                    q_limits=(row[4] / base, row[3] / base),
                    vm_setpoint=row[5],
                    status=int(row[7]),
                )
            )

    _, br_rows = _require(sections, "branch", 11)
    branches = []
    for ln, row in br_rows:
        status = int(row[10])
        if status == 0:
            continue
        f, t = int(row[0]), int(row[1])
        if f not in ids or t not in ids:
            raise CaseFormatError(f"branch references unknown bus ({f}, {t})", ln)
        r, x = row[2], row[3]
        if r < 0:
            raise CaseFormatError("negative branch resistance", ln)
        if r == 0 and x == 0:
            raise CaseFormatError("in-service branch with zero impedance", ln)
        branches.append(
            Branch(
                from_bus=f,
                to_bus=t,
                r=r,
                x=x,
                total_line_charging_b=row[4],
                tap_ratio=row[8] if row[8] != 0 else 1.0,
                phase_shift=math.radians(row[9]),
                status=status,
            )
        )
    return GridCase(base, tuple(buses), tuple(branches), tuple(gens), name=name)


_SHIPPED = ("case30", "case57", "case118", "case300", "case1354pegase")


def shipped_cases() -> tuple[str, ...]:
    return _SHIPPED


def load_case(path_or_name: str | Path) -> GridCase:
    """Load a case from a file path or a shipped case name such as ``"case118"``."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
        name = p.stem
    else:
        name = str(path_or_name).removesuffix(".m")
        if name not in _SHIPPED:
            raise FileNotFoundError(path_or_name)
        text = resources.files("rmtse.data").joinpath(f"{name}.m").read_text()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return parse_case(text, name=name)


# --------------------------------------------------------------------------
# serialization


def _exact(v: float, base: float) -> float:
    """A float y with y / base == v, so a re-parse reproduces v bit-for-bit."""
    y = v * base
    if y / base == v:
        return y
    lo = hi = y
    for _ in range(8):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
        if lo / base == v:
            return lo
        if hi / base == v:
            return hi
    return y


def _exact_deg(rad: float) -> float:
    d = math.degrees(rad)
    if math.radians(d) == rad:
        return d
    lo = hi = d
    for _ in range(8):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
        if math.radians(lo) == rad:
            return lo
        if math.radians(hi) == rad:
            return hi
    return d


def serialize_case(case: GridCase) -> str:
    """Write a case back to MATPOWER text that :func:`parse_case` reads identically."""
    base = case.base_mva
    out = [f"function mpc = {case.name or 'case'}", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", ""]
    out.append("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV")
    out.append("mpc.bus = [")
    for b in case.buses:
        vals = [
            b.id,
            _TYPE_CODES[b.type],
            _exact(b.load_p, base),
            _exact(b.load_q, base),
            _exact(b.shunt_g, base),
            _exact(b.shunt_b, base),
            1,
            b.vm_setpoint,
            _exact_deg(b.va),
            b.base_kv,
        ]
        out.append("\t" + "\t".join(repr(v) for v in vals) + ";")
    out.append("];\n")
    out.append("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus")
    out.append("mpc.gen = [")
    for g in case.gens:
        vals = [
            g.bus,
            _exact(g.p_setpoint, base),
            _exact(g.q_setpoint, base),
            _exact(g.q_limits[1], base),
            _exact(g.q_limits[0], base),
            g.vm_setpoint,
            base,
            g.status,
        ]
        out.append("\t" + "\t".join(repr(v) for v in vals) + ";")
    out.append("];\n")
    out.append("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus")
    out.append("mpc.branch = [")
    for br in case.branches:
        vals = [
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.total_line_charging_b,
            0,
            0,
            0,
            br.tap_ratio,
            _exact_deg(br.phase_shift),
            br.status,
        ]
        out.append("\t" + "\t".join(repr(v) for v in vals) + ";")
    out.append("];")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# admittance


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """Bus admittance matrix plus the per-branch two-port quadruples."""

    ybus: sp.csr_matrix
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    f: np.ndarray
    t: np.ndarray
    ysh: np.ndarray
    yf: sp.csr_matrix = field(repr=False)
    yt: sp.csr_matrix = field(repr=False)

    @property
    def n_bus(self) -> int:
        return self.ybus.shape[0]


def build_admittance(case: GridCase) -> AdmittanceMatrix:
    n, nl = case.n_bus, case.n_branch
    idx = case.bus_index
    f = np.array([idx[b.from_bus] for b in case.branches], dtype=int)
    t = np.array([idx[b.to_bus] for b in case.branches], dtype=int)
    r = np.array([b.r for b in case.branches], dtype=float)
    x = np.array([b.x for b in case.branches], dtype=float)
    bc = np.array([b.total_line_charging_b for b in case.branches], dtype=float)
    bad = (r == 0) & (x == 0)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SingularBranchError(f"branch {k} has zero series impedance")
    tap = np.array([b.tap_ratio for b in case.branches], dtype=float)
    shift = np.array([b.phase_shift for b in case.branches], dtype=float)

    ys = 1.0 / (r + 1j * x) if nl else np.zeros(0, complex)
    ratio = tap * np.exp(1j * shift)
    ytt = ys + 0.5j * bc
    yff = ytt / (tap * tap)
    yft = -ys / np.conj(ratio)
    ytf = -ys / ratio
    ysh = case.bus_array("shunt_g") + 1j * case.bus_array("shunt_b")

    rows = np.arange(nl)
    cf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, n))
    ct = sp.csr_matrix((np.ones(nl), (rows, t)), shape=(nl, n))
    yf = sp.csr_matrix(sp.diags(yff) @ cf + sp.diags(yft) @ ct)
    yt = sp.csr_matrix(sp.diags(ytf) @ cf + sp.diags(ytt) @ ct)
    ybus = sp.csr_matrix(cf.T @ yf + ct.T @ yt + sp.diags(ysh))
    return AdmittanceMatrix(ybus, yff, yft, ytf, ytt, f, t, ysh, yf, yt)
