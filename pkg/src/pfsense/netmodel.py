"""Network case model, MATPOWER/JSON parsers and the bus admittance matrix.

Buses are re-indexed ``0..n_bus-1`` in file order. Every matrix produced
downstream uses that ordering; ``NetworkCase.index_of`` maps a bus id to
its position.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    DanglingBranch,
    MalformedCase,
    MissingMatrix,
    MultipleSlack,
    ZeroImpedanceBranch,
)

SLACK, PV, PQ = "slack", "pv", "pq"
BUS_KINDS = (SLACK, PV, PQ)
_MATPOWER_TYPES = {3: SLACK, 2: PV, 1: PQ}
_KIND_TO_MATPOWER = {v: k for k, v in _MATPOWER_TYPES.items()}

CASES_DIR = Path(__file__).parent / "cases"
_CASE_ALIASES = {"case24": "case24_ieee_rts"}


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_init: float = 1.0
    theta_init: float = 0.0
    base_kv: float = 0.0

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise MalformedCase(f"bus {self.id}: unknown kind {self.kind!r}")
        if not self.v_init > 0:
            raise MalformedCase(f"bus {self.id}: v_init must be positive")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 0.0
    shift: float = 0.0
    status: int = 1

    @property
    def in_service(self):
        return self.status > 0

    @property
    def ratio(self):
        """Complex off-nominal tap ``tap * exp(j*shift)``; tap 0 means 1."""
        tap = self.tap if self.tap != 0 else 1.0
        return tap * np.exp(1j * math.radians(self.shift))


@dataclass(frozen=True)
class Generator:
    bus: int
    pg: float = 0.0
    qg: float = 0.0
    vg: float = 1.0
    status: int = 1


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple
    branches: tuple
    gens: tuple = ()
    name: str = ""
    slack_index: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "gens", tuple(self.gens))
        if not self.base_mva > 0:
            raise MalformedCase("base_mva must be positive")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise MalformedCase("bus ids are not unique")
        slacks = [i for i, b in enumerate(self.buses) if b.kind == SLACK]
        if len(slacks) > 1:
            raise MultipleSlack(f"{len(slacks)} slack buses found")
        if not slacks:
            raise MalformedCase("no slack bus")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise DanglingBranch(
                    f"branch {br.from_bus}-{br.to_bus} references a missing bus")
        for g in self.gens:
            if g.bus not in known:
                raise DanglingBranch(f"generator at missing bus {g.bus}")
        object.__setattr__(self, "slack_index", slacks[0])

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    def index_of(self, bus_id):
        return self.bus_ids.index(bus_id)

    @property
    def id_to_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    def kinds(self):
        return [b.kind for b in self.buses]

    def scheduled_injections(self):
        """Net scheduled (p, q) per bus in per unit: in-service gens minus loads."""
        idx = self.id_to_index
        p = np.array([-b.p_load for b in self.buses], dtype=float)
        q = np.array([-b.q_load for b in self.buses], dtype=float)
        for g in self.gens:
            if g.status > 0:
                p[idx[g.bus]] += g.pg
                q[idx[g.bus]] += g.qg
        return p / self.base_mva, q / self.base_mva


@dataclass(frozen=True)
class AdmittanceMatrix:
    n_bus: int
    g: np.ndarray
    b: np.ndarray

    @property
    def y(self):
        return self.g + 1j * self.b


# -- MATPOWER ---------------------------------------------------------------

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")


def _strip_comments(text):
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix_body(text, name):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\]" % re.escape(name), text, re.S)
    if m is None:
        raise MissingMatrix(f"mpc.{name} not found")
    rows = []
    for chunk in re.split(r"[;\n]", m.group(1)):
        tokens = chunk.replace(",", " ").split()
        if not tokens:
            continue
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise MalformedCase(f"mpc.{name}: {exc}") from None
    return rows


def _scalar(text, name):
    m = re.search(r"mpc\.%s\s*=\s*([^;\n]+)" % re.escape(name), text)
    if m is None:
        raise MissingMatrix(f"mpc.{name} not found")
    try:
        return float(m.group(1).strip())
    except ValueError:
        raise MalformedCase(f"mpc.{name} is not a number") from None


def _need(row, ncols, name):
    if len(row) < ncols:
        raise MalformedCase(f"mpc.{name} row has {len(row)} columns, need {ncols}")


def parse_matpower_case(text, name=""):
    """Parse the MATLAB-syntax subset used by MATPOWER case files.

    Only the columns this package needs are read; extra columns are
    ignored so that files from different MATPOWER versions load.
    """
    body = _strip_comments(text)
    base_mva = _scalar(body, "baseMVA")
    bus_rows = _matrix_body(body, "bus")
    branch_rows = _matrix_body(body, "branch")
    gen_rows = _matrix_body(body, "gen")

    buses = []
    for row in bus_rows:
        _need(row, 10, "bus")
        code = int(row[1])
        if code not in _MATPOWER_TYPES:
            raise MalformedCase(f"bus {int(row[0])}: unsupported type {code}")
        buses.append(Bus(
            id=int(row[0]), kind=_MATPOWER_TYPES[code],
            p_load=row[2], q_load=row[3], g_shunt=row[4], b_shunt=row[5],
            v_init=row[7], theta_init=row[8], base_kv=row[9]))
    branches = []
    for row in branch_rows:
        _need(row, 11, "branch")
        branches.append(Branch(
            from_bus=int(row[0]), to_bus=int(row[1]), r=row[2], x=row[3],
            b_charging=row[4], tap=row[8], shift=row[9], status=int(row[10])))
    gens = []
    for row in gen_rows:
        _need(row, 8, "gen")
        gens.append(Generator(bus=int(row[0]), pg=row[1], qg=row[2],
                              vg=row[5], status=int(row[7])))
    return NetworkCase(base_mva, buses, branches, gens, name=name)


def to_matpower(case):
    """Serialise a case back to the MATPOWER subset read by the parser."""
    out = [f"function mpc = {case.name or 'case'}", "mpc.version = '2';",
           f"mpc.baseMVA = {case.base_mva!r};", "mpc.bus = ["]
    for b in case.buses:
        vals = [b.id, _KIND_TO_MATPOWER[b.kind], b.p_load, b.q_load, b.g_shunt,
                b.b_shunt, 1, b.v_init, b.theta_init, b.base_kv]
        out.append("\t" + "\t".join(repr(v) for v in vals) + ";")
    out += ["];", "mpc.gen = ["]
    for g in case.gens:
        vals = [g.bus, g.pg, g.qg, 0, 0, g.vg, case.base_mva, g.status]
        out.append("\t" + "\t".join(repr(v) for v in vals) + ";")
    out += ["];", "mpc.branch = ["]
    for br in case.branches:
        vals = [br.from_bus, br.to_bus, br.r, br.x, br.b_charging, 0, 0, 0,
                br.tap, br.shift, br.status]
        out.append("\t" + "\t".join(repr(v) for v in vals) + ";")
    out.append("];")
    return "\n".join(out) + "\n"


# -- JSON -------------------------------------------------------------------

_FIELDS = {
    "buses": (Bus, {"id": int, "kind": str}),
    "branches": (Branch, {"from_bus": int, "to_bus": int, "status": int}),
    "gens": (Generator, {"bus": int, "status": int}),
}


def _record(cls, raw, typed, where):
    if not isinstance(raw, dict):
        raise MalformedCase(f"{where}: expected an object")
    kwargs = {}
    for name in cls.__dataclass_fields__:
        if name not in raw:
            continue
        value = raw[name]
        want = typed.get(name, float)
        if want is str:
            if not isinstance(value, str):
                raise MalformedCase(f"{where}.{name}: expected a string")
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedCase(f"{where}.{name}: expected a number")
        elif want is int:
            if float(value) != int(value):
                raise MalformedCase(f"{where}.{name}: expected an integer")
            value = int(value)
        else:
            value = float(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise MalformedCase(f"{where}: {exc}") from None


def parse_json_case(text):
    """Parse the JSON case schema (one object per bus/branch/gen record)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedCase(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise MalformedCase("top level must be an object")
    for key in ("base_mva", "buses", "branches"):
        if key not in raw:
            raise MalformedCase(f"missing {key!r}")
    base = raw["base_mva"]
    if isinstance(base, bool) or not isinstance(base, (int, float)):
        raise MalformedCase("base_mva: expected a number")
    parts = {}
    for key, (cls, typed) in _FIELDS.items():
        items = raw.get(key, [])
        if not isinstance(items, list):
            raise MalformedCase(f"{key}: expected a list")
        parts[key] = [_record(cls, r, typed, f"{key}[{i}]") for i, r in enumerate(items)]
    return NetworkCase(float(base), parts["buses"], parts["branches"], parts["gens"],
                       name=str(raw.get("name", "")))


def case_to_json(case, indent=None):
    doc = {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [asdict(b) for b in case.buses],
        "branches": [asdict(b) for b in case.branches],
        "gens": [asdict(g) for g in case.gens],
    }
    return json.dumps(doc, indent=indent)


def load_case(path):
    """Load a case from a ``.m`` or ``.json`` file.

    Bare names such as ``case9`` or ``case9.m`` that do not exist on disk
    resolve to the fixtures bundled with the package.
    """
    p = Path(path)
    if not p.exists():
        stem = _CASE_ALIASES.get(p.stem, p.stem)
        for suffix in (p.suffix or ".m", ".m", ".json"):
            bundled = CASES_DIR / (stem + suffix)
            if bundled.exists():
                p = bundled
                break
        else:
            raise FileNotFoundError(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        return parse_json_case(text)
    return parse_matpower_case(text, name=p.stem)


def bundled_cases():
    return sorted(f.stem for f in CASES_DIR.glob("*.m"))


# -- admittance -------------------------------------------------------------

def build_admittance(case):
    """Build the bus admittance matrix on the case's MVA base.

    Branches follow the MATPOWER pi-model with complex tap at the from end.
    """
    n = case.n_bus
    idx = case.id_to_index
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.in_service:
            continue
        if br.r == 0 and br.x == 0:
            raise ZeroImpedanceBranch(f"branch {br.from_bus}-{br.to_bus}")
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b_charging
        t = br.ratio
        f, k = idx[br.from_bus], idx[br.to_bus]
        y[f, f] += (ys + bc) / (t * np.conj(t))
        y[k, k] += ys + bc
        y[f, k] += -ys / np.conj(t)
        y[k, f] += -ys / t
    for i, bus in enumerate(case.buses):
        y[i, i] += complex(bus.g_shunt, bus.b_shunt) / case.base_mva
    return AdmittanceMatrix(n, y.real.copy(), y.imag.copy())
