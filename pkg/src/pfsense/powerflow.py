"""AC power flow: Newton-Raphson solver and Jacobian assembly (polar form)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, SingularJacobian, SingularMatrix
from .netmodel import PQ, PV, SLACK, build_admittance
from .numkit import lu_solve

logger = logging.getLogger(__name__)

BUS_SETS = ("pq", "nonslack")


@dataclass(frozen=True)
class OperatingPoint:
    """Bus voltages and net injections (per unit, radians)."""

    v: np.ndarray
    theta: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    converged: bool = True
    mismatch_norm: float = 0.0
    iterations: int = 0
    kinds: tuple = ()
    bus_ids: tuple = ()

    @property
    def n_bus(self):
        return self.v.size

    @property
    def vbar(self):
        return self.v * np.exp(1j * self.theta)


@dataclass(frozen=True)
class JacobianBlocks:
    dp_dtheta: np.ndarray
    dp_dv: np.ndarray
    dq_dtheta: np.ndarray
    dq_dv: np.ndarray
    bus_set: str = "pq"
    index_map: tuple = ()
    positions: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.dp_dtheta.shape[0]

    @property
    def matrix(self):
        """The assembled ``2n x 2n`` Jacobian ``[[dp/dth, dp/dv], [dq/dth, dq/dv]]``."""
        return np.block([[self.dp_dtheta, self.dp_dv],
                         [self.dq_dtheta, self.dq_dv]])

    @classmethod
    def from_matrix(cls, j, bus_set="custom", index_map=()):
        j = np.asarray(j, dtype=float)
        n = j.shape[0] // 2
        if j.shape != (2 * n, 2 * n):
            raise DimensionMismatch(f"Jacobian must be 2n x 2n, got {j.shape}")
        return cls(j[:n, :n], j[:n, n:], j[n:, :n], j[n:, n:], bus_set,
                   tuple(index_map) or tuple(range(n)))


def _y_complex(y):
    return y.y if hasattr(y, "y") else np.asarray(y, dtype=complex)


def power_injections(y, v, theta):
    """Computed injections ``p_i, q_i`` from the power balance equations."""
    Y = _y_complex(y)
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not (Y.shape == (v.size, v.size) and theta.size == v.size):
        raise DimensionMismatch("voltage vectors do not match the admittance matrix")
    vbar = v * np.exp(1j * theta)
    s = vbar * np.conj(Y @ vbar)
    return s.real, s.imag


def power_mismatch(y, v, theta, p_sched, q_sched):
    """Scheduled minus computed injections, ``(dp, dq)``."""
    p_sched = np.asarray(p_sched, dtype=float)
    q_sched = np.asarray(q_sched, dtype=float)
    if p_sched.shape != np.shape(v) or q_sched.shape != np.shape(v):
        raise DimensionMismatch("scheduled injections do not match the voltage vector")
    p, q = power_injections(y, v, theta)
    return p_sched - p, q_sched - q


def _dS_dV(Y, vbar):
    """Full complex derivatives of bus injections w.r.t. angle and magnitude."""
    ibus = Y @ vbar
    vnorm = vbar / np.abs(vbar)
    ds_dth = 1j * vbar[:, None] * np.conj(np.diag(ibus) - Y * vbar[None, :])
    ds_dv = vbar[:, None] * np.conj(Y * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    return ds_dth, ds_dv


def bus_positions(kinds, bus_set):
    """Matrix positions retained for ``bus_set`` (``pq`` or ``nonslack``)."""
    if bus_set == "pq":
        keep = [i for i, k in enumerate(kinds) if k == PQ]
    elif bus_set == "nonslack":
        keep = [i for i, k in enumerate(kinds) if k != SLACK]
    else:
        raise ValueError(f"bus_set must be one of {BUS_SETS}, got {bus_set!r}")
    return np.array(keep, dtype=int)


def _resolve(point, bus_set):
    if isinstance(bus_set, str):
        pos = bus_positions(point.kinds, bus_set)
        name = bus_set
    else:
        pos = np.asarray(bus_set, dtype=int)
        name = "custom"
    ids = tuple(point.bus_ids[i] for i in pos) if point.bus_ids else tuple(pos.tolist())
    return pos, name, ids


def assemble_jacobian(y, point, bus_set="pq"):
    """Analytic Jacobian blocks at ``point`` restricted to ``bus_set``.

    ``bus_set`` is ``"pq"`` (PQ buses only), ``"nonslack"`` (every bus except
    the slack, each with both angle and magnitude) or an explicit array of
    bus positions. Buses outside the set are treated as fixed phasors.
    """
    Y = _y_complex(y)
    if Y.shape != (point.n_bus, point.n_bus):
        raise DimensionMismatch("operating point does not match the admittance matrix")
    pos, name, ids = _resolve(point, bus_set)
    ds_dth, ds_dv = _dS_dV(Y, point.vbar)
    sub = np.ix_(pos, pos)
    return JacobianBlocks(ds_dth.real[sub], ds_dv.real[sub], ds_dth.imag[sub],
                          ds_dv.imag[sub], name, ids, pos)


def finite_difference_jacobian(y, point, h=1e-6, bus_set="pq"):
    """Central-difference Jacobian of the power balance equations."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    Y = _y_complex(y)
    pos, name, ids = _resolve(point, bus_set)
    n = pos.size
    blocks = {k: np.zeros((n, n)) for k in ("pt", "pv", "qt", "qv")}
    for col, bus in enumerate(pos):
        for var in ("t", "v"):
            up_v, up_t = point.v.copy(), point.theta.copy()
            dn_v, dn_t = point.v.copy(), point.theta.copy()
            if var == "t":
                up_t[bus] += h
                dn_t[bus] -= h
            else:
                up_v[bus] += h
                dn_v[bus] -= h
            p1, q1 = power_injections(Y, up_v, up_t)
            p0, q0 = power_injections(Y, dn_v, dn_t)
            blocks["p" + var][:, col] = (p1 - p0)[pos] / (2 * h)
            blocks["q" + var][:, col] = (q1 - q0)[pos] / (2 * h)
    return JacobianBlocks(blocks["pt"], blocks["pv"], blocks["qt"], blocks["qv"],
                          name, ids, pos)


# -- Newton-Raphson -----------------------------------------------------------

def effective_kinds(case):
    """Bus kinds used by the solver: PV buses without an online generator become PQ."""
    gen_buses = {g.bus for g in case.gens if g.status > 0}
    kinds = []
    for b in case.buses:
        if b.kind == PV and b.id not in gen_buses:
            kinds.append(PQ)
        else:
            kinds.append(b.kind)
    return kinds


def voltage_setpoints(case):
    """Initial magnitudes with generator setpoints applied at slack/PV buses."""
    idx = case.id_to_index
    v = np.array([b.v_init for b in case.buses], dtype=float)
    seen = set()
    for g in case.gens:
        i = idx[g.bus]
        if g.status > 0 and i not in seen and case.buses[i].kind in (SLACK, PV):
            v[i] = g.vg
            seen.add(i)
    return v


def newton_raphson(Y, v, theta, p_sched, q_sched, kinds, tol=1e-8, max_iter=20):
    """Core NR loop on explicit kinds; buses of kind ``slack`` stay fixed.

    Returns ``(v, theta, converged, mismatch_norm, iterations)``.
    """
    v = np.array(v, dtype=float)
    theta = np.array(theta, dtype=float)
    pv = np.array([i for i, k in enumerate(kinds) if k == PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k == PQ], dtype=int)
    ang = np.concatenate([pv, pq])
    n_ang = ang.size

    def mismatch():
        dp, dq = power_mismatch(Y, v, theta, p_sched, q_sched)
        return np.concatenate([dp[ang], dq[pq]])

    f = mismatch()
    norm = float(np.abs(f).max()) if f.size else 0.0
    it = 0
    while norm > tol and it < max_iter:
        ds_dth, ds_dv = _dS_dV(Y, v * np.exp(1j * theta))
        jac = np.block([
            [ds_dth.real[np.ix_(ang, ang)], ds_dv.real[np.ix_(ang, pq)]],
            [ds_dth.imag[np.ix_(pq, ang)], ds_dv.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = lu_solve(jac, f)
        except SingularMatrix as exc:
            raise SingularJacobian(f"Jacobian singular at iteration {it}: {exc}") from None
        theta[ang] += dx[:n_ang]
        v[pq] += dx[n_ang:]
        it += 1
        f = mismatch()
        norm = float(np.abs(f).max())
    return v, theta, norm <= tol, norm, it


def solve_newton_raphson(case, tol=1e-8, max_iter=20, flat_start=True,
                         start=None, p_sched=None, q_sched=None, kinds=None, y=None):
    """Solve the AC power flow of ``case``.

    Parameters
    ----------
    case : NetworkCase
    tol : float
        Infinity-norm tolerance on the per-unit mismatch.
    max_iter : int
    flat_start : bool
        Start from 1 pu / 0 rad (setpoints kept at slack and PV buses).
        Ignored when ``start`` is given.
    start : OperatingPoint, optional
        Warm start.
    p_sched, q_sched : array_like, optional
        Override the scheduled net injections (per unit).
    kinds : sequence of str, optional
        Override bus kinds, e.g. to hold extra buses fixed (``"slack"``)
        or release PV buses (``"pq"``).

    Returns
    -------
    OperatingPoint
        ``converged`` is False when ``max_iter`` is reached.
    """
    Y = build_admittance(case).y if y is None else _y_complex(y)
    kinds = list(effective_kinds(case) if kinds is None else kinds)
    sp, sq = case.scheduled_injections()
    p_sched = sp if p_sched is None else np.asarray(p_sched, dtype=float)
    q_sched = sq if q_sched is None else np.asarray(q_sched, dtype=float)
    setpoints = voltage_setpoints(case)
    if start is not None:
        v0, th0 = start.v.copy(), start.theta.copy()
        # a warm start supplies the state only; setpoints still come from the case
        eff = effective_kinds(case)
        for i, (k, e) in enumerate(zip(kinds, eff)):
            if k == e and e in (SLACK, PV):
                v0[i] = setpoints[i]
        if kinds[case.slack_index] == SLACK:
            th0[case.slack_index] = math.radians(case.buses[case.slack_index].theta_init)
    elif flat_start:
        v0 = np.where(np.array(kinds) == PQ, 1.0, setpoints)
        th0 = np.zeros(case.n_bus)
        th0[case.slack_index] = math.radians(case.buses[case.slack_index].theta_init)
    else:
        v0 = setpoints.copy()
        th0 = np.radians([b.theta_init for b in case.buses])
    v, theta, ok, norm, it = newton_raphson(Y, v0, th0, p_sched, q_sched, kinds,
                                            tol=tol, max_iter=max_iter)
    if not ok:
        logger.warning("Newton-Raphson did not converge in %d iterations "
                       "(mismatch %.3e)", it, norm)
    p, q = power_injections(Y, v, theta)
    return OperatingPoint(v, theta, p, q, bool(ok), norm, it,
                          tuple(effective_kinds(case)), tuple(case.bus_ids))
