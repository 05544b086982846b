"""Voltage sensitivity matrices by three independent routes.

* inverse Jacobian (and its Schur-complement form),
* phasor sensitivities from the differentiated complex power balance,
* perturb-and-observe with repeated power flow solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionMismatch,
    NoConvergence,
    SingularBlock,
    SingularJacobian,
    SingularMatrix,
    ZeroVoltage,
)
from .netmodel import PQ, SLACK
from .numkit import condition_number, lu_solve
from .powerflow import JacobianBlocks, _resolve, _y_complex, newton_raphson

COND_LIMIT = 1e12


@dataclass(frozen=True)
class SensitivityBlocks:
    s_theta_p: np.ndarray
    s_theta_q: np.ndarray
    s_v_p: np.ndarray
    s_v_q: np.ndarray
    bus_set: str = "pq"
    index_map: tuple = ()
    s_wide: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "s_wide", np.hstack([self.s_v_p, self.s_v_q]))

    @property
    def n(self):
        return self.s_v_p.shape[0]

    @property
    def matrix(self):
        return np.block([[self.s_theta_p, self.s_theta_q],
                         [self.s_v_p, self.s_v_q]])


@dataclass(frozen=True)
class PhasorSensitivity:
    """Complex sensitivities of the unknown bus phasors to injections at one bus."""

    target_bus: int
    dv_dp: np.ndarray
    dv_dq: np.ndarray
    positions: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class DistinctnessReport:
    pairs: list
    n_checked: int
    tol: float

    @property
    def n_violations(self):
        return len(self.pairs)


def invert_jacobian(j):
    """Blocks of ``J^-1``; raises SingularJacobian if ``cond(J) > 1e12``."""
    jm = j.matrix
    n = j.n
    if n == 0:
        raise SingularJacobian("empty Jacobian (no buses in the selected set)")
    if condition_number(jm) > COND_LIMIT:
        raise SingularJacobian("Jacobian condition number exceeds 1e12")
    try:
        s = lu_solve(jm, np.eye(2 * n))
    except SingularMatrix as exc:
        raise SingularJacobian(str(exc)) from None
    return SensitivityBlocks(s[:n, :n], s[:n, n:], s[n:, :n], s[n:, n:],
                             j.bus_set, j.index_map)


def schur_sensitivities(j):
    """Magnitude blocks of ``J^-1`` through the Schur complement of dp/dtheta.

    Returns
    -------
    s_v_q, s_v_p : ndarray
    """
    a = j.dp_dtheta
    if a.size == 0 or condition_number(a) > COND_LIMIT:
        raise SingularBlock("dp/dtheta is singular")
    try:
        a_inv_b = lu_solve(a, j.dp_dv)
        # (dq/dth) A^-1 computed as (A^-T dq/dth^T)^T
        c_a_inv = lu_solve(a.T, j.dq_dtheta.T).T
        schur = j.dq_dv - j.dq_dtheta @ a_inv_b
        if condition_number(schur) > COND_LIMIT:
            raise SingularBlock("Schur complement is singular")
        s_v_q = lu_solve(schur, np.eye(schur.shape[0]))
    except SingularMatrix as exc:
        raise SingularBlock(str(exc)) from None
    s_v_p = -s_v_q @ c_a_inv
    return s_v_q, s_v_p


# -- phasor route -------------------------------------------------------------

def phasor_system(y, point, bus_set="pq"):
    """Real ``2n x 2n`` coefficient matrix of the phasor-sensitivity equations.

    Unknowns are ordered ``[Re dv_1..Re dv_n, Im dv_1..Im dv_n]`` over the
    buses of ``bus_set``; the remaining buses are fixed phasors.
    """
    Y = _y_complex(y)
    pos, _, _ = _resolve(point, bus_set)
    vbar = point.vbar
    ibus = (Y @ vbar)[pos]
    c = np.conj(vbar[pos])[:, None] * Y[np.ix_(pos, pos)]
    n = pos.size
    a = np.zeros((2 * n, 2 * n))
    a[:n, :n] = c.real + np.diag(ibus.real)
    a[:n, n:] = -c.imag + np.diag(ibus.imag)
    a[n:, :n] = c.imag + np.diag(ibus.imag)
    a[n:, n:] = c.real - np.diag(ibus.real)
    return a, pos


def phasor_rhs(n, l_pos, wrt):
    """Right-hand side ``1{i=l}`` (active) or ``-j 1{i=l}`` (reactive), complex."""
    rhs = np.zeros(n, dtype=complex)
    if wrt == "p":
        rhs[l_pos] = 1.0
    elif wrt == "q":
        rhs[l_pos] = -1j
    else:
        raise ValueError("wrt must be 'p' or 'q'")
    return rhs


def _split(z):
    return np.concatenate([z.real, z.imag], axis=0)


def _join(x, n):
    return x[:n] + 1j * x[n:]


def phasor_sensitivities(y, point, l, bus_set="pq"):
    """Phasor sensitivities ``dvbar_i/dp_l`` and ``dvbar_i/dq_l``.

    ``l`` is a bus id that must belong to ``bus_set``.
    """
    a, pos = phasor_system(y, point, bus_set)
    ids = list(point.bus_ids) if point.bus_ids else list(range(point.n_bus))
    try:
        l_pos = list(pos).index(ids.index(l))
    except ValueError:
        raise ValueError(f"bus {l} is not in the selected bus set") from None
    n = pos.size
    rhs = np.column_stack([_split(phasor_rhs(n, l_pos, "p")),
                           _split(phasor_rhs(n, l_pos, "q"))])
    x = lu_solve(a, rhs)
    return PhasorSensitivity(l, _join(x[:, 0], n), _join(x[:, 1], n), pos)


def phasor_sensitivity_matrices(y, point, bus_set="pq"):
    """All-bus phasor sensitivities with one factorisation.

    Returns complex ``(n, n)`` matrices whose column ``l`` holds
    ``dvbar/dp_l`` and ``dvbar/dq_l``.
    """
    a, pos = phasor_system(y, point, bus_set)
    n = pos.size
    eye = np.eye(n)
    rhs = np.hstack([_split(eye.astype(complex)), _split(-1j * eye)])
    x = lu_solve(a, rhs)
    z = _join(x, n)
    return z[:, :n], z[:, n:], pos


def phasor_residual(y, point, ps, wrt, bus_set="pq"):
    """Complex residual of the defining equations, evaluated directly."""
    Y = _y_complex(y)
    pos, _, _ = _resolve(point, bus_set)
    vbar = point.vbar
    dv = ps.dv_dp if wrt == "p" else ps.dv_dq
    full = np.zeros(point.n_bus, dtype=complex)
    full[pos] = dv
    lhs = np.conj(full) * (Y @ vbar) + np.conj(vbar) * (Y @ full)
    ids = list(point.bus_ids) if point.bus_ids else list(range(point.n_bus))
    l_pos = list(pos).index(ids.index(ps.target_bus))
    return lhs[pos] - phasor_rhs(pos.size, l_pos, wrt)


def magnitude_from_phasor(point, ps, wrt="p"):
    """Magnitude sensitivities ``Re{conj(vbar_i) dvbar_i} / v_i`` over the bus set.

    ``ps`` may be a :class:`PhasorSensitivity` or a raw complex array aligned
    with ``point`` (full length) .
    """
    if isinstance(ps, PhasorSensitivity):
        dv = ps.dv_dp if wrt == "p" else ps.dv_dq
        pos = ps.positions
    else:
        dv = np.asarray(ps, dtype=complex)
        pos = np.arange(point.n_bus) if dv.ndim == 1 and dv.size == point.n_bus else None
        if pos is None:
            raise DimensionMismatch("raw phasor sensitivities must cover every bus")
    v = point.v[pos]
    if np.any(v <= 1e-9):
        raise ZeroVoltage("voltage magnitude at or below 1e-9 pu")
    vbar = point.vbar[pos]
    if dv.ndim == 2:
        return (np.conj(vbar)[:, None] * dv).real / v[:, None]
    return (np.conj(vbar) * dv).real / v


def phasor_magnitude_blocks(y, point, bus_set="pq"):
    """``(s_v_p, s_v_q)`` obtained entirely through the phasor route."""
    dp, dq, pos = phasor_sensitivity_matrices(y, point, bus_set)
    v = point.v[pos]
    if np.any(v <= 1e-9):
        raise ZeroVoltage("voltage magnitude at or below 1e-9 pu")
    conj_v = np.conj(point.vbar[pos])[:, None]
    return (conj_v * dp).real / v[:, None], (conj_v * dq).real / v[:, None]


def distinctness_check(s_v_p, s_v_q, point=None, tol=1e-9):
    """Flag ``(i, l)`` pairs where active and reactive sensitivities coincide.

    A pair is flagged when ``|s_v_p[i,l] - s_v_q[i,l]| <= tol`` or when
    either sensitivity is within ``tol`` of zero.
    """
    s_v_p = np.asarray(s_v_p, dtype=float)
    s_v_q = np.asarray(s_v_q, dtype=float)
    if s_v_p.shape != s_v_q.shape:
        raise DimensionMismatch("sensitivity blocks differ in shape")
    bad = ((np.abs(s_v_p - s_v_q) <= tol) | (np.abs(s_v_p) <= tol)
           | (np.abs(s_v_q) <= tol))
    pairs = [tuple(int(k) for k in ij) for ij in np.argwhere(bad)]
    return DistinctnessReport(pairs, s_v_p.size, tol)


# -- perturb and observe ------------------------------------------------------

def perturb_and_observe(case, point, eps=1e-4, bus_set="pq", tol=1e-13, max_iter=20,
                        y=None):
    """Empirical ``(s_v_p, s_v_q)`` from single-bus injection perturbations.

    Buses outside ``bus_set`` (and the slack) are held at their phasors from
    ``point``, so the result estimates the same matrices as the inverse of
    ``assemble_jacobian(y, point, bus_set)``. Each solve is warm-started
    from ``point``. ``tol`` must sit well below ``eps**2``, otherwise the
    solve stops after one Newton step and merely reproduces the Jacobian.
    """
    if eps == 0:
        raise ValueError("perturbation size must be nonzero")
    from .netmodel import build_admittance

    Y = build_admittance(case).y if y is None else _y_complex(y)
    pos, _, _ = _resolve(point, bus_set)
    kinds = [SLACK] * point.n_bus
    for i in pos:
        kinds[i] = PQ
    n = pos.size
    out = {"p": np.zeros((n, n)), "q": np.zeros((n, n))}
    for col, bus in enumerate(pos):
        for wrt in ("p", "q"):
            p_sched = point.p_inj.copy()
            q_sched = point.q_inj.copy()
            (p_sched if wrt == "p" else q_sched)[bus] += eps
            v, _, ok, norm, _ = newton_raphson(Y, point.v, point.theta, p_sched, q_sched,
                                               kinds, tol=tol, max_iter=max_iter)
            if not ok:
                raise NoConvergence(
                    f"perturbed solve at bus {point.bus_ids[bus] if point.bus_ids else bus} "
                    f"({wrt}) did not converge, mismatch {norm:.3e}")
            out[wrt][:, col] = (v[pos] - point.v[pos]) / eps
    return out["p"], out["q"]


def sensitivities(y, point, bus_set="pq", route="inverse", case=None, eps=1e-5):
    """``(s_v_p, s_v_q)`` by the named route (inverse, schur, phasor, perturb)."""
    from .powerflow import assemble_jacobian

    if route == "inverse":
        s = invert_jacobian(assemble_jacobian(y, point, bus_set))
        return s.s_v_p, s.s_v_q
    if route == "schur":
        s_v_q, s_v_p = schur_sensitivities(assemble_jacobian(y, point, bus_set))
        return s_v_p, s_v_q
    if route == "phasor":
        return phasor_magnitude_blocks(y, point, bus_set)
    if route == "perturb":
        if case is None:
            raise ValueError("perturb route needs the case")
        return perturb_and_observe(case, point, eps=eps, bus_set=bus_set, y=y)
    raise ValueError(f"unknown route {route!r}")


__all__ = [
    "SensitivityBlocks", "PhasorSensitivity", "DistinctnessReport", "JacobianBlocks",
    "invert_jacobian", "schur_sensitivities", "phasor_system", "phasor_rhs",
    "phasor_sensitivities", "phasor_sensitivity_matrices", "phasor_residual",
    "magnitude_from_phasor", "phasor_magnitude_blocks", "distinctness_check",
    "perturb_and_observe", "sensitivities",
]
