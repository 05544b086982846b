"""Power-factor encoding and the invertibility conditions for phaseless recovery.

The sufficient condition is a Neumann-series argument on
``M = k_max * dp/dtheta - dq/dtheta``; the necessary-and-sufficient condition
is positive definiteness of ``S_dag = S_vp + S_vq K``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    AllZeroInjections,
    DomainError,
    PfsenseError,
    SingularM,
    SingularMatrix,
    SingularK,
)
from .numkit import (
    PD_TOL,
    condition_number,
    eigenvalues,
    lu_solve,
    min_real_eig_sym_part,
    smallest_singular_value,
    spectral_norm,
)

logger = logging.getLogger(__name__)

APPARENT_TOL = 1e-6


@dataclass(frozen=True)
class PowerFactorProfile:
    """Per-bus power factors and the diagonal of ``K``.

    ``alpha`` holds NaN for zero-injection buses until they are imputed;
    ``zero_injection_buses`` lists those positions.
    """

    alpha: np.ndarray
    signs: np.ndarray
    k_diag: np.ndarray
    zero_injection_buses: tuple = ()

    @property
    def n(self):
        return self.k_diag.size

    @property
    def k_abs(self):
        return np.abs(self.k_diag)

    @property
    def k_min(self):
        return float(np.nanmin(self.k_abs)) if self.n else float("nan")

    @property
    def k_max(self):
        return float(np.nanmax(self.k_abs)) if self.n else float("nan")

    @property
    def delta_k(self):
        return self.k_max - self.k_min

    @property
    def alpha_range(self):
        if not self.n or np.all(np.isnan(self.alpha)):
            return (float("nan"), float("nan"))
        return (float(np.nanmin(self.alpha)), float(np.nanmax(self.alpha)))

    @property
    def mixed_sign(self):
        """True when the network has both lagging and leading buses."""
        s = self.signs[~np.isnan(self.k_diag) & (self.k_diag != 0)]
        return bool(s.size and np.any(s > 0) and np.any(s < 0))


def power_factors(p, q):
    """Power factors ``alpha = |p| / |s|`` and the signs of ``K``.

    Returns
    -------
    alpha : ndarray
        NaN where the apparent power is below 1e-6 pu.
    signs : ndarray
        ``sign(p * q)`` (``+1`` where that product is zero), so that
        ``q = K p`` holds with ``K_ii = signs_i * k(alpha_i)``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    s = np.hypot(p, q)
    alpha = np.full(p.shape, np.nan)
    ok = s >= APPARENT_TOL
    alpha[ok] = np.abs(p[ok]) / s[ok]
    signs = np.where(p * q < 0, -1.0, 1.0)
    return alpha, signs


def k_of_alpha(alpha):
    """``k = sqrt(1 - alpha^2) / alpha`` for ``alpha`` in (0, 1]."""
    a = np.asarray(alpha, dtype=float)
    if np.any(~(a > 0)) or np.any(a > 1):
        raise DomainError("power factor must lie in (0, 1]")
    k = np.sqrt(np.maximum(1.0 - a * a, 0.0)) / a
    return float(k) if k.ndim == 0 else k


def k_inverse(k):
    """Inverse of :func:`k_of_alpha` on ``k >= 0``: ``sqrt(1 / (k^2 + 1))``."""
    k = np.asarray(k, dtype=float)
    if np.any(~(k >= 0)):
        raise DomainError("k must be nonnegative")
    a = np.sqrt(1.0 / (k * k + 1.0))
    return float(a) if a.ndim == 0 else a


def profile_from_injections(p, q):
    """Build a profile straight from injection vectors (zero buses marked)."""
    alpha, signs = power_factors(p, q)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    k = np.full(alpha.shape, np.nan)
    ok = ~np.isnan(alpha)
    # |q|/|p| equals k(alpha) without the cancellation near alpha = 1;
    # purely reactive buses get an infinite k and are imputed later
    with np.errstate(divide="ignore"):
        k[ok] = signs[ok] * np.abs(q[ok]) / np.abs(p[ok])
    return PowerFactorProfile(alpha, signs, k, tuple(np.flatnonzero(~ok).tolist()))


def profile_from_point(point, bus_set="pq", preprocess=True, tol=APPARENT_TOL):
    """Profile over the buses of ``bus_set`` at an operating point."""
    from .powerflow import _resolve

    pos, _, _ = _resolve(point, bus_set)
    prof = profile_from_injections(point.p_inj[pos], point.q_inj[pos])
    return preprocess_zero_injections(prof, tol) if preprocess else prof


def preprocess_zero_injections(profile, tol=APPARENT_TOL):
    """Impute marked buses with the mean of the remaining ``|K_ii|``.

    Buses whose ``|p|`` is below ``tol`` (zero injection or purely reactive)
    count as marked too, since ``k`` is not finite there.
    """
    k = profile.k_diag
    marked = np.isnan(k) | ~np.isfinite(k)
    good = ~marked
    if profile.n == 0:
        return profile
    if not np.any(good):
        raise AllZeroInjections("no bus has a nonzero injection to average over")
    if not np.any(marked):
        return profile
    fill = float(np.mean(np.abs(k[good])))
    k_new = k.copy()
    k_new[marked] = fill
    alpha = profile.alpha.copy()
    alpha[marked] = k_inverse(fill)
    signs = profile.signs.copy()
    signs[marked] = 1.0
    zeros = tuple(sorted(set(profile.zero_injection_buses)
                         | set(np.flatnonzero(marked).tolist())))
    return PowerFactorProfile(alpha, signs, k_new, zeros)


def build_K(profile, signed=True):
    """Diagonal ``K``; ``signed=False`` gives the positive branch ``|K|``."""
    k = profile.k_diag if signed else profile.k_abs
    if np.any(~np.isfinite(k)):
        raise AllZeroInjections("profile has unimputed zero-injection buses")
    return np.diag(k)


def _k_matrix(k):
    k = np.asarray(k, dtype=float)
    return np.diag(k) if k.ndim == 1 else k


def s_dagger(blocks, K):
    """``S_dag = S_vp + S_vq K``."""
    K = _k_matrix(K)
    return blocks.s_v_p + blocks.s_v_q @ K


def s_ddagger(blocks, K):
    """``S_ddag = S_vp K^-1 + S_vq``; raises SingularK if any ``K_ii = 0``."""
    K = _k_matrix(K)
    d = np.diag(K)
    if np.any(d == 0) or np.any(~np.isfinite(d)):
        raise SingularK("K has a zero diagonal entry")
    return blocks.s_v_p / d[None, :] + blocks.s_v_q


@dataclass
class ObservabilityReport:
    """All quantities of one row of the validation tables."""

    case: str = ""
    bus_set: str = "pq"
    n: int = 0
    assumption1_dp_dtheta_pd: bool = False
    jacobian_invertible: bool = False
    lambda_min_J_sv: float = float("nan")
    lambda_min_J_eig: float = float("nan")
    alpha_min: float = float("nan")
    alpha_max: float = float("nan")
    k_min: float = float("nan")
    k_max: float = float("nan")
    delta_k: float = float("nan")
    m_pd: bool = False
    bound_strict: float = float("nan")
    value_neumann: float = float("nan")
    thm1_holds: bool = False
    min_eig_s_dagger: float = float("nan")
    min_eig_s_ddagger: float = float("nan")
    thm2_holds: bool = False
    mixed_sign: bool = False
    error: str = ""
    annotation: str = ""

    @property
    def alpha_range(self):
        return (self.alpha_min, self.alpha_max)

    @property
    def alpha_spread(self):
        return self.alpha_max - self.alpha_min

    @property
    def lambda_min_J(self):
        return (self.lambda_min_J_sv, self.lambda_min_J_eig)

    def as_dict(self):
        return asdict(self)


def _assumption1(j, report):
    report.assumption1_dp_dtheta_pd = bool(min_real_eig_sym_part(j.dp_dtheta) > PD_TOL)
    jm = j.matrix
    report.lambda_min_J_sv = smallest_singular_value(jm)
    report.lambda_min_J_eig = float(np.abs(eigenvalues(jm)).min())
    report.jacobian_invertible = bool(condition_number(jm) <= 1e12)


def theorem1_check(j, profile, report=None):
    """Evaluate the sufficient condition on the positive branch of ``K``.

    Fills the assumption flags, ``delta_k``, ``bound_strict``,
    ``value_neumann`` and ``thm1_holds`` of ``report`` (a new one if None).

    Raises
    ------
    SingularM
        If ``M = k_max dp/dtheta - dq/dtheta`` is singular.
    """
    report = ObservabilityReport(bus_set=j.bus_set, n=j.n) if report is None else report
    _assumption1(j, report)
    k = profile.k_abs
    k_max = profile.k_max
    report.alpha_min, report.alpha_max = profile.alpha_range
    report.k_min, report.k_max = profile.k_min, k_max
    report.delta_k = profile.delta_k
    report.mixed_sign = profile.mixed_sign
    m = k_max * j.dp_dtheta - j.dq_dtheta
    report.m_pd = bool(min_real_eig_sym_part(m) > PD_TOL)
    if condition_number(m) > 1e12:
        raise SingularM("M = k_max dp/dtheta - dq/dtheta is singular")
    try:
        prod = lu_solve(m, (k_max - k)[:, None] * j.dp_dtheta)
    except SingularMatrix as exc:
        raise SingularM(str(exc)) from None
    report.value_neumann = spectral_norm(prod)
    report.bound_strict = smallest_singular_value(m) / spectral_norm(j.dp_dtheta)
    report.thm1_holds = bool(report.value_neumann < 1)
    return report


def theorem2_check(s_dag, s_ddag=None):
    """Minimum eigenvalues of the symmetric parts of ``S_dag`` and ``S_ddag``.

    Returns
    -------
    min_eig_dag, min_eig_ddag, holds
        ``min_eig_ddag`` is NaN when ``s_ddag`` is None; ``holds`` is
        ``min_eig_dag > 1e-10``.
    """
    lo = min_real_eig_sym_part(s_dag)
    lo2 = float("nan") if s_ddag is None else min_real_eig_sym_part(s_ddag)
    return lo, lo2, bool(lo > PD_TOL)


def alpha_min_of(alpha_max, dk_max):
    """``k^-1(k(alpha_max) + dk_max)``: the smallest power factor still covered."""
    return k_inverse(k_of_alpha(alpha_max) + dk_max)


def alpha_min_curve(j, profile, alpha_max_grid):
    """Smallest feasible power factor for each ``alpha_max`` on the grid.

    Uses ``alpha_min = k^-1(k(alpha_max) + dk_max)`` with ``dk_max`` equal
    to the strict bound at the operating point.
    """
    dk = theorem1_check(j, profile).bound_strict
    grid = np.asarray(alpha_max_grid, dtype=float)
    return [(float(a), float(alpha_min_of(a, dk))) for a in grid]


def check_point(y, point, bus_set="pq", name=""):
    """Full report at a solved operating point."""
    from .powerflow import assemble_jacobian
    from .sensitivity import invert_jacobian

    j = assemble_jacobian(y, point, bus_set)
    report = ObservabilityReport(case=name, bus_set=j.bus_set, n=j.n)
    if j.n == 0:
        report.error = "no buses in the selected set"
        return report
    profile = profile_from_point(point, bus_set)
    try:
        theorem1_check(j, profile, report)
    except SingularM as exc:
        report.error = f"SingularM: {exc}"
    if not report.jacobian_invertible:
        report.error = (report.error + "; " if report.error else "") + "Jacobian is singular"
        return report
    blocks = invert_jacobian(j)
    kpos = profile.k_abs
    sd = s_dagger(blocks, kpos)
    try:
        sdd = s_ddagger(blocks, kpos)
    except SingularK:
        sdd = None
    (report.min_eig_s_dagger, report.min_eig_s_ddagger,
     report.thm2_holds) = theorem2_check(sd, sdd)
    if report.mixed_sign:
        report.annotation = "mixed leading/lagging power factors"
    return report


def check_case(case, bus_set="pq", tol=1e-10):
    """Solve ``case`` and report every theorem quantity; never raises on domain errors."""
    from .netmodel import build_admittance, load_case
    from .powerflow import solve_newton_raphson

    if isinstance(case, str):
        try:
            case = load_case(case)
        except PfsenseError as exc:
            name = Path(case).stem
            logger.warning("%s: %s", name, exc)
            return ObservabilityReport(case=name, bus_set=bus_set,
                                       error=f"{type(exc).__name__}: {exc}")
    name = case.name
    try:
        y = build_admittance(case)
        point = solve_newton_raphson(case, tol=tol)
        if not point.converged:
            return ObservabilityReport(case=name, bus_set=bus_set,
                                       error="power flow did not converge")
        return check_point(y, point, bus_set, name)
    except PfsenseError as exc:
        logger.warning("%s: %s", name, exc)
        return ObservabilityReport(case=name, bus_set=bus_set,
                                   error=f"{type(exc).__name__}: {exc}")


def report_table(cases, bus_set="pq"):
    """One report per case, in input order."""
    return [check_case(c, bus_set) for c in cases]


# headline columns first, then the supporting quantities
TABLE_COLUMNS = (
    "case", "assumption1_dp_dtheta_pd", "jacobian_invertible", "lambda_min_J_sv",
    "lambda_min_J_eig", "alpha_spread", "delta_k", "bound_strict", "value_neumann",
    "thm1_holds", "thm2_holds", "alpha_min", "alpha_max", "k_min", "k_max",
    "min_eig_s_dagger", "min_eig_s_ddagger", "m_pd", "mixed_sign", "bus_set", "n",
    "error", "annotation",
)


def _cell(v, machine=True):
    if isinstance(v, (bool, np.bool_)):
        return "Yes" if v else "No"
    if isinstance(v, float):
        if math.isnan(v):
            return "n/a"
        return format(v, ".17g") if machine else f"{v:.4g}"
    return str(v)


def report_render(reports, fmt="csv", machine=True):
    """Render one report or a list as CSV, JSON, or a fixed-width text table.

    Booleans render as Yes/No and NaN as ``n/a`` (``null`` in JSON); numbers
    carry 17 significant digits when ``machine`` is True, else 4.
    """
    if isinstance(reports, ObservabilityReport):
        reports = [reports]
    if fmt == "json":
        rows = []
        for r in reports:
            d = {k: getattr(r, k) for k in TABLE_COLUMNS}
            rows.append({k: (None if isinstance(v, float) and math.isnan(v) else v)
                         for k, v in d.items()})
        return json.dumps(rows, indent=2)
    cells = [[_cell(getattr(r, k), machine) for k in TABLE_COLUMNS] for r in reports]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        w.writerows(cells)
        return buf.getvalue()
    if fmt == "text":
        header = list(TABLE_COLUMNS)
        widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h)
                  for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


__all__ = [
    "PowerFactorProfile", "ObservabilityReport", "power_factors", "k_of_alpha",
    "k_inverse", "profile_from_injections", "profile_from_point",
    "preprocess_zero_injections", "build_K", "s_dagger", "s_ddagger",
    "theorem1_check", "theorem2_check", "alpha_min_of", "alpha_min_curve", "check_point",
    "check_case", "report_table", "report_render", "TABLE_COLUMNS",
]
