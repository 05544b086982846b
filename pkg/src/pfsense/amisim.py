"""Synthetic AMI time series from load shapes, power flow and sensor noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, NoConvergence
from .netmodel import build_admittance
from .powerflow import power_injections, solve_newton_raphson

AMI_HEADER = ("t", "bus", "v", "p", "q")


@dataclass(frozen=True)
class AmiSeries:
    """Per-bus magnitude and injection samples (per unit), shape ``(m, n)``."""

    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    noise_sigma: float = 0.0
    seed: int | None = None
    step_minutes: float = 15.0
    bus_ids: tuple = ()
    clean: "AmiSeries | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        shapes = {np.shape(self.v), np.shape(self.p), np.shape(self.q)}
        if len(shapes) != 1 or np.ndim(self.v) != 2:
            raise DimensionMismatch("v, p and q must share one (m, n) shape")

    @property
    def m(self):
        return self.v.shape[0]

    @property
    def n(self):
        return self.v.shape[1]

    def select(self, positions):
        """Restrict to a subset of bus positions (e.g. the PQ buses)."""
        pos = np.asarray(positions, dtype=int)
        ids = tuple(self.bus_ids[i] for i in pos) if self.bus_ids else ()
        clean = self.clean.select(pos) if self.clean is not None else None
        return AmiSeries(self.v[:, pos], self.p[:, pos], self.q[:, pos], self.noise_sigma,
                         self.seed, self.step_minutes, ids, clean)


def default_loadshape(m, profile="flat", seed=0):
    """Per-step load multipliers.

    ``flat`` is all ones; ``residential`` is a smooth morning/evening
    double peak in [0.4, 1.0] with a small seeded wobble.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    if profile == "flat":
        return np.ones(m)
    if profile not in ("residential", "residential-like"):
        raise ValueError(f"unknown load profile {profile!r}")
    hours = np.arange(m) * 24.0 / max(m, 1)
    curve = (0.35 * np.exp(-0.5 * ((hours - 7.5) / 1.5) ** 2)
             + 0.6 * np.exp(-0.5 * ((hours - 19.0) / 2.5) ** 2))
    rng = np.random.default_rng(seed)
    wobble = np.convolve(rng.normal(0, 0.05, m + 4), np.ones(5) / 5, mode="valid")[:m]
    return np.clip(0.45 + curve + wobble, 0.4, 1.0)


def _load_arrays(case):
    idx = case.id_to_index
    pl = np.array([b.p_load for b in case.buses], dtype=float)
    ql = np.array([b.q_load for b in case.buses], dtype=float)
    return pl, ql, idx


def simulate_series(case, shape, pf_schedule=None, noise_sigma=0.005, seed=0,
                    step_minutes=15.0, relative_noise=True, tol=1e-10, max_iter=20):
    """Drive the power flow with scaled loads and record noisy AMI samples.

    Parameters
    ----------
    case : NetworkCase
    shape : array_like, shape (m,) or (m, n_bus)
        Load multipliers per step (and optionally per bus); must be > 0.
    pf_schedule : None, float, or array_like (m,) / (m, n_bus)
        Load power factors; None keeps each load's own ratio. The reactive
        load keeps the sign of the original (positive if it was zero).
    noise_sigma : float
        Standard deviation of the Gaussian sensor noise, relative to each
        reading (or absolute with ``relative_noise=False``).
    """
    from .observability import k_of_alpha

    pl, ql, _ = _load_arrays(case)
    n = case.n_bus
    shape = np.asarray(shape, dtype=float)
    if shape.ndim == 1:
        shape = np.repeat(shape[:, None], n, axis=1)
    if shape.ndim != 2 or shape.shape[1] != n:
        raise DimensionMismatch("shape must be (m,) or (m, n_bus)")
    if np.any(shape <= 0):
        raise ValueError("load multipliers must be positive")
    m = shape.shape[0]
    if pf_schedule is not None:
        pf = np.broadcast_to(np.asarray(pf_schedule, dtype=float).reshape(
            (-1, 1) if np.ndim(pf_schedule) == 1 else np.shape(pf_schedule)), (m, n))
        kq = k_of_alpha(pf) * np.where(ql < 0, -1.0, 1.0)[None, :]
    sp0, sq0 = case.scheduled_injections()
    base = case.base_mva
    y = build_admittance(case)
    v = np.zeros((m, n))
    p = np.zeros((m, n))
    q = np.zeros((m, n))
    point = None
    for t in range(m):
        pl_t = pl * shape[t]
        ql_t = ql * shape[t] if pf_schedule is None else kq[t] * pl_t
        sp = sp0 + (pl - pl_t) / base
        sq = sq0 + (ql - ql_t) / base
        point = solve_newton_raphson(case, tol=tol, max_iter=max_iter, start=point,
                                     p_sched=sp, q_sched=sq, y=y)
        if not point.converged:
            raise NoConvergence(f"power flow did not converge at step {t}", result=point)
        v[t] = point.v
        p[t], q[t] = power_injections(y, point.v, point.theta)
    clean = AmiSeries(v, p, q, 0.0, seed, step_minutes, tuple(case.bus_ids))
    if noise_sigma == 0:
        return AmiSeries(v, p, q, 0.0, seed, step_minutes, tuple(case.bus_ids), clean)
    rng = np.random.default_rng(seed)
    noisy = []
    for x in (v, p, q):
        e = rng.normal(0.0, noise_sigma, x.shape)
        noisy.append(x * (1.0 + e) if relative_noise else x + e)
    return AmiSeries(*noisy, noise_sigma, seed, step_minutes, tuple(case.bus_ids), clean)


def write_ami_csv(series, path):
    """Long-form CSV ``t,bus,v,p,q``, one row per bus per step."""
    ids = series.bus_ids or tuple(range(series.n))

    def dump(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AMI_HEADER)
        for t in range(series.m):
            for j, b in enumerate(ids):
                w.writerow([t, b] + [format(float(x[t, j]), ".17g")
                                     for x in (series.v, series.p, series.q)])

    if hasattr(path, "write"):
        dump(path)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            dump(fh)


def read_ami_csv(path):
    """Inverse of :func:`write_ami_csv`; buses ordered by first appearance."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip() for h in next(reader, ()))
        if header != AMI_HEADER:
            raise DimensionMismatch(f"AMI CSV header must be {','.join(AMI_HEADER)}")
        rows = [r for r in reader if r]
    steps = sorted({int(r[0]) for r in rows})
    buses = list(dict.fromkeys(int(r[1]) for r in rows))
    ti = {t: i for i, t in enumerate(steps)}
    bi = {b: i for i, b in enumerate(buses)}
    out = np.full((3, len(steps), len(buses)), np.nan)
    for r in rows:
        for k in range(3):
            out[k, ti[int(r[0])], bi[int(r[1])]] = float(r[2 + k])
    if np.isnan(out).any():
        raise DimensionMismatch("AMI CSV is missing bus/step rows")
    return AmiSeries(out[0], out[1], out[2], bus_ids=tuple(buses))


__all__ = ["AmiSeries", "default_loadshape", "simulate_series", "write_ami_csv",
           "read_ami_csv", "AMI_HEADER"]
