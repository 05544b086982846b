"""Low-rank approximation and completion of partially known sensitivity matrices.

Convex programs are solved by projected proximal gradient: a gradient step on
the smooth data term, singular value thresholding for the nuclear norm, then
projection of the known-entry deviations onto a Frobenius ball of radius
``delta``. A descent safeguard keeps the objective trace nonincreasing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionMismatch, EmptyGroup
from .numkit import nuclear_norm, spectral_norm, svd, svt, truncate

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.125
DEFAULT_DELTA = 0.06
ONLINE_DEFAULTS = {"lam": 1.25e-4, "c": 1e-8, "gamma": 0.9, "delta": math.inf}


@dataclass(frozen=True)
class MaskedMatrix:
    """Partially known matrix; ``omega`` is True at UNKNOWN entries.

    Values of ``s0`` on ``omega`` are zeroed on construction.
    """

    s0: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        s0 = np.array(self.s0, dtype=float)
        omega = np.asarray(self.omega, dtype=bool)
        if s0.ndim != 2 or s0.shape != omega.shape:
            raise DimensionMismatch("s0 and omega must be 2-D arrays of the same shape")
        s0[omega] = 0.0
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def from_truth(cls, s, omega):
        return cls(np.asarray(s, dtype=float), omega)

    @property
    def known(self):
        return ~self.omega

    @property
    def known_fraction(self):
        return 1.0 - self.omega.sum() / self.omega.size


def random_mask(shape, known_fraction, rng):
    """Uniformly random UNKNOWN-entry mask with the given known fraction."""
    rng = np.random.default_rng(rng)
    size = int(np.prod(shape))
    n_known = int(round(known_fraction * size))
    omega = np.ones(size, dtype=bool)
    omega[rng.choice(size, n_known, replace=False)] = False
    return omega.reshape(shape)


@dataclass
class CompletionResult:
    s_hat: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    rel_fro_error_vs_reference: float | None = None


def rel_fro_error(estimate, truth):
    truth = np.asarray(truth, dtype=float)
    return float(np.linalg.norm(estimate - truth) / np.linalg.norm(truth))


def _finish(res, truth):
    if truth is not None:
        res.rel_fro_error_vs_reference = rel_fro_error(res.s_hat, truth)
    if not res.converged:
        logger.info("completion stopped at the iteration cap (%d)", res.iterations)
    return res


def complete_rank_constrained(mm, r, iters=200, tol=1e-8, truth=None):
    """Hard-impute: alternate rank-``r`` truncation with restoring known entries."""
    if r < 0 or r > min(mm.s0.shape):
        raise ValueError("rank must lie in [0, min(shape)]")
    x = mm.s0.copy()
    known = mm.known
    res = CompletionResult(x)
    for it in range(1, iters + 1):
        z = truncate(svd(x), r)
        res.objective_trace.append(float(np.sum((z - mm.s0)[known] ** 2)))
        x_new = np.where(mm.omega, z, mm.s0)
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-300)
        x = x_new
        res.iterations = it
        if change < tol:
            res.converged = True
            break
    res.s_hat = x
    return _finish(res, truth)


def _project(s, mm, delta):
    """Move known-entry deviations from ``s0`` into the ``delta`` ball."""
    if math.isinf(delta):
        return s
    known = mm.known
    d = np.where(known, s - mm.s0, 0.0)
    nd = np.linalg.norm(d)
    if nd <= delta:
        return s
    out = s.copy()
    out[known] = mm.s0[known] + d[known] * (delta / nd)
    return out


def _prox_grad(obj, grad, step, s_init, mm, lam, delta, iters, tol):
    """Projected proximal gradient with a descent safeguard."""
    s = _project(s_init, mm, delta)
    f = obj(s)
    res = CompletionResult(s, [f])
    for it in range(1, iters + 1):
        cand = _project(svt(s - step * grad(s), step * lam), mm, delta)
        f_cand = obj(cand)
        if f_cand > f:
            # the composed prox/projection step is not an exact prox; back off
            # along the feasible segment until the objective does not grow
            t = 0.5
            while t > 1e-6:
                trial = s + t * (cand - s)
                f_trial = obj(trial)
                if f_trial <= f:
                    cand, f_cand = trial, f_trial
                    break
                t *= 0.5
            else:
                res.converged = True
                res.iterations = it
                break
        change = np.linalg.norm(cand - s) / max(np.linalg.norm(s), 1e-300)
        s, f = cand, f_cand
        res.objective_trace.append(f)
        res.iterations = it
        if change < tol:
            res.converged = True
            break
    res.s_hat = s
    return res


def completion_objective(s, mm, lam, data_term="masked"):
    r = s - mm.s0
    if data_term == "masked":
        r = np.where(mm.known, r, 0.0)
    return float(np.sum(r * r) + lam * nuclear_norm(s))


def complete_nuclear(mm, lam=DEFAULT_LAMBDA, delta=DEFAULT_DELTA, iters=1000, tol=1e-8,
                     truth=None, data_term="masked", s_init=None):
    """Nuclear-norm regularized completion within a ``delta`` ball of the known entries.

    Minimizes ``||P(S0 - S)||_F^2 + lam ||S||_*`` subject to
    ``||P(S - S0)||_F <= delta`` where ``P`` keeps the known entries
    (``data_term="masked"``). ``data_term="full"`` applies the data term to
    every entry, unknown entries of ``S0`` being zero.
    """
    if lam < 0 or delta < 0:
        raise ValueError("lambda and delta must be nonnegative")
    if data_term not in ("masked", "full"):
        raise ValueError("data_term must be 'masked' or 'full'")
    mask = mm.known if data_term == "masked" else np.ones_like(mm.omega)

    def grad(s):
        return 2.0 * np.where(mask, s - mm.s0, 0.0)

    start = mm.s0 if s_init is None else np.asarray(s_init, dtype=float)
    res = _prox_grad(lambda s: completion_objective(s, mm, lam, data_term), grad, 0.5,
                     start, mm, lam, delta, iters, tol)
    return _finish(res, truth)


def complete_nuclear_path(mm, lams, delta=DEFAULT_DELTA, iters=1000, tol=1e-8, truth=None,
                          data_term="masked"):
    """Solve along a decreasing ``lams`` sequence, warm-starting each solve.

    Returns the result at the last ``lam``; its objective trace is that
    solve's own trace.
    """
    s = None
    res = None
    for lam in lams:
        res = complete_nuclear(mm, lam, delta, iters, tol, None, data_term, s)
        s = res.s_hat
    if res is None:
        raise ValueError("empty lambda path")
    return _finish(res, truth)


def fit_partial_nuclear(deltas, mm, lam=DEFAULT_LAMBDA, delta=DEFAULT_DELTA, iters=1000,
                        tol=1e-8, truth=None, s_init=None):
    """Regression ``||S dX^T - dV^T||_F^2 + lam ||S||_*`` with known-entry ball."""
    dX, dV = deltas.dX, deltas.dV
    if mm.s0.shape != (dV.shape[1], dX.shape[1]):
        raise DimensionMismatch("mask shape must be n x 2n for the given data")
    lip = 2.0 * spectral_norm(dX) ** 2
    step = 1.0 / (2.0 * lip) if lip > 0 else 0.5

    def obj(s):
        r = s @ dX.T - dV.T
        return float(np.sum(r * r) + lam * nuclear_norm(s))

    def grad(s):
        return 2.0 * (s @ dX.T - dV.T) @ dX

    start = mm.s0 if s_init is None else np.asarray(s_init, dtype=float)
    res = _prox_grad(obj, grad, step, start, mm, lam, delta, iters, tol)
    return _finish(res, truth)


# -- online estimator ---------------------------------------------------------

@dataclass
class OnlineState:
    """Running state of the smoothed online estimator.

    ``h`` is ``sum_s gamma^s S_{t-s}`` and ``w`` is ``sum_s gamma^s``, so the
    history penalty ``sum_s gamma^s ||S_{t-s} - S||^2`` equals
    ``w ||S||^2 - 2 <h, S>`` up to a constant.
    """

    s_hat: np.ndarray
    h: np.ndarray
    w: float = 0.0
    t: int = 0
    mm: MaskedMatrix | None = None

    @classmethod
    def initial(cls, s_init, mm=None):
        s = np.array(s_init, dtype=float)
        return cls(s, np.zeros_like(s), 0.0, 0, mm)


def online_update(state, dv_t, dx_t, lam=ONLINE_DEFAULTS["lam"], c=ONLINE_DEFAULTS["c"],
                  gamma=ONLINE_DEFAULTS["gamma"], delta=ONLINE_DEFAULTS["delta"],
                  iters=1, tol=1e-10):
    """One step of the smoothed online estimator; returns ``(s_hat_t, new_state)``.

    The per-step objective is
    ``||dv - S dx||^2 + lam ||S||_* + c sum_s gamma^s ||S_{t-s} - S||_F^2``
    subject to the known-entry ball. By default a single projected proximal
    gradient step is taken from the previous estimate (online proximal
    gradient); larger ``iters`` solve the per-step problem more exactly, which
    with a weak history weight ``c`` forgets earlier samples.
    """
    dv_t = np.asarray(dv_t, dtype=float).ravel()
    dx_t = np.asarray(dx_t, dtype=float).ravel()
    n2 = state.s_hat.shape
    if dv_t.size != n2[0] or dx_t.size != n2[1]:
        raise DimensionMismatch("dv_t / dx_t do not match the estimate shape")
    if not 0 <= gamma < 1 or c < 0 or lam < 0:
        raise ValueError("need 0 <= gamma < 1, c >= 0, lam >= 0")
    mm = state.mm if state.mm is not None else MaskedMatrix(np.zeros(n2), np.ones(n2, bool))
    h, w = state.h, state.w

    def obj(s):
        r = dv_t - s @ dx_t
        hist = c * (w * np.sum(s * s) - 2.0 * np.sum(h * s))
        return float(r @ r + lam * nuclear_norm(s) + hist)

    def grad(s):
        return -2.0 * np.outer(dv_t - s @ dx_t, dx_t) + 2.0 * c * (w * s - h)

    lip = 2.0 * (dx_t @ dx_t + c * w)
    step = 1.0 / lip if lip > 0 else 0.5
    res = _prox_grad(obj, grad, step, state.s_hat, mm, lam, delta, iters, tol)
    s_new = res.s_hat
    new_state = OnlineState(s_new, gamma * (h + s_new), gamma * (1.0 + w), state.t + 1,
                            state.mm)
    return s_new, new_state


# -- spectra --------------------------------------------------------------------

def spectral_report(s, groups=None):
    """Normalized singular values of ``s`` and of each column group.

    ``groups`` maps a name to column indices; the default splits an
    ``n x 2n`` matrix into its ``P`` and ``Q`` halves.
    """
    s = np.asarray(s, dtype=float)
    if groups is None:
        n = s.shape[1] // 2
        groups = {"P": np.arange(n), "Q": np.arange(n, s.shape[1])}
    out = {}
    sig = svd(s).sigma
    out["all"] = sig / sig[0] if sig.size and sig[0] > 0 else sig
    for name, cols in groups.items():
        cols = np.asarray(cols, dtype=int)
        if cols.size == 0:
            raise EmptyGroup(f"column group {name!r} is empty")
        g = svd(s[:, cols]).sigma
        out[name] = g / g[0] if g[0] > 0 else g
    return out


# -- estimator wrappers -------------------------------------------------------

class NuclearNormCompleter(BaseEstimator):
    """Complete a masked matrix; ``fit(S0, omega)`` then read ``s_hat_``.

    ``rank`` switches to the rank-constrained (hard-impute) route.
    """

    def __init__(self, lam=DEFAULT_LAMBDA, delta=DEFAULT_DELTA, rank=None, max_iter=1000,
                 tol=1e-8):
        self.lam = lam
        self.delta = delta
        self.rank = rank
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, omega):
        mm = MaskedMatrix(check_array(X), np.asarray(omega, dtype=bool))
        if self.rank is None:
            self.result_ = complete_nuclear(mm, self.lam, self.delta, self.max_iter, self.tol)
        else:
            self.result_ = complete_rank_constrained(mm, self.rank, self.max_iter, self.tol)
        self.s_hat_ = self.result_.s_hat
        return self

    def transform(self, X=None):
        check_is_fitted(self, "s_hat_")
        return self.s_hat_


class OnlineSensitivityEstimator(BaseEstimator):
    """Streaming estimate of the wide sensitivity matrix via :func:`online_update`."""

    def __init__(self, lam=ONLINE_DEFAULTS["lam"], c=ONLINE_DEFAULTS["c"],
                 gamma=ONLINE_DEFAULTS["gamma"], delta=ONLINE_DEFAULTS["delta"], s_init=None):
        self.lam = lam
        self.c = c
        self.gamma = gamma
        self.delta = delta
        self.s_init = s_init

    def partial_fit(self, X, y):
        """``X`` rows are ``dx_t`` (2n), ``y`` rows are ``dv_t`` (n)."""
        X = check_array(X)
        y = check_array(y)
        if not hasattr(self, "state_"):
            s0 = (np.zeros((y.shape[1], X.shape[1])) if self.s_init is None
                  else np.asarray(self.s_init, dtype=float))
            self.state_ = OnlineState.initial(s0)
        for dx, dv in zip(X, y):
            _, self.state_ = online_update(self.state_, dv, dx, self.lam, self.c,
                                           self.gamma, self.delta)
        self.s_wide_ = self.state_.s_hat
        return self

    def fit(self, X, y):
        if hasattr(self, "state_"):
            del self.state_
        return self.partial_fit(X, y)

    def predict(self, X):
        check_is_fitted(self, "s_wide_")
        return check_array(X) @ self.s_wide_.T


__all__ = [
    "MaskedMatrix", "CompletionResult", "random_mask", "rel_fro_error",
    "complete_rank_constrained", "complete_nuclear", "complete_nuclear_path",
    "completion_objective",
    "fit_partial_nuclear", "OnlineState", "online_update", "spectral_report",
    "NuclearNormCompleter", "OnlineSensitivityEstimator",
]
