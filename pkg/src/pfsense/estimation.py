"""Phaseless injection recovery and regression of sensitivity matrices from AMI data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    DimensionMismatch,
    RankDeficient,
    SingularMatrix,
    SingularNormalEquations,
    SingularSDagger,
    TooShort,
)
from .numkit import condition_number, lu_solve


@dataclass(frozen=True)
class AmiDeltas:
    """Finite differences of an AMI series; ``dX = [dP | dQ]``."""

    dV: np.ndarray
    dP: np.ndarray
    dQ: np.ndarray

    @property
    def dX(self):
        return np.hstack([self.dP, self.dQ])

    @property
    def m(self):
        return self.dV.shape[0]

    @property
    def n(self):
        return self.dV.shape[1]


def finite_differences(series):
    """Row ``t`` is sample ``t+1`` minus sample ``t``.

    ``series`` is anything with ``v``, ``p``, ``q`` attributes of shape (m, n).
    """
    v, p, q = (np.asarray(getattr(series, a), dtype=float) for a in ("v", "p", "q"))
    if not (v.shape == p.shape == q.shape) or v.ndim != 2:
        raise DimensionMismatch("v, p and q must be (m, n) arrays of the same shape")
    if v.shape[0] < 2:
        raise TooShort("need at least two samples to difference")
    return AmiDeltas(np.diff(v, axis=0), np.diff(p, axis=0), np.diff(q, axis=0))


def estimate_injections_phaseless(s_dag, K, dv):
    """``dp = S_dag^-1 dv`` and ``dq = K dp``.

    ``dv`` may be a vector or an ``(n, m)`` array of column snapshots.
    """
    s_dag = np.asarray(s_dag, dtype=float)
    K = np.asarray(K, dtype=float)
    K = np.diag(K) if K.ndim == 1 else K
    dv = np.asarray(dv, dtype=float)
    if condition_number(s_dag) > 1e12:
        raise SingularSDagger("S_dag is singular")
    try:
        dp = lu_solve(s_dag, dv)
    except SingularMatrix as exc:
        raise SingularSDagger(str(exc)) from None
    return dp, K @ dp


def single_bus_lsq(s_perp, dv):
    """Least-squares ``(dp_l, dq_l)`` for a single perturbed bus.

    ``s_perp`` is ``[s_v_p[:, l], s_v_q[:, l]]`` (n x 2).
    """
    s_perp = np.asarray(s_perp, dtype=float)
    dv = np.asarray(dv, dtype=float)
    if s_perp.ndim != 2 or s_perp.shape[1] != 2 or s_perp.shape[0] != dv.shape[0]:
        raise DimensionMismatch("s_perp must be n x 2 and match dv")
    g = s_perp.T @ s_perp
    sv = np.linalg.svd(s_perp, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise RankDeficient("the two sensitivity columns are linearly dependent")
    return lu_solve(g, s_perp.T @ dv)


def default_lambda(dX):
    """Scale-aware ridge ``1e-8 * trace(dX^T dX) / (2n)``."""
    dX = np.asarray(dX, dtype=float)
    return 1e-8 * float(np.einsum("ij,ij->", dX, dX)) / dX.shape[1]


def tikhonov_fit(deltas, lam=None):
    """Ridge estimate of the wide sensitivity matrix ``[S_vp | S_vq]`` (n x 2n).

    Solves ``S^T = (dX^T dX + lam I)^-1 dX^T dV``. ``lam=None`` uses
    :func:`default_lambda`.
    """
    dX, dV = deltas.dX, deltas.dV
    if dX.shape[0] < 1:
        raise TooShort("no finite differences")
    if dX.shape[0] != dV.shape[0]:
        raise DimensionMismatch("dX and dV differ in row count")
    lam = default_lambda(dX) if lam is None else float(lam)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    g = dX.T @ dX + lam * np.eye(dX.shape[1])
    if lam == 0 and condition_number(g) > 1e14:
        raise SingularNormalEquations("dX^T dX is singular; add regularization")
    try:
        return lu_solve(g, dX.T @ dV).T
    except SingularMatrix as exc:
        raise SingularNormalEquations(str(exc)) from None


def tikhonov_objective(s_wide, deltas, lam):
    r = deltas.dV - deltas.dX @ s_wide.T
    return float(np.sum(r * r) + lam * np.sum(s_wide * s_wide))


def per_bus_rmse(estimate, truth):
    """Per-bus (column) root-mean-square error between ``(m, n)`` arrays."""
    e = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return np.sqrt(np.mean(e * e, axis=0))


# -- estimator wrappers -------------------------------------------------------

class TikhonovSensitivityRegressor(RegressorMixin, BaseEstimator):
    """Fit ``dV ~ dX S^T`` by ridge regression.

    Parameters
    ----------
    lam : float or None
        Ridge weight; None picks the scale-aware default.

    Attributes
    ----------
    s_wide_ : ndarray of shape (n, 2n)
    """

    def __init__(self, lam=None):
        self.lam = lam

    def fit(self, X, y):
        X = check_array(X)
        y = check_array(y)
        if X.shape[1] % 2 or X.shape[1] != 2 * y.shape[1]:
            raise DimensionMismatch("X must have 2n columns for n output buses")
        n = y.shape[1]
        self.s_wide_ = tikhonov_fit(AmiDeltas(y, X[:, :n], X[:, n:]), self.lam)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "s_wide_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch("X has the wrong number of columns")
        return X @ self.s_wide_.T


class PhaselessInjectionEstimator(BaseEstimator):
    """Map voltage-magnitude deltas to ``[dp | dq]`` via a fixed ``S_dag`` and ``K``.

    ``fit`` stores and checks the matrices (no data needed); ``transform``
    takes rows of ``dv`` and returns rows of ``[dp | dq]``.
    """

    def __init__(self, s_dagger=None, k_diag=None):
        self.s_dagger = s_dagger
        self.k_diag = k_diag

    def fit(self, X=None, y=None):
        s = check_array(self.s_dagger)
        k = np.asarray(self.k_diag, dtype=float).ravel()
        if s.shape[0] != s.shape[1] or k.size != s.shape[0]:
            raise DimensionMismatch("S_dag must be n x n with n power-factor entries")
        if condition_number(s) > 1e12:
            raise SingularSDagger("S_dag is singular")
        self.s_dagger_ = s
        self.k_ = k
        self.n_features_in_ = s.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "s_dagger_")
        X = check_array(X)
        dp, dq = estimate_injections_phaseless(self.s_dagger_, self.k_, X.T)
        return np.hstack([dp.T, dq.T])

    def fit_transform(self, X, y=None):
        return self.fit().transform(X)


__all__ = [
    "AmiDeltas", "finite_differences", "estimate_injections_phaseless",
    "single_bus_lsq", "default_lambda", "tikhonov_fit", "tikhonov_objective",
    "per_bus_rmse", "TikhonovSensitivityRegressor", "PhaselessInjectionEstimator",
]
