"""Dense linear-algebra kernels.

Thin, deterministic wrappers over LAPACK (via numpy/scipy) with the error
semantics the rest of the package relies on.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, NoConvergence, SingularMatrix

PD_TOL = 1e-10


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self):
        return (self.u * self.sigma) @ self.v.T


def as_matrix(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got shape {a.shape}")
    return a


def lu_solve(a, b):
    """Solve ``a @ x = b`` by LU with partial pivoting.

    Raises
    ------
    SingularMatrix
        If a pivot falls below ``1e-14 * ||a||_inf``.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"lu_solve needs a square matrix, got {a.shape}")
    b = np.asarray(b)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch("right-hand side has the wrong number of rows")
    if a.shape[0] == 0:
        return np.zeros_like(b, dtype=np.result_type(a, b, float))
    scale = np.abs(a).sum(axis=1).max()
    if scale == 0:
        raise SingularMatrix("matrix is zero")
    with warnings.catch_warnings():
        # exact zero pivots are reported through SingularMatrix below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    if np.abs(np.diag(lu)).min() < 1e-14 * scale:
        raise SingularMatrix("pivot below 1e-14 * ||a||_inf")
    return sla.lu_solve((lu, piv), b)


def inv(a):
    a = np.asarray(a)
    return lu_solve(a, np.eye(a.shape[0], dtype=a.dtype))


def svd(a):
    """Thin SVD with singular values in nonincreasing order."""
    u, s, vt = np.linalg.svd(as_matrix(a), full_matrices=False)
    return SvdFactors(u, s, vt.T)


def truncate(f, r):
    """Best rank-``r`` approximation ``sum_{k<r} sigma_k u_k v_k^T``."""
    r = int(max(0, min(r, f.sigma.size)))
    return (f.u[:, :r] * f.sigma[:r]) @ f.v[:, :r].T


def spectral_norm(a):
    """Largest singular value of ``a``.

    Computed as ``sqrt(lambda_max(a^T a))`` with the symmetric eigensolver,
    a route independent of :func:`svd`.
    """
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    top = sla.eigh(gram, eigvals_only=True, subset_by_index=[gram.shape[0] - 1] * 2)
    return float(np.sqrt(max(top[0], 0.0)))


def smallest_singular_value(a):
    s = np.linalg.svd(as_matrix(a), compute_uv=False)
    return float(s[-1]) if s.size else 0.0


def eigenvalues(a):
    """Eigenvalues of a square matrix (Hessenberg reduction + shifted QR)."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("eigenvalues needs a square matrix")
    try:
        return sla.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None


def min_real_eig_sym_part(a):
    """``lambda_min((a + a^T) / 2)``; the quadratic-form test for ``a > 0``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("min_real_eig_sym_part needs a square matrix")
    if a.shape[0] == 0:
        return float("nan")
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[0])


def is_positive_definite(a, tol=PD_TOL):
    return min_real_eig_sym_part(a) > tol


def svt(a, tau):
    """Singular value thresholding, the prox of ``tau * ||.||_*``."""
    f = svd(a)
    shrunk = np.maximum(f.sigma - tau, 0.0)
    return (f.u * shrunk) @ f.v.T


def nuclear_norm(a):
    return float(np.linalg.svd(as_matrix(a), compute_uv=False).sum())


def condition_number(a):
    s = np.linalg.svd(as_matrix(a), compute_uv=False)
    if s.size == 0:
        return 1.0
    return float(np.inf) if s[-1] == 0 else float(s[0] / s[-1])


# -- CSV --------------------------------------------------------------------

def format_float(x):
    """Full-precision (17 significant digit) text for machine outputs."""
    return format(float(x), ".17g")


def write_matrix_csv(path_or_buf, a):
    a = as_matrix(a)
    lines = [",".join(format_float(x) for x in row) for row in a]
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_buf, io.TextIOBase):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def read_matrix_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DimensionMismatch(f"{path}: ragged CSV rows")
    return np.array([[float(c) for c in r] for r in rows])
