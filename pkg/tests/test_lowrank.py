import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import NotFittedError

from pfsense.estimation import AmiDeltas, tikhonov_fit
from pfsense.exceptions import DimensionMismatch, EmptyGroup
from pfsense.lowrank import (
    MaskedMatrix,
    NuclearNormCompleter,
    OnlineSensitivityEstimator,
    OnlineState,
    complete_nuclear,
    complete_nuclear_path,
    complete_rank_constrained,
    completion_objective,
    fit_partial_nuclear,
    online_update,
    random_mask,
    rel_fro_error,
    spectral_report,
)


def planted(rng, shape=(8, 16), rank=2):
    return rng.normal(size=(shape[0], rank)) @ rng.normal(size=(rank, shape[1]))


def test_masked_matrix_zeroes_unknowns():
    mm = MaskedMatrix(np.ones((2, 3)), [[1, 0, 0], [0, 0, 1]])
    assert mm.s0[0, 0] == 0 and mm.s0[1, 2] == 0 and mm.s0.sum() == 4
    assert mm.known_fraction == pytest.approx(4 / 6)
    with pytest.raises(DimensionMismatch):
        MaskedMatrix(np.ones((2, 3)), np.ones((3, 2)))


@pytest.mark.parametrize("frac", [0.0, 0.25, 0.6, 1.0])
def test_random_mask_fraction(frac):
    omega = random_mask((10, 20), frac, 3)
    assert (~omega).sum() == round(frac * 200)


def test_hard_impute_planted(rng):
    truth = planted(rng)
    mm = MaskedMatrix.from_truth(truth, random_mask(truth.shape, 0.6, rng))
    res = complete_rank_constrained(mm, 2, iters=5000, tol=1e-12, truth=truth)
    assert res.rel_fro_error_vs_reference < 1e-6


@pytest.mark.parametrize("rank", [2, 3])
def test_nuclear_path_planted(rank):
    rng = np.random.default_rng(rank)
    truth = planted(rng, (30, 60), rank)
    mm = MaskedMatrix.from_truth(truth, random_mask(truth.shape, 0.6, rng))
    res = complete_nuclear_path(mm, np.geomspace(10, 1e-6, 15), delta=math.inf,
                                iters=500, tol=1e-10, truth=truth)
    assert res.rel_fro_error_vs_reference < 1e-6


@pytest.mark.parametrize("delta", [0.0, 0.06, math.inf])
@pytest.mark.parametrize("data_term", ["masked", "full"])
def test_objective_nonincreasing(rng, delta, data_term):
    truth = planted(rng, rank=3) + 0.01 * rng.normal(size=(8, 16))
    mm = MaskedMatrix.from_truth(truth, random_mask(truth.shape, 0.5, rng))
    res = complete_nuclear(mm, 0.125, delta, iters=300, data_term=data_term)
    tr = np.array(res.objective_trace)
    assert np.all(np.diff(tr) <= 1e-12 * np.abs(tr[:-1]).max())


def test_known_entries_stay_in_ball(rng):
    truth = planted(rng)
    mm = MaskedMatrix.from_truth(truth, random_mask(truth.shape, 0.5, rng))
    res = complete_nuclear(mm, 1.0, 0.06, iters=300)
    assert np.linalg.norm((res.s_hat - mm.s0)[mm.known]) <= 0.06 + 1e-12


def test_zero_lambda_zero_delta(rng):
    truth = planted(rng)
    mm = MaskedMatrix.from_truth(truth, random_mask(truth.shape, 0.5, rng))
    res = complete_nuclear(mm, 0.0, 0.0)
    np.testing.assert_allclose(res.s_hat[mm.known], truth[mm.known], atol=1e-13)
    assert np.abs(res.s_hat[mm.omega]).max() < 1e-13


def test_large_lambda_shrinks_to_zero(rng):
    truth = planted(rng)
    mm = MaskedMatrix.from_truth(truth, random_mask(truth.shape, 0.5, rng))
    lam = 2.0 * np.linalg.norm(mm.s0, 2) * 1.01
    res = complete_nuclear(mm, lam, math.inf, data_term="full")
    assert np.abs(res.s_hat).max() < 1e-12
    res = complete_nuclear(mm, lam, 0.06)
    assert np.abs(res.s_hat[mm.omega]).max() < 1e-12


def test_objective_value():
    mm = MaskedMatrix(np.diag([3.0, 0.0]), [[False, True], [True, False]])
    s = np.diag([1.0, 2.0])
    assert completion_objective(s, mm, 0.5) == pytest.approx(4 + 4 + 0.5 * 3)


def test_partial_nuclear_matches_tikhonov(rng):
    n = 4
    truth = rng.normal(size=(n, 2 * n))
    dX = rng.normal(size=(6 * n, 2 * n))
    d = AmiDeltas(dX @ truth.T + 1e-3 * rng.normal(size=(6 * n, n)), dX[:, :n], dX[:, n:])
    mm = MaskedMatrix(np.zeros((n, 2 * n)), np.ones((n, 2 * n), bool))
    res = fit_partial_nuclear(d, mm, lam=0.0, delta=math.inf, iters=20000, tol=1e-14)
    np.testing.assert_allclose(res.s_hat, tikhonov_fit(d, 0.0), atol=1e-6)


def test_partial_nuclear_shape_check(rng):
    d = AmiDeltas(np.zeros((5, 2)), np.zeros((5, 2)), np.zeros((5, 2)))
    with pytest.raises(DimensionMismatch):
        fit_partial_nuclear(d, MaskedMatrix(np.zeros((2, 3)), np.ones((2, 3), bool)))


# -- online -------------------------------------------------------------------

def test_online_rank_one_exact():
    n = 3
    dv = np.array([0.1, -0.2, 0.3])
    for k in range(2 * n):
        s, st_ = online_update(OnlineState.initial(np.zeros((n, 2 * n))), dv,
                               np.eye(2 * n)[k], lam=0.0, c=0.0)
        np.testing.assert_allclose(s[:, k], dv, atol=1e-15)
        assert np.linalg.matrix_rank(s) == 1
        assert st_.t == 1 and st_.w == pytest.approx(0.9)


def test_online_strong_history_holds_estimate(rng):
    n = 3
    state = OnlineState.initial(np.zeros((n, 2 * n)))
    s1, state = online_update(state, rng.normal(size=n), rng.normal(size=2 * n), c=1e12)
    s2, _ = online_update(state, rng.normal(size=n), rng.normal(size=2 * n), c=1e12)
    np.testing.assert_allclose(s2, s1, atol=1e-9)


def test_online_history_recursion(rng):
    state = OnlineState.initial(np.zeros((2, 4)))
    hist = []
    for _ in range(4):
        s, state = online_update(state, rng.normal(size=2), rng.normal(size=4), gamma=0.5)
        hist.append(s)
    want_h = sum(0.5 ** (4 - i) * h for i, h in enumerate(hist))
    np.testing.assert_allclose(state.h, want_h)
    assert state.w == pytest.approx(0.5 + 0.25 + 0.125 + 0.0625)


def test_online_validation():
    state = OnlineState.initial(np.zeros((2, 4)))
    with pytest.raises(DimensionMismatch):
        online_update(state, np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        online_update(state, np.zeros(2), np.zeros(4), gamma=1.0)


def test_online_estimator_learns_linear_map(rng):
    n = 3
    truth = rng.normal(size=(n, 2 * n))
    X = rng.normal(size=(400, 2 * n))
    est = OnlineSensitivityEstimator(lam=0.0).fit(X, X @ truth.T)
    assert rel_fro_error(est.s_wide_, truth) < 1e-3
    np.testing.assert_allclose(est.predict(X[:2]), X[:2] @ est.s_wide_.T)
    before = est.s_wide_.copy()
    est.partial_fit(X[:1], X[:1] @ truth.T)
    assert est.state_.t == 401 and np.abs(est.s_wide_ - before).max() < 1e-3


# -- spectra and wrappers -------------------------------------------------------

def test_spectral_rank_one(rng):
    s = np.outer(rng.normal(size=4), rng.normal(size=8))
    rep = spectral_report(s)
    assert set(rep) == {"all", "P", "Q"}
    for vals in rep.values():
        assert vals[0] == pytest.approx(1.0) and vals[1] < 1e-12


def test_spectral_empty_group(rng):
    with pytest.raises(EmptyGroup):
        spectral_report(rng.normal(size=(3, 6)), {"A": [0, 1], "B": []})


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_spectral_normalized(n, extra, seed):
    s = np.random.default_rng(seed).normal(size=(n, 2 * n + extra))
    for vals in spectral_report(s, {"x": range(s.shape[1])}).values():
        assert vals[0] == pytest.approx(1.0)
        assert np.all(np.diff(vals) <= 1e-12) and np.all(vals >= 0)


def test_completer_api(rng):
    truth = planted(rng)
    omega = random_mask(truth.shape, 0.6, rng)
    comp = NuclearNormCompleter(rank=2, max_iter=5000, tol=1e-12)
    with pytest.raises(NotFittedError):
        comp.transform()
    out = comp.fit(truth, omega).transform()
    assert rel_fro_error(out, truth) < 1e-6
    assert comp.get_params()["rank"] == 2
    default = NuclearNormCompleter().fit(truth, omega)
    assert default.result_.iterations >= 1
