from types import SimpleNamespace

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pfsense.estimation import (
    AmiDeltas,
    PhaselessInjectionEstimator,
    TikhonovSensitivityRegressor,
    default_lambda,
    estimate_injections_phaseless,
    finite_differences,
    per_bus_rmse,
    single_bus_lsq,
    tikhonov_fit,
    tikhonov_objective,
)
from pfsense.exceptions import (
    RankDeficient,
    SingularNormalEquations,
    SingularSDagger,
    TooShort,
)
from pfsense.observability import check_case, profile_from_point, s_dagger
from pfsense.powerflow import assemble_jacobian
from pfsense.sensitivity import invert_jacobian

from conftest import BUNDLED, solved


def _series(v, p, q):
    return SimpleNamespace(v=np.asarray(v, float), p=np.asarray(p, float),
                           q=np.asarray(q, float))


def test_finite_differences_shapes():
    const = np.ones((5, 3))
    d = finite_differences(_series(const, const, const))
    assert d.m == 4 and np.all(d.dV == 0) and d.dX.shape == (4, 6)
    ramp = 0.1 * np.arange(5)[:, None] * np.ones((1, 2))
    d = finite_differences(_series(ramp, 2 * ramp, 3 * ramp))
    np.testing.assert_allclose(d.dV, 0.1)
    np.testing.assert_allclose(d.dX, np.repeat([[0.2, 0.2, 0.3, 0.3]], 4, axis=0))


def test_finite_differences_too_short():
    with pytest.raises(TooShort):
        finite_differences(_series(np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2))))


def _sdag(name):
    _, y, point = solved(name)
    s = invert_jacobian(assemble_jacobian(y, point))
    k = profile_from_point(point).k_abs
    return s, k, s_dagger(s, k)


def test_phaseless_zero():
    _, k, sd = _sdag("case9")
    dp, dq = estimate_injections_phaseless(sd, k, np.zeros(sd.shape[0]))
    assert not dp.any() and not dq.any()


@pytest.mark.parametrize("name", BUNDLED)
def test_phaseless_roundtrip(name, rng):
    if not check_case(name).thm2_holds:
        pytest.skip("invertibility condition fails")
    s, k, sd = _sdag(name)
    dp = 1e-3 * rng.normal(size=(k.size, 5))
    dv = s.s_v_p @ dp + s.s_v_q @ (k[:, None] * dp)
    dp_hat, dq_hat = estimate_injections_phaseless(sd, k, dv)
    assert np.linalg.norm(dp_hat - dp) <= 1e-8 * np.linalg.norm(dp)
    np.testing.assert_allclose(dq_hat, k[:, None] * dp_hat)


def test_phaseless_unity_power_factor(rng):
    s, _, _ = _sdag("case9")
    k = np.zeros(s.n)
    _, dq = estimate_injections_phaseless(s_dagger(s, k), k, rng.normal(size=s.n))
    assert not dq.any()


def test_phaseless_singular():
    with pytest.raises(SingularSDagger):
        estimate_injections_phaseless(np.ones((2, 2)), np.ones(2), np.ones(2))


def test_single_bus_exact_and_orthogonal(rng):
    a = rng.normal(size=(6, 2))
    np.testing.assert_allclose(single_bus_lsq(a, a @ [0.3, -0.7]), [0.3, -0.7], atol=1e-10)
    q, _ = np.linalg.qr(np.hstack([a, rng.normal(size=(6, 1))]))
    np.testing.assert_allclose(single_bus_lsq(a, q[:, 2]), 0, atol=1e-12)


def test_single_bus_hand_formula(rng):
    a = rng.normal(size=(8, 2))
    dv = rng.normal(size=8)
    g11, g12, g22 = a[:, 0] @ a[:, 0], a[:, 0] @ a[:, 1], a[:, 1] @ a[:, 1]
    r1, r2 = a[:, 0] @ dv, a[:, 1] @ dv
    det = g11 * g22 - g12 * g12
    want = [(g22 * r1 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det]
    np.testing.assert_allclose(single_bus_lsq(a, dv), want, rtol=1e-12, atol=1e-12)


def test_single_bus_radial_recovery():
    _, y, point = solved("case4_radial")
    s = invert_jacobian(assemble_jacobian(y, point))
    # the bus next to the substation sees only its own voltage downstream: rank one
    first = np.column_stack([s.s_v_p[:, 0], s.s_v_q[:, 0]])
    with pytest.raises(RankDeficient):
        single_bus_lsq(first, first @ [0.02, -0.01])
    for col in range(1, s.n):
        sp = np.column_stack([s.s_v_p[:, col], s.s_v_q[:, col]])
        got = single_bus_lsq(sp, sp @ [0.02, -0.01])
        np.testing.assert_allclose(got, [0.02, -0.01], atol=1e-8)


def test_single_bus_rank_deficient():
    with pytest.raises(RankDeficient):
        single_bus_lsq(np.ones((4, 2)), np.ones(4))


def _planted(name, rng, m_factor=3):
    s, _, _ = _sdag(name)
    n = s.n
    dX = rng.normal(size=(m_factor * n, 2 * n))
    return s.s_wide, AmiDeltas(dX @ s.s_wide.T, dX[:, :n], dX[:, n:])


def test_tikhonov_noiseless(rng):
    truth, d = _planted("case9", rng)
    est = tikhonov_fit(d, 0.0)
    assert np.linalg.norm(est - truth) <= 1e-8 * np.linalg.norm(truth)


def test_tikhonov_shrinks_to_zero(rng):
    _, d = _planted("case9", rng)
    assert np.abs(tikhonov_fit(d, 1e12)).max() < 1e-9


def test_tikhonov_identity_design(rng):
    n = 3
    dV = rng.normal(size=(2 * n, n))
    d = AmiDeltas(dV, np.eye(2 * n)[:, :n], np.eye(2 * n)[:, n:])
    np.testing.assert_allclose(tikhonov_fit(d, 0.0).T, dV, atol=1e-14)


def test_tikhonov_rank_deficient(rng):
    _, d = _planted("case9", rng, m_factor=1)
    with pytest.raises(SingularNormalEquations):
        tikhonov_fit(d, 0.0)
    assert np.isfinite(tikhonov_fit(d)).all()


def test_tikhonov_unique_minimizer(rng):
    _, d = _planted("case9", rng)
    dV = d.dV + 1e-3 * rng.normal(size=d.dV.shape)
    d = AmiDeltas(dV, d.dP, d.dQ)
    lam = 0.1
    est = tikhonov_fit(d, lam)
    f0 = tikhonov_objective(est, d, lam)
    for _ in range(100):
        e = rng.normal(size=est.shape)
        assert tikhonov_objective(est + 1e-3 * e / np.linalg.norm(e), d, lam) > f0


def test_default_lambda_scale(rng):
    dX = rng.normal(size=(10, 4))
    assert default_lambda(dX) == pytest.approx(1e-8 * np.trace(dX.T @ dX) / 4)
    assert default_lambda(10 * dX) == pytest.approx(100 * default_lambda(dX))


def test_per_bus_rmse():
    np.testing.assert_allclose(per_bus_rmse([[1.0, 0.0], [3.0, 0.0]], [[0.0, 0.0]] * 2),
                               [np.sqrt(5), 0.0])


def test_regressor_api(rng):
    truth, d = _planted("case9", rng)
    reg = TikhonovSensitivityRegressor(lam=0.0)
    with pytest.raises(NotFittedError):
        reg.predict(d.dX)
    reg.fit(d.dX, d.dV)
    np.testing.assert_allclose(reg.s_wide_, truth, atol=1e-8)
    np.testing.assert_allclose(reg.predict(d.dX), d.dV, atol=1e-10)
    assert clone(reg).get_params() == {"lam": 0.0}


def test_phaseless_estimator_api(rng):
    s, k, sd = _sdag("case9")
    dp = rng.normal(size=(4, s.n))
    dv = (s.s_v_p @ dp.T + s.s_v_q @ (k[:, None] * dp.T)).T
    out = PhaselessInjectionEstimator(sd, k).fit_transform(dv)
    np.testing.assert_allclose(out[:, :s.n], dp, atol=1e-8)
    np.testing.assert_allclose(out[:, s.n:], dp * k, atol=1e-8)
