import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from gllim.data import Dataset
from gllim.em import FitConfig, Responsibilities, fit
from gllim.errors import RankDeficiencyError, ShapeError
from gllim.marginal import (
    initialize,
    kmeans_responsibilities,
    m_regression_step,
    m_residual_step,
    ppca_closed_form,
    q_value,
    residual_covariances,
)
from gllim.model import GLLiMParams, as_dataset, sample
from oracles import separated_theta, weighted_lstsq


def _numerical_q_max(C, L_w, seed=0):
    """Maximize the residual criterion over (log sigma^2, A_w) with BFGS from several starts."""
    D = C.shape[0]

    def neg(p):
        A = p[1:].reshape(D, L_w)
        return -q_value(C, np.exp(p[0]), A)

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(4):
        x0 = np.concatenate([[np.log(np.trace(C) / D)], rng.normal(size=D * L_w)])
        res = minimize(neg, x0, method="BFGS", options={"gtol": 1e-10, "maxiter": 5000})
        if best is None or res.fun < best.fun:
            best = res
    return -best.fun


def _random_cov(rng, D):
    B = rng.normal(size=(D, D + 3))
    return B @ B.T / (D + 3)


# -- regression step -----------------------------------------------------------------


def test_regression_recovers_affine_map():
    rng = np.random.default_rng(0)
    T = rng.normal(size=(60, 2))
    R = rng.dirichlet(np.ones(2), size=60)
    Y = rng.normal(size=(60, 3))
    up = m_regression_step(Responsibilities.from_matrix(R), Dataset(T, Y))
    for k in range(2):
        A, b = weighted_lstsq(R[:, k] / R[:, k].sum(), T, Y)
        np.testing.assert_allclose(up.A_t[k], A, atol=1e-10)
        np.testing.assert_allclose(up.b[k], b, atol=1e-10)


def test_regression_without_observed_block_is_weighted_mean():
    Y = np.array([[1.0, 2.0], [3.0, 6.0]])
    r = Responsibilities.from_matrix(np.array([[0.25], [0.75]]))
    up = m_regression_step(r, Dataset(np.zeros((2, 0)), Y))
    np.testing.assert_allclose(up.b[0], [2.5, 5.0])


def test_regression_constant_t_raises():
    data = Dataset(np.full((10, 1), 3.0), np.arange(10.0)[:, None])
    with pytest.raises(RankDeficiencyError):
        m_regression_step(Responsibilities.from_matrix(np.ones((10, 1))), data)


# -- residual (PPCA) step ------------------------------------------------------------


def test_residual_without_factors_is_mean_variance():
    rng = np.random.default_rng(1)
    C = _random_cov(rng, 4)
    A_w, sigma2, _ = m_residual_step(C[None], 0)
    assert A_w.shape == (1, 4, 0)
    assert sigma2[0] == pytest.approx(np.trace(C) / 4, rel=1e-14)


def test_residual_analytic_eigensystem():
    up = ppca_closed_form(np.diag([4.0, 1.0, 1.0]), 1)
    assert up.sigma2 == pytest.approx(1.0)
    np.testing.assert_allclose(up.A_w[:, 0], [np.sqrt(3.0), 0.0, 0.0], atol=1e-14)
    assert not up.clamped


def test_residual_requires_fewer_factors_than_dimensions():
    with pytest.raises(ShapeError):
        ppca_closed_form(np.eye(3), 3)


@pytest.mark.parametrize("L_w", [1, 2])
@pytest.mark.parametrize("seed", range(4))
def test_residual_closed_form_is_the_maximizer(L_w, seed):
    rng = np.random.default_rng(100 + seed)
    C = _random_cov(rng, 5)
    up = ppca_closed_form(C, L_w)
    q_closed = q_value(C, up.sigma2, up.A_w)
    assert q_closed == pytest.approx(_numerical_q_max(C, L_w, seed), abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 7), st.data())
def test_factors_never_worse_than_isotropic(seed, D, data):
    L_w = data.draw(st.integers(1, D - 1))
    rng = np.random.default_rng(seed)
    C = _random_cov(rng, D)
    up = ppca_closed_form(C, L_w)
    q_iso = q_value(C, np.trace(C) / D, np.zeros((D, 0)))
    assert q_value(C, up.sigma2, up.A_w) >= q_iso - 1e-12


def test_eigenvector_signs_are_fixed():
    rng = np.random.default_rng(2)
    C = _random_cov(rng, 5)
    U = ppca_closed_form(C, 2).stats.U
    for j in range(2):
        assert U[np.argmax(np.abs(U[:, j])), j] > 0


def test_residual_covariance_is_weight_normalized():
    rng = np.random.default_rng(3)
    T = rng.normal(size=(40, 1))
    Y = rng.normal(size=(40, 2))
    r = Responsibilities.from_matrix(np.ones((40, 1)))
    reg = m_regression_step(r, Dataset(T, Y))
    C = residual_covariances(r, Dataset(T, Y), reg.A_t, reg.b)
    e = Y - T @ reg.A_t[0].T - reg.b[0]
    np.testing.assert_allclose(C[0], e.T @ e / 40, atol=1e-14)


# -- initialization -------------------------------------------------------------------


def test_single_component_initialization_is_global_regression_plus_ppca():
    rng = np.random.default_rng(4)
    truth = separated_theta(rng, K=1, D=5, L_t=1, L_w=1, noise=0.1)
    X, Y, _ = sample(truth, 300, rng)
    data = as_dataset(truth, X, Y)
    cfg = FitConfig(K=1, L_w=1, sigma="iso")
    th = initialize(data, cfg)
    A, b = weighted_lstsq(np.full(300, 1 / 300), data.T, data.Y)
    np.testing.assert_allclose(th.A_t[0], A, atol=1e-10)
    e = data.Y - data.T @ A.T - b
    up = ppca_closed_form(e.T @ e / 300, 1)
    np.testing.assert_allclose(th.A_w[0], up.A_w, atol=1e-8)
    np.testing.assert_allclose(th.Sigma[0], up.sigma2 * np.eye(5), atol=1e-10)
    np.testing.assert_allclose(th.b[0], b, atol=1e-10)
    # deterministic
    th2 = initialize(data, cfg)
    np.testing.assert_array_equal(th.A, th2.A)


def test_kmeans_purity_on_separated_components():
    rng = np.random.default_rng(5)
    truth = separated_theta(rng, K=2, D=6, L_t=1, L_w=1, noise=0.05, spread=10.0)
    X, Y, Z = sample(truth, 500, rng)
    data = as_dataset(truth, X, Y)
    labels = kmeans_responsibilities(data, 2, seed=0).r.argmax(axis=1)
    agree = np.mean(labels == Z)
    assert max(agree, 1 - agree) > 0.95


@pytest.mark.parametrize("sigma", ["iso,shared", "iso", "diag", "full"])
@pytest.mark.parametrize("L_w", [0, 1, 3])
def test_initial_parameters_are_valid_and_em_consistent(sigma, L_w):
    rng = np.random.default_rng(6)
    truth = separated_theta(rng, K=3, D=4, L_t=2, L_w=1, noise=0.1)
    X, Y, _ = sample(truth, 300, rng)
    data = as_dataset(truth, X, Y)
    cfg = FitConfig(K=3, L_w=L_w, sigma=sigma, max_iter=20, rel_tol=0.0)
    th = initialize(data, cfg)
    GLLiMParams.from_dict(th.to_dict())  # re-validates every invariant
    th.check_identifiability()
    _, rep = fit(data, cfg, init=th)
    assert rep.is_monotone()


def test_kmeans_on_t_space():
    T = np.concatenate([np.zeros(20), np.ones(20) * 10])[:, None]
    data = Dataset(T + np.random.default_rng(0).normal(scale=0.1, size=(40, 1)), np.zeros((40, 2)))
    r = kmeans_responsibilities(data, 2, space="t")
    labels = r.r.argmax(axis=1)
    assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1


def test_kmeans_needs_enough_samples():
    from gllim.errors import FitFailure

    with pytest.raises(FitFailure):
        kmeans_responsibilities(Dataset(np.zeros((2, 1)), np.zeros((2, 1))), 3)
