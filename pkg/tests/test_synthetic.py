import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gllim.errors import ShapeError
from gllim.synthetic import (
    EXTREME_THRESHOLD,
    BenchmarkConfig,
    SyntheticFunctionSpec,
    compute_metrics,
    evaluate_function,
    gen_function,
    realized_snr_db,
    run_benchmark,
    sample_dataset,
)


def _spec(kind, D=3, **coef):
    base = dict(
        alpha=np.ones(D), eta=np.zeros(D), phi=np.zeros(D),
        beta=None if kind == "f" else np.zeros(D), gamma=None if kind == "g" else np.ones(D),
    )
    base.update(coef)
    return SyntheticFunctionSpec(kind, D, **base)


# -- function generation ----------------------------------------------------------


def test_gen_function_is_deterministic():
    a, b = gen_function("h", 7, 11), gen_function("h", 7, 11)
    for name in ("alpha", "eta", "phi", "beta", "gamma"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_coefficients_cover_their_ranges():
    spec = gen_function("h", 100_000, 0)
    for name, hi in [("alpha", 2), ("eta", 4 * np.pi), ("phi", 2 * np.pi), ("beta", np.pi), ("gamma", 2)]:
        v = getattr(spec, name)
        assert v.min() >= 0 and v.max() <= hi
        sd = hi / math.sqrt(12) / math.sqrt(v.size)
        assert abs(v.mean() - hi / 2) < 3 * sd


def test_family_structure():
    assert gen_function("f", 3, 0).beta is None
    assert gen_function("g", 3, 0).gamma is None
    h = gen_function("h", 3, 0)
    assert h.beta is not None and h.gamma is not None and h.latent_dim == 2
    with pytest.raises(ValueError):
        gen_function("q", 3, 0)


def test_evaluate_trivial_f():
    np.testing.assert_allclose(evaluate_function(_spec("f"), 4.2, [0.0]), np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 10), st.floats(-1, 1))
def test_g_with_zero_beta_is_f_with_zero_gamma(seed, t, w1):
    g = gen_function("g", 4, seed)
    g = SyntheticFunctionSpec("g", 4, g.alpha, g.eta, g.phi, np.zeros(4), None)
    f = SyntheticFunctionSpec("f", 4, g.alpha, g.eta, g.phi, None, np.zeros(4))
    np.testing.assert_allclose(evaluate_function(g, t, [w1]), evaluate_function(f, t, [w1]), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 10), st.floats(-1, 1))
def test_h_with_zero_w2_is_g(seed, t, w1):
    h = gen_function("h", 4, seed)
    g = SyntheticFunctionSpec("g", 4, h.alpha, h.eta, h.phi, h.beta, None)
    np.testing.assert_allclose(evaluate_function(h, t, [w1, 0.0]), evaluate_function(g, t, [w1]), atol=1e-15)


def test_evaluate_matches_scalar_formula():
    spec = gen_function("f", 5, 3)
    t, w = 3.3, 0.4
    expect = [spec.alpha[d] * math.cos(spec.eta[d] * t / 10 + spec.phi[d]) + spec.gamma[d] * w**3 for d in range(5)]
    np.testing.assert_allclose(evaluate_function(spec, t, [w]), expect, atol=1e-14)
    batch = evaluate_function(spec, np.array([t, t]), np.array([[w], [w]]))
    np.testing.assert_allclose(batch, [expect, expect], atol=1e-14)


def test_evaluate_wrong_latent_dimension():
    with pytest.raises(ShapeError):
        evaluate_function(gen_function("h", 3, 0), 1.0, [0.5])


# -- sampling ---------------------------------------------------------------------


def test_noise_free_sampling_is_exact():
    spec = gen_function("f", 6, 1)
    data = sample_dataset(spec, 50, math.inf, 2)
    np.testing.assert_array_equal(data.Y, evaluate_function(spec, data.T[:, 0], data.W_true))
    assert data.T.min() >= 0 and data.T.max() <= 10
    assert np.abs(data.W_true).max() <= 1


@pytest.mark.parametrize("reference", ["signal", "observation"])
def test_snr_calibration(reference):
    spec = gen_function("g", 50, 4)
    data = sample_dataset(spec, 200, 6.0, 5, snr_reference=reference)
    signal = evaluate_function(spec, data.T[:, 0], data.W_true)
    noise = data.Y - signal
    measured = realized_snr_db(signal if reference == "signal" else data.Y, noise)
    assert 5.9 <= measured <= 6.1


def test_sampling_is_reproducible():
    spec = gen_function("h", 5, 6)
    a, b = sample_dataset(spec, 30, 6.0, 7), sample_dataset(spec, 30, 6.0, 7)
    assert a.Y.tobytes() == b.Y.tobytes() and a.T.tobytes() == b.T.tobytes()


# -- metrics ----------------------------------------------------------------------


def test_metrics_of_perfect_predictor():
    t = np.linspace(0, 10, 20)
    m = compute_metrics(t, t)
    assert m.avg == m.std == m.extreme_rate == 0.0
    np.testing.assert_array_equal(m.nrmse, 0.0)


def test_metrics_threshold_is_strict():
    # errors of exactly 10/3 (no rounding in the subtraction)
    t = np.array([-10 / 3, 0.0])
    m = compute_metrics(t + 10 / 3, t)
    assert m.avg == 10 / 3
    assert m.extreme_rate == 0.0
    grid = np.arange(16) / 4.0
    assert compute_metrics(grid + 2.5, grid, extreme_threshold=2.5).extreme_rate == 0.0
    assert compute_metrics(grid + 3.34, grid).extreme_rate == 1.0


def test_constant_mean_predictor_has_unit_nrmse():
    t = np.random.default_rng(0).uniform(0, 10, 37)
    assert compute_metrics(np.full_like(t, np.mean(t)), t).nrmse[0] == 1.0


def test_constant_truth_is_rejected():
    with pytest.raises(ValueError):
        compute_metrics(np.arange(3.0), np.ones(3))
    with pytest.raises(ShapeError):
        compute_metrics(np.ones(3), np.ones(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 10, 25)
    p = t + rng.normal(0, 2, 25)
    perm = rng.permutation(25)
    a, b = compute_metrics(p, t), compute_metrics(p[perm], t[perm])
    assert a.avg == pytest.approx(b.avg, rel=1e-12)
    assert a.extreme_rate == b.extreme_rate
    assert 0 <= a.extreme_rate <= 1 and a.avg >= 0 and a.std >= 0
    np.testing.assert_allclose(a.nrmse, b.nrmse, rtol=1e-12)


def test_default_extreme_threshold():
    assert EXTREME_THRESHOLD == pytest.approx(10 / 3)


# -- benchmark --------------------------------------------------------------------


def _small(**kw):
    base = dict(kind="f", n_functions=1, D=10, N=100, N_test=50, K=3, lw_list=(0, 1), max_iter=30)
    base.update(kw)
    return BenchmarkConfig(**base)


def test_benchmark_is_reproducible_and_shaped(tmp_path):
    a = run_benchmark(_small(include_jgmm=True))
    b = run_benchmark(_small(include_jgmm=True))
    assert a.to_csv() == b.to_csv()
    lines = a.to_csv().splitlines()
    assert lines[0] == "method,function_kind,avg,std,extreme_rate,n_trials,n_failures"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["MLE", "hGLLiM-1", "JGMM"]
    a.write(tmp_path / "r.csv", tmp_path / "m.json")
    man = json.loads((tmp_path / "m.json").read_text())
    assert man["config"]["D"] == 10 and len(man["trial_seeds"]) == 1


def test_benchmark_errors_stay_below_random_guessing():
    rep = run_benchmark(_small(n_functions=2, snr_db=6.0))
    for row in rep.rows:
        assert row.avg < 10 / 3


def test_benchmark_near_zero_error_on_noise_free_gllim_data():
    """Piecewise-linear ground truth drawn from a GLLiM model, fitted without noise."""
    from gllim.em import FitConfig, fit
    from gllim.model import as_dataset, forward_expectation, sample
    from oracles import separated_theta

    rng = np.random.default_rng(0)
    truth = separated_theta(rng, K=4, D=8, L_t=1, noise=1e-12, spread=8.0)
    X, Y, _ = sample(truth, 800, rng)
    train = as_dataset(truth, X, Y)
    Xt, Yt, _ = sample(truth, 200, rng)
    theta, _ = fit(train, FitConfig(K=4, max_iter=200), init=truth.replace(b=truth.b + 1e-3))
    err = compute_metrics(forward_expectation(theta, Yt)[:, 0], Xt[:, 0])
    assert err.avg < 1e-3


def test_benchmark_counts_failures(monkeypatch):
    import gllim.em as em
    from gllim.errors import FitFailure

    monkeypatch.setattr(em, "fit", lambda *a, **k: (_ for _ in ()).throw(FitFailure("nope")))
    rep = run_benchmark(_small(lw_list=(1,)))
    row = rep.row("hGLLiM-1")
    assert row.n_failures == 1 and row.n_trials == 0 and math.isnan(row.avg)


def test_benchmark_rejects_empty_counts():
    with pytest.raises(ValueError):
        run_benchmark(_small(n_functions=0))
