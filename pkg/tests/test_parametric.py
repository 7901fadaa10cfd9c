import math
import warnings

import numpy as np
import pytest

from hazard_bench.dataset import DesignMatrix
from hazard_bench.nonparametric import StepSurvivalCurve
from hazard_bench.parametric import (
    AftFit, RankDeficiencyError, WeibullFit, aft_loglik, aft_predict_survival,
    fit_weibull_aft_mle, fit_weibull_mle, predicted_median_time, relative_likelihood_grid,
    weibull_cumhaz, weibull_loglik, weibull_survival,
)
from oracles import aft_loglik_naive, central_diff, weibull_loglik_naive


def _design(X, times, events):
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    return DesignMatrix(X, np.asarray(times, float), np.asarray(events, float),
                        tuple(f"x{j}" for j in range(p)), np.zeros(p), np.ones(p))


def _aft_data(rng, n, shape, beta):
    X = rng.normal(size=(n, len(beta) - 1))
    lam = np.exp(beta[0] + X @ beta[1:])
    t = lam * rng.weibull(shape, n)
    c = rng.exponential(3 * np.median(t), n)
    return X, np.minimum(t, c), (t <= c).astype(float)


def test_loglik_unit_cases():
    assert weibull_loglik(1, 1, [1.0], [1]) == -1.0
    assert weibull_loglik(1, 1, [2.0], [0]) == -2.0


def test_loglik_domain():
    with pytest.raises(ValueError):
        weibull_loglik(0, 1, [1.0], [1])
    with pytest.raises(ValueError):
        weibull_loglik(1, -1, [1.0], [1])


def test_loglik_matches_naive(rng):
    for _ in range(10):
        t = rng.exponential(5, 10) + 0.01
        e = (rng.random(10) < 0.6).astype(int)
        shape, scale = rng.uniform(0.3, 3), rng.uniform(1, 10)
        assert weibull_loglik(shape, scale, t, e) == pytest.approx(
            weibull_loglik_naive(shape, scale, t, e), rel=1e-12, abs=1e-12)


def test_aft_loglik_matches_naive(rng):
    for _ in range(10):
        X, t, e = _aft_data(rng, 15, 1.3, np.array([2.0, 0.5, -0.3]))
        shape = rng.uniform(0.5, 2.5)
        beta = rng.normal(0, 0.3, 3) + np.array([2.0, 0, 0])
        Z = np.column_stack([np.ones(15), X])
        got = aft_loglik(np.concatenate(([math.log(shape)], beta)), Z, t, e)
        want = aft_loglik_naive(shape, beta, X, t, e)
        assert abs(got - want) <= 1e-10 * max(1, abs(want))


def test_gradient_and_hessian_vs_finite_differences(rng):
    X, t, e = _aft_data(rng, 40, 1.5, np.array([1.0, 0.4, -0.6]))
    Z = np.column_stack([np.ones(40), X])
    for _ in range(20):
        params = np.concatenate(([rng.normal(0, 0.3)], rng.normal([1.0, 0.4, -0.6], 0.3)))
        _, g, H = aft_loglik(params, Z, t, e, hess=True)
        fd = central_diff(lambda p: aft_loglik(p, Z, t, e), params)
        assert np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))) < 1e-4
        fdH = np.array([central_diff(lambda p: aft_loglik(p, Z, t, e, grad=True)[1][k], params)
                        for k in range(params.size)])
        assert np.max(np.abs(H - fdH)) / max(1.0, np.max(np.abs(fdH))) < 1e-4


def test_exponential_mle_with_fixed_shape(rng):
    t = rng.exponential(7.0, 200)
    fit = fit_weibull_mle(t, np.ones(200), fixed_shape=1.0)
    assert fit.shape == 1.0
    assert fit.scale == pytest.approx(t.mean(), rel=1e-9)


def test_generate_and_refit_weibull():
    rng = np.random.default_rng(11)
    t = 100 * rng.weibull(1.5, 5000)
    fit = fit_weibull_mle(t, np.ones(5000))
    assert abs(fit.shape / 1.5 - 1) < 0.05
    assert abs(fit.scale / 100 - 1) < 0.03


def test_mle_gradient_small_and_is_maximum(rng):
    t = rng.weibull(1.2, 300) * 50
    e = (rng.random(300) < 0.7).astype(float)
    fit = fit_weibull_mle(t, e)
    Z = np.ones((300, 1))
    _, g = aft_loglik(np.array([math.log(fit.shape), math.log(fit.scale)]), Z, t, e, grad=True)
    assert np.max(np.abs(g)) < 1e-6
    for _ in range(100):
        z = fit.shape * rng.uniform(0.9, 1.1)
        lam = fit.scale * rng.uniform(0.9, 1.1)
        assert weibull_loglik(z, lam, t, e) <= fit.loglik + 1e-9


def test_fit_needs_two_events():
    with pytest.raises(ValueError):
        fit_weibull_mle([1.0, 2.0, 3.0], [1, 0, 0])


def test_zero_column_aft_nests_weibull(rng):
    t = rng.weibull(1.4, 100) * 20
    e = (rng.random(100) < 0.8).astype(float)
    aft = fit_weibull_aft_mle(_design(np.zeros((100, 0)), t, e))
    w = fit_weibull_mle(t, e)
    assert aft.shape == pytest.approx(w.shape, rel=1e-7)
    assert math.exp(aft.beta[0]) == pytest.approx(w.scale, rel=1e-7)
    assert aft.loglik == pytest.approx(w.loglik, rel=1e-10)


def test_aft_recovery():
    rng = np.random.default_rng(5)
    beta = np.array([3.0, 0.5, -0.8, 0.3])
    X, t, e = _aft_data(rng, 5000, 1.5, beta)
    fit = fit_weibull_aft_mle(_design(X, t, e))
    assert abs(fit.shape / 1.5 - 1) < 0.05
    np.testing.assert_array_less(np.abs(fit.beta / beta - 1), 0.05)


def test_aft_gradient_at_optimum(rng):
    X, t, e = _aft_data(rng, 300, 1.1, np.array([2.0, 0.3, -0.2]))
    fit = fit_weibull_aft_mle(_design(X, t, e))
    Z = np.column_stack([np.ones(300), X])
    _, g = aft_loglik(np.concatenate(([math.log(fit.shape)], fit.beta)), Z, t, e, grad=True)
    assert np.max(np.abs(g)) < 1e-6


def test_aft_rank_deficiency_names_column(rng):
    X = rng.normal(size=(50, 2))
    X = np.column_stack([X, X[:, 0] * 2])
    with pytest.raises(RankDeficiencyError, match="x2"):
        fit_weibull_aft_mle(_design(X, rng.exponential(1, 50) + 0.1, np.ones(50)))


def test_aft_too_few_events(rng):
    X = rng.normal(size=(20, 3))
    e = np.zeros(20)
    e[:4] = 1
    with pytest.raises(ValueError, match="events"):
        fit_weibull_aft_mle(_design(X, rng.exponential(1, 20) + 0.1, e))


def test_weibull_survival_values():
    fit = WeibullFit(2.3, 40.0, 0.0)
    assert weibull_survival(fit, 0.0) == 1.0
    assert weibull_survival(fit, 40.0) == pytest.approx(math.exp(-1), abs=1e-15)


def test_survival_cumhaz_identity(rng):
    for shape, scale in [(0.5, 3.0), (1.0, 10.0), (2.7, 100.0)]:
        t = np.sort(rng.uniform(0, 10 * scale, 100))
        H = weibull_cumhaz(shape, scale, t)
        S = weibull_survival(WeibullFit(shape, scale, 0.0), t)
        assert np.all(np.diff(H) >= 0)
        np.testing.assert_array_equal(S, np.exp(-H))
        assert np.max(np.abs(S * np.exp(H) - 1)) < 1e-12


def test_aft_prediction_identities(rng):
    fit = AftFit(1.7, np.array([3.0, 0.4, -0.2]), 0.0)
    t = rng.uniform(0, 200, 50)
    assert aft_predict_survival(fit, [0.3, 1.0], 0.0) == 1.0
    np.testing.assert_array_equal(aft_predict_survival(fit, [0.0, 0.0], t),
                                  weibull_survival(WeibullFit(1.7, math.exp(3.0), 0.0), t))
    x = np.array([0.5, -1.0])
    S = aft_predict_survival(fit, x, t)
    H = weibull_cumhaz(1.7, fit.scale_for(x)[0], t)
    assert np.max(np.abs(S * np.exp(H) - 1)) < 1e-12
    with pytest.raises(ValueError):
        aft_predict_survival(fit, [1.0], t)


def test_zero_coefficients_equal_plain_weibull(rng):
    fit = AftFit(0.9, np.array([2.5, 0.0, 0.0]), 0.0)
    t = rng.uniform(0, 50, 30)
    x = rng.normal(size=2)
    np.testing.assert_array_equal(aft_predict_survival(fit, x, t),
                                  weibull_survival(WeibullFit(0.9, math.exp(2.5), 0.0), t))


def test_doubling_scale_doubles_median():
    fit = AftFit(1.3, np.array([1.0, 1.0]), 0.0)
    m1 = predicted_median_time(fit, [0.0]).time
    m2 = predicted_median_time(fit, [math.log(2)]).time
    assert m2 == pytest.approx(2 * m1, rel=1e-14)


def test_median_closed_form():
    m = predicted_median_time(WeibullFit(1.0, 1.0, 0.0))
    assert m.time == pytest.approx(math.log(2), abs=1e-15) and not m.restricted


def test_step_median_first_crossing():
    c = StepSurvivalCurve(np.array([10.0, 20.0]), np.array([0.6, 0.4]))
    assert predicted_median_time(c) == (20.0, False)


def test_step_median_restricted_mean():
    c = StepSurvivalCurve(np.array([0.0, 100.0]), np.array([0.9, 0.9]))
    m = predicted_median_time(c, horizon=100.0)
    assert m.restricted and m.time == pytest.approx(90.0, abs=1e-12)


def test_contour_grid_contains_mle(rng):
    t = rng.weibull(1.4, 200) * 30
    e = (rng.random(200) < 0.7).astype(float)
    mle = fit_weibull_mle(t, e)
    g = relative_likelihood_grid(t, e, (mle.shape - 0.2, mle.shape + 0.2),
                                 (mle.scale - 3, mle.scale + 3), resolution=3)
    assert g.shapes[1] == pytest.approx(mle.shape) and g.scales[1] == pytest.approx(mle.scale)
    assert g.rel_lik.max() == pytest.approx(1.0, abs=1e-12)
    assert np.all((g.rel_lik > 0) & (g.rel_lik <= 1))
    assert not g.mle_outside


def test_contour_default_grid_values_in_unit_interval(gbsg):
    g = relative_likelihood_grid(gbsg.train.times, gbsg.train.events, resolution=40)
    assert g.rel_lik.shape == (40, 40)
    assert np.all((g.rel_lik > 0) & (g.rel_lik <= 1))
    assert g.rel_lik.max() > 0.99


def test_contour_one_subject_matches_direct():
    t, e = np.array([5.0]), np.array([1.0])
    mle = WeibullFit(2.0, 5.0, weibull_loglik(2.0, 5.0, t, e))
    g = relative_likelihood_grid(t, e, (1.0, 3.0), (4.0, 6.0), resolution=3, mle=mle)
    for i, z in enumerate(g.shapes):
        for j, lam in enumerate(g.scales):
            want = math.exp(weibull_loglik_naive(z, lam, t, e)
                            - max(mle.loglik, max(weibull_loglik_naive(a, b, t, e)
                                                  for a in g.shapes for b in g.scales)))
            assert g.rel_lik[i, j] == pytest.approx(want, rel=1e-12)


def test_contour_outside_warns(rng):
    t = rng.weibull(1.4, 100) * 30
    e = np.ones(100)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        g = relative_likelihood_grid(t, e, (5.0, 6.0), (1.0, 2.0), resolution=4)
    assert g.mle_outside and any("MLE" in str(x.message) for x in w)


def test_contour_resolution_check(rng):
    with pytest.raises(ValueError):
        relative_likelihood_grid(rng.exponential(1, 10) + 0.1, np.ones(10), resolution=1)


def test_contour_csv(tmp_path, rng):
    g = relative_likelihood_grid(rng.exponential(5, 30) + 0.1, np.ones(30), resolution=5)
    g.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "zeta,lambda,rel_lik" and len(lines) == 26


def test_weibull_probplot_overlay_on_gbsg(gbsg):
    """Fitted Weibull tracks the KM curve on the log(-log) scale."""
    from hazard_bench.nonparametric import kaplan_meier
    km = kaplan_meier(gbsg.train.times, gbsg.train.events)
    fit = fit_weibull_mle(gbsg.train.times, gbsg.train.events)
    S = weibull_survival(fit, km.times)
    assert np.max(np.abs(S - km.survival)) < 0.05
