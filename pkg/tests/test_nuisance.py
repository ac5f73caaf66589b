import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from fade.dataset import Dataset, Roles
from fade.exceptions import DataValidationError, NumericalError
from fade.nuisance import (IRLSNuisanceLearner, LogisticIRLS, NuisanceFit, PseudoOutcomes, cross_fit,
                           fit_logistic_irls, fit_nuisance, ingest_external_scores, pseudo_outcomes)
from fade.sim import DgpSpec, bayes_optimal, generate, true_propensity


def test_zero_association_gives_flat_slope():
    x = np.repeat([-1.0, 1.0], 50)[:, None]
    y = np.tile([0.0, 1.0], 50)
    est = LogisticIRLS().fit(x, y)
    assert abs(est.coef_[0]) < 1e-6
    assert abs(est.intercept_) < 1e-6


def test_recovers_generating_coefficients():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50_000, 3))
    truth = np.array([0.5, -1.0, 2.0])
    y = (rng.random(50_000) < expit(-0.3 + x @ truth)).astype(float)
    est = LogisticIRLS().fit(x, y)
    assert est.converged_
    np.testing.assert_allclose(est.coef_, truth, atol=0.05)
    assert est.intercept_ == pytest.approx(-0.3, abs=0.05)


def test_separable_data_is_clamped():
    x = np.linspace(-1, 1, 40)[:, None]
    y = (x[:, 0] > 0).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = LogisticIRLS(max_iter=50).fit(x, y)
    p = est.predict_proba(x)[:, 1]
    assert np.all(np.isfinite(p))
    assert p.min() >= 1e-6 and p.max() <= 1 - 1e-6


def test_rank_deficient_design():
    x = np.ones((20, 1))
    with pytest.raises(DataValidationError):
        LogisticIRLS().fit(x, np.tile([0.0, 1.0], 10))


def test_outcome_model_uses_untreated_rows_only():
    ds = generate(DgpSpec(2000, 1))
    d0 = ds.take(np.flatnonzero(ds.d == 0))
    full = fit_logistic_irls(ds, "y")
    sub = fit_logistic_irls(d0, "y")
    np.testing.assert_allclose(full.estimator.coef_, sub.estimator.coef_, atol=1e-10)


def test_empty_untreated_subset():
    ds = generate(DgpSpec(50, 1))
    treated = ds.take(np.flatnonzero(ds.d == 1))
    with pytest.raises(DataValidationError):
        fit_logistic_irls(treated, "y")


def test_external_constant_propensity(tmp_path):
    path = tmp_path / "pi.csv"
    np.savetxt(path, np.full(7, 0.5))
    np.testing.assert_array_equal(ingest_external_scores(path, "pi", 7), 0.5)


def test_external_propensity_truncated(tmp_path):
    path = tmp_path / "pi.csv"
    np.savetxt(path, [0.99, 0.2])
    assert ingest_external_scores(path, "pi", 2, gamma=0.025).tolist() == [0.975, 0.2]


def test_external_row_mismatch(tmp_path):
    path = tmp_path / "pi.csv"
    np.savetxt(path, [0.5, 0.5])
    with pytest.raises(DataValidationError):
        ingest_external_scores(path, "pi", 3)


def test_external_out_of_range(tmp_path):
    path = tmp_path / "mu.csv"
    np.savetxt(path, [1.5])
    with pytest.raises(DataValidationError):
        ingest_external_scores(path, "mu0", 1)


def _one(d, y):
    return Dataset(a=np.array([0.0]), x=np.zeros((1, 0)), y=np.array([y]), bounds=(0, 1),
                   roles=Roles("a", "y", d="d"), d=np.array([d]))


def test_treated_unit_pseudo_outcome():
    po = pseudo_outcomes(NuisanceFit(np.array([0.8]), np.array([0.3])), _one(1.0, 1.0), want_phibar=False)
    assert po.phi[0] == pytest.approx(0.3)


def test_untreated_unit_pseudo_outcome():
    po = pseudo_outcomes(NuisanceFit(np.array([0.5]), np.array([0.3])), _one(0.0, 1.0), want_phibar=False)
    assert po.phi[0] == pytest.approx(1.7)


def test_true_nuisance_mean_matches_potential_outcome_mean():
    spec = DgpSpec(1_000_000, 5)
    ds = generate(spec)
    fit = NuisanceFit(true_propensity(spec, ds.a, ds.x), bayes_optimal(spec, ds))
    po = pseudo_outcomes(fit, ds, want_phibar=False)
    assert po.phi.mean() == pytest.approx(0.7 * 0.50 + 0.3 * 0.76, abs=0.004)
    assert po.phi.mean() == pytest.approx(ds.y0.mean(), abs=0.003)


def test_binary_outcome_phibar_equals_phi():
    ds = generate(DgpSpec(500, 2))
    po = pseudo_outcomes(fit_nuisance(generate(DgpSpec(500, 3)), ds), ds)
    np.testing.assert_array_equal(po.phi, po.phibar)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), gamma=st.floats(0.01, 0.5))
def test_pseudo_outcome_bound(seed, gamma):
    rng = np.random.default_rng(seed)
    ds = generate(DgpSpec(200, seed))
    fit = NuisanceFit(rng.random(200), rng.random(200), gamma=gamma)
    assert fit.pi_hat.max() <= 1 - gamma
    po = pseudo_outcomes(fit, ds, want_phibar=False)
    assert np.abs(po.phi).max() <= 1 / gamma + 1 + 1e-12


def test_continuous_outcome_second_moment_model():
    ds = generate(DgpSpec(1500, 3))
    frame = ds.to_frame()
    frame["y"] = np.clip(0.5 * frame["y"] + 0.25 * frame["x1"].abs().clip(0, 1), 0, 1)
    from fade.dataset import from_frame
    cont = from_frame(frame.drop(columns=["y0", "y1"]), Roles("a", "y", ("x1", "x2", "x3", "x4"), d="d"), (0, 1))
    fit = IRLSNuisanceLearner().fit(cont).predict(cont)
    assert fit.nu0_hat is not None and np.all(fit.nu0_hat >= 0)
    assert not np.array_equal(fit.nu0_hat, fit.mu0_hat)


def test_cross_fit_out_of_fold():
    ds = generate(DgpSpec(400, 8))
    po, fit = cross_fit(ds, 2, seed=1)
    perm = np.random.default_rng(1).permutation(400)
    first = np.sort(perm[:200])
    other = ds.take(np.sort(perm[200:]))
    manual = IRLSNuisanceLearner().fit(other).predict(ds.take(first))
    np.testing.assert_allclose(fit.mu0_hat[first], manual.mu0_hat)
    assert len(po) == 400


def test_cross_fit_agrees_with_single_split():
    ds = generate(DgpSpec(10_000, 9))
    po_cf, _ = cross_fit(ds, 5, seed=0)
    po_ss = pseudo_outcomes(fit_nuisance(generate(DgpSpec(10_000, 10)), ds), ds)
    assert po_cf.phi.mean() == pytest.approx(po_ss.phi.mean(), abs=0.01)


def test_cross_fit_single_fold_warns():
    ds = generate(DgpSpec(200, 8))
    with pytest.warns(UserWarning):
        cross_fit(ds, 1)


def test_cross_fit_fold_without_untreated_rows():
    ds = generate(DgpSpec(40, 8))
    treated = ds.take(np.flatnonzero(ds.d == 1))
    with pytest.raises(DataValidationError):
        cross_fit(treated, 2)


def test_pseudo_outcome_must_be_finite():
    with pytest.raises(NumericalError):
        PseudoOutcomes(np.array([np.nan]))
