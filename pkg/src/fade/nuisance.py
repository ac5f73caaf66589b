"""Nuisance models and doubly robust pseudo-outcomes.

For a unit with decision ``d``, outcome ``y``, propensity ``pi`` and outcome
regression ``mu0`` the pseudo-outcome is::

    phi    = (1 - d) / (1 - pi) * (y - mu0) + mu0
    phibar = (1 - d) / (1 - pi) * (y**2 - nu0) + nu0

whose means estimate E[Y0] and E[Y0**2] whenever either the propensity or the
outcome model is correct.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import Dataset, fold_sizes
from .exceptions import DataValidationError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.025
PROBA_CLAMP = 1e-6


class LogisticIRLS(ClassifierMixin, BaseEstimator):
    """Logistic regression fitted by iteratively reweighted least squares.

    Targets may be fractional in ``[0, 1]`` (quasi-binomial fit), which is how
    bounded continuous outcomes are handled after rescaling.

    Parameters
    ----------
    max_iter : int
        Newton iterations before giving up with a :class:`ConvergenceWarning`.
    tol : float
        Convergence threshold on the Euclidean norm of the mean score
        ``X.T @ (y - p) / n``.
    """

    def __init__(self, max_iter=100, tol=1e-8):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=1)
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise DataValidationError("X and y have different numbers of rows")
        if X.shape[0] == 0:
            raise DataValidationError("cannot fit on an empty sample")
        if (y < 0).any() or (y > 1).any():
            raise DataValidationError("logistic targets must lie in [0, 1]")
        design = np.column_stack([np.ones(X.shape[0]), X])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise DataValidationError("rank-deficient design matrix (after adding intercept)")

        n, k = design.shape
        beta = np.zeros(k)
        eta = design @ beta
        loss = _logistic_loss(eta, y)
        converged = False
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            p = expit(eta)
            grad = design.T @ (y - p) / n
            if np.linalg.norm(grad) <= self.tol:
                converged = True
                break
            weights = np.maximum(p * (1 - p), 1e-12)
            hess = (design * weights[:, None]).T @ design / n
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, grad, rcond=None)[0]
            # step halving keeps the loss monotone and the coefficients finite
            for _ in range(50):
                cand = beta + step
                cand_eta = design @ cand
                cand_loss = _logistic_loss(cand_eta, y)
                if np.all(np.isfinite(cand)) and cand_loss <= loss + 1e-15 * abs(loss):
                    break
                step = step / 2
            else:
                break
            if cand_loss >= loss and np.allclose(cand, beta, rtol=0, atol=1e-14):
                break
            beta, eta, loss = cand, cand_eta, cand_loss
        else:
            p = expit(eta)
            converged = np.linalg.norm(design.T @ (y - p) / n) <= self.tol
        if not converged:
            warnings.warn(f"IRLS stopped after {n_iter} iterations without reaching tol={self.tol}",
                          ConvergenceWarning, stacklevel=2)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:].copy()
        self.n_iter_ = n_iter
        self.converged_ = bool(converged)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = np.clip(expit(self.decision_function(X)), PROBA_CLAMP, 1 - PROBA_CLAMP)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def _logistic_loss(eta, y):
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def _is_binary(y) -> bool:
    return bool(np.isin(y, (0.0, 1.0)).all())


@dataclass(frozen=True)
class NuisanceModel:
    """A fitted single-target nuisance regression over selected covariates."""

    target: str
    features: tuple
    link: str
    estimator: object
    scale: tuple = (0.0, 1.0)
    clip: tuple = (-np.inf, np.inf)

    def predict(self, data: Dataset) -> np.ndarray:
        w = _features(data, self.features)
        if self.link == "logit":
            lo, hi = self.scale
            out = lo + (hi - lo) * self.estimator.predict_proba(w)[:, 1]
        else:
            coef = self.estimator
            out = coef[0] + w @ coef[1:]
        return np.clip(out, *self.clip)


def _features(data: Dataset, features) -> np.ndarray:
    if features is None:
        return data.w
    return np.column_stack([data.column(name) for name in features]) if features else np.zeros((len(data), 0))


def fit_logistic_irls(data: Dataset, target: str, max_iter: int = 100, tol: float = 1e-8,
                      features: Optional[Sequence[str]] = None) -> NuisanceModel:
    """Fit one nuisance regression on ``data``.

    ``target`` is ``"d"`` (propensity, all rows), ``"y"`` (outcome regression on
    the D=0 rows) or ``"y2"`` (squared outcome on the D=0 rows).  Outcomes are
    rescaled by the dataset bounds before the logistic fit.  For a binary
    outcome ``"y2"`` coincides with ``"y"``; otherwise it is a least-squares
    fit clipped at 0.
    """
    features = None if features is None else tuple(features)
    if target == "d":
        if data.d is None:
            raise DataValidationError("propensity fit needs a D column")
        est = LogisticIRLS(max_iter, tol).fit(_features(data, features), data.d)
        return NuisanceModel("d", features, "logit", est)
    if target not in ("y", "y2"):
        raise ValueError(f"unknown nuisance target {target!r}")

    sub = data if data.d is None else data.take(np.flatnonzero(data.d == 0))
    if len(sub) == 0:
        raise DataValidationError("no D=0 rows to fit the outcome regression on")
    lo, hi = data.bounds
    if target == "y" or _is_binary(sub.y):
        est = LogisticIRLS(max_iter, tol).fit(_features(sub, features), (sub.y - lo) / (hi - lo))
        return NuisanceModel(target, features, "logit", est, scale=(lo, hi), clip=(lo, hi))
    w = np.column_stack([np.ones(len(sub)), _features(sub, features)])
    if np.linalg.matrix_rank(w) < w.shape[1]:
        raise DataValidationError("rank-deficient design matrix (after adding intercept)")
    coef = np.linalg.lstsq(w, sub.y ** 2, rcond=None)[0]
    return NuisanceModel(target, features, "identity", coef, clip=(0.0, max(lo * lo, hi * hi)))


@dataclass(frozen=True)
class NuisanceFit:
    """Per-unit nuisance values for one target fold.

    ``pi_hat`` is truncated at ``1 - gamma`` on construction.
    """

    pi_hat: np.ndarray
    mu0_hat: np.ndarray
    nu0_hat: Optional[np.ndarray] = None
    gamma: float = DEFAULT_GAMMA
    provenance: str = "irls"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        pi = np.clip(np.asarray(self.pi_hat, dtype=float), 0.0, 1.0 - self.gamma)
        mu = np.asarray(self.mu0_hat, dtype=float)
        if pi.shape != mu.shape:
            raise DataValidationError("pi_hat and mu0_hat lengths differ")
        object.__setattr__(self, "pi_hat", pi)
        object.__setattr__(self, "mu0_hat", mu)
        if self.nu0_hat is not None:
            nu = np.asarray(self.nu0_hat, dtype=float)
            if nu.shape != mu.shape:
                raise DataValidationError("nu0_hat length differs from mu0_hat")
            object.__setattr__(self, "nu0_hat", nu)

    def __len__(self):
        return self.mu0_hat.shape[0]


class IRLSNuisanceLearner(BaseEstimator):
    """Fits propensity, outcome and (optionally) squared-outcome models.

    ``fit`` takes the nuisance fold, ``predict`` returns a :class:`NuisanceFit`
    for any fold with the same columns.
    """

    def __init__(self, gamma=DEFAULT_GAMMA, max_iter=100, tol=1e-8, features=None, want_nu0=True):
        self.gamma = gamma
        self.max_iter = max_iter
        self.tol = tol
        self.features = features
        self.want_nu0 = want_nu0

    def fit(self, data: Dataset):
        self.pi_model_ = fit_logistic_irls(data, "d", self.max_iter, self.tol, self.features)
        self.mu0_model_ = fit_logistic_irls(data, "y", self.max_iter, self.tol, self.features)
        self.binary_outcome_ = _is_binary(data.y)
        self.nu0_model_ = None
        if self.want_nu0 and not self.binary_outcome_:
            self.nu0_model_ = fit_logistic_irls(data, "y2", self.max_iter, self.tol, self.features)
        return self

    def predict(self, data: Dataset) -> NuisanceFit:
        check_is_fitted(self, "pi_model_")
        mu0 = self.mu0_model_.predict(data)
        nu0 = None
        if self.want_nu0:
            # Y in {0, 1} gives Y**2 = Y, so nu0 = mu0
            nu0 = mu0 if self.nu0_model_ is None else self.nu0_model_.predict(data)
        return NuisanceFit(self.pi_model_.predict(data), mu0, nu0, self.gamma, "irls")


def fit_nuisance(nuis: Dataset, target: Dataset, gamma: float = DEFAULT_GAMMA, **kwargs) -> NuisanceFit:
    """Fit nuisances on ``nuis`` and evaluate them on ``target``."""
    return IRLSNuisanceLearner(gamma=gamma, **kwargs).fit(nuis).predict(target)


def ingest_external_scores(path, kind: str, n_rows: Optional[int] = None, bounds=(0.0, 1.0),
                           gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Read a headerless single-column score file aligned with the target fold.

    ``kind`` is ``"pi"``, ``"mu0"`` or ``"nu0"``.  Propensities must lie in
    [0, 1] and are truncated at ``1 - gamma``; ``mu0`` scores must lie within
    ``bounds``; ``nu0`` scores must be nonnegative.
    """
    values = pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=float)
    if values.ndim != 2 or values.shape[1] != 1:
        raise DataValidationError(f"{path}: expected a single column of scores")
    values = values[:, 0]
    if n_rows is not None and values.shape[0] != n_rows:
        raise DataValidationError(f"{path}: {values.shape[0]} scores for {n_rows} rows")
    if not np.all(np.isfinite(values)):
        raise DataValidationError(f"{path}: non-finite score")
    lo, hi = bounds
    if kind == "pi":
        if (values < 0).any() or (values > 1).any():
            raise DataValidationError(f"{path}: propensity outside [0, 1]")
        return np.minimum(values, 1.0 - gamma)
    if kind == "mu0":
        if (values < lo).any() or (values > hi).any():
            raise DataValidationError(f"{path}: mu0 score outside [{lo}, {hi}]")
        return values
    if kind == "nu0":
        if (values < 0).any():
            raise DataValidationError(f"{path}: negative nu0 score")
        return values
    raise ValueError(f"unknown score kind {kind!r}")


@dataclass(frozen=True)
class PseudoOutcomes:
    phi: np.ndarray
    phibar: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("phi", "phibar"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if not np.all(np.isfinite(arr)):
                    raise NumericalError(f"non-finite {name}")
                object.__setattr__(self, name, arr)

    def __len__(self):
        return self.phi.shape[0]


def pseudo_outcomes(fit: NuisanceFit, data: Dataset, want_phibar: bool = True) -> PseudoOutcomes:
    if data.d is None:
        raise DataValidationError("pseudo-outcomes need a D column")
    if len(fit) != len(data):
        raise DataValidationError(f"nuisance fit covers {len(fit)} rows, data has {len(data)}")
    if np.any(fit.pi_hat >= 1):
        raise NumericalError("propensity of 1 after truncation")
    ipw = (1 - data.d) / (1 - fit.pi_hat)
    phi = ipw * (data.y - fit.mu0_hat) + fit.mu0_hat
    phibar = None
    if want_phibar:
        if fit.nu0_hat is None:
            raise DataValidationError("phibar requested but the nuisance fit has no nu0")
        phibar = ipw * (data.y ** 2 - fit.nu0_hat) + fit.nu0_hat
    return PseudoOutcomes(phi, phibar)


def cross_fit(data: Dataset, folds: int, learner=None, seed: int = 0,
              want_phibar: bool = True) -> tuple:
    """Out-of-fold pseudo-outcomes.

    Rows are permuted with ``seed`` and cut into ``folds`` near-equal folds;
    each fold is scored by a clone of ``learner`` fitted on the other folds.
    With ``folds == 1`` the learner is fitted and evaluated on the same rows
    and a warning is issued.

    Returns
    -------
    (PseudoOutcomes, NuisanceFit)
        Both aligned with the row order of ``data``.
    """
    learner = IRLSNuisanceLearner() if learner is None else learner
    if data.d is None:
        raise DataValidationError("cross-fitting needs a D column")
    folds = int(folds)
    if folds < 1:
        raise ValueError("folds must be >= 1")
    if folds == 1:
        warnings.warn("cross_fit with folds=1 fits and scores nuisances on the same rows",
                      UserWarning, stacklevel=2)
        fit = clone(learner).fit(data).predict(data)
        return pseudo_outcomes(fit, data, want_phibar), fit

    n = len(data)
    sizes = fold_sizes(n, [1.0 / folds] * folds)
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.repeat(np.arange(folds), sizes)
    pi = np.empty(n)
    mu0 = np.empty(n)
    nu0 = np.empty(n)
    has_nu0 = True
    gamma = DEFAULT_GAMMA
    for k in range(folds):
        held = np.flatnonzero(assignment == k)
        rest = np.flatnonzero(assignment != k)
        train = data.take(rest)
        if not np.any(train.d == 0):
            raise DataValidationError(f"training rows for fold {k} contain no D=0 units")
        fit = clone(learner).fit(train).predict(data.take(held))
        pi[held] = fit.pi_hat
        mu0[held] = fit.mu0_hat
        gamma = fit.gamma
        if fit.nu0_hat is None:
            has_nu0 = False
        else:
            nu0[held] = fit.nu0_hat
    fit = NuisanceFit(pi, mu0, nu0 if has_nu0 else None, gamma, "cross-fit")
    return pseudo_outcomes(fit, data, want_phibar), fit
