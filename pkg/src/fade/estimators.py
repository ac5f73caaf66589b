"""scikit-learn style front end for the FADE solvers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .basis import BasisMatrix
from .fairness import COUNTERFACTUAL, OBSERVABLE, FairnessSpec, eval_fairness
from .solver import build_problem, solve_penalized, solve_risk_min, solve_unfair_min

METHODS = ("penalized", "risk_min", "unfair_min")


class FadeRegressor(RegressorMixin, BaseEstimator):
    """Fair linear ensemble over a precomputed basis.

    ``X`` holds the basis columns (base-predictor scores, a mean column,
    ...), one row per unit.  ``fit`` also needs the binary sensitive feature;
    in counterfactual mode pass the pseudo-outcomes as ``y`` and the outcome
    proxy for FPR/FNR as ``fairness_outcome``.

    Parameters
    ----------
    method : {"penalized", "risk_min", "unfair_min"}
    fairness : sequence of str or FairnessSpec
    mode : {"observable", "counterfactual"}
    lambdas : penalties, one per fairness spec (penalized)
    lambda0 : float, smoothing weight; ``K`` is the smoothing matrix
    eps : disparity caps (risk_min) or the risk cap (unfair_min)
    alpha : unfairness weights (unfair_min)
    bounds : output range used when ``truncate``
    """

    def __init__(self, method="penalized", fairness=("rate",), mode=OBSERVABLE, lambdas=None, lambda0=0.0,
                 K=None, eps=None, alpha=None, bounds=(0.0, 1.0), truncate=True):
        self.method = method
        self.fairness = fairness
        self.mode = mode
        self.lambdas = lambdas
        self.lambda0 = lambda0
        self.K = K
        self.eps = eps
        self.alpha = alpha
        self.bounds = bounds
        self.truncate = truncate

    def _specs(self):
        out = []
        for f in self.fairness:
            out.append(f if isinstance(f, FairnessSpec) else FairnessSpec(kind=f, mode=self.mode))
        return out

    def fit(self, X, y, sensitive_features=None, fairness_outcome=None, second_moment=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if sensitive_features is None:
            raise ValueError("fit needs sensitive_features")
        a = np.asarray(sensitive_features, dtype=float)
        check_consistent_length(X, y, a)
        self.n_features_in_ = X.shape[1]
        basis = BasisMatrix(X, tuple(f"b{i}" for i in range(X.shape[1])), "fit", tuple(self.bounds))
        basis.check_conditioning()
        specs = self._specs()
        proxy = fairness_outcome
        if proxy is None and self.mode == OBSERVABLE:
            proxy = y
        gs = [eval_fairness(s, a, proxy if s.uses_outcome else None) for s in specs]
        if second_moment is None and self.method == "unfair_min" and self.mode == COUNTERFACTUAL:
            raise ValueError("counterfactual unfair_min needs second_moment (phibar)")
        self.problem_ = build_problem(basis, y, gs, second_moment, want_d=self.mode == OBSERVABLE)
        t = len(specs)
        if self.method == "penalized":
            lam = np.zeros(t) if self.lambdas is None else np.broadcast_to(np.asarray(self.lambdas, float), (t,))
            sol = solve_penalized(self.problem_, lam, self.lambda0, self.K)
        elif self.method == "risk_min":
            if self.eps is None:
                raise ValueError("risk_min needs eps")
            sol = solve_risk_min(self.problem_, np.broadcast_to(np.asarray(self.eps, float), (t,)))
        else:
            if self.eps is None:
                raise ValueError("unfair_min needs eps")
            alpha = np.ones(t) if self.alpha is None else np.broadcast_to(np.asarray(self.alpha, float), (t,))
            sol = solve_unfair_min(self.problem_, float(self.eps), alpha)
        self.solution_ = sol
        self.coef_ = sol.beta
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        out = X @ self.coef_
        return np.clip(out, *self.bounds) if self.truncate else out
