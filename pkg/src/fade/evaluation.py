"""Risk, AUC and disparity estimates for fixed predictors, with normal CIs.

Per-unit influence terms:

* observable risk: ``(f - Y)^2``
* counterfactual risk: ``f^2 - 2 f phi + phibar``
* disparity ``alpha0 E[f | h0] - alpha1 E[f | h1]``: ``alpha0 eta0 / Pn(w0) -
  alpha1 eta1 / Pn(w1)`` with ``eta_a = w_a (f - Pn(w_a f) / Pn(w_a))``

Half-widths are ``z_{1 - level/2} * sd / sqrt(n)``.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .dataset import Dataset
from .exceptions import DataValidationError
from .fairness import COUNTERFACTUAL, FairnessVector
from .nuisance import PseudoOutcomes

logger = logging.getLogger(__name__)

METRICS = ("mse", "rate", "fpr", "fnr")


@dataclass
class PerformanceProfile:
    model_id: int
    mse: float
    auc: float
    disparities: dict = field(default_factory=dict)
    ci_half_widths: dict = field(default_factory=dict)
    n_test: int = 0
    lambdas: dict = field(default_factory=dict)

    def absolute(self, name: str) -> float:
        return abs(self.disparities[name])

    def metric(self, name: str) -> float:
        return self.mse if name == "mse" else self.absolute(name)

    def to_row(self) -> dict:
        row = {"model_id": self.model_id}
        row.update({f"lambda_{k}": v for k, v in self.lambdas.items()})
        row.update(mse=self.mse, mse_ci=self.ci_half_widths.get("mse", np.nan), auc=self.auc)
        for name, val in self.disparities.items():
            row[f"{name}_signed"] = val
            row[f"{name}_abs"] = abs(val)
            row[f"{name}_ci"] = self.ci_half_widths.get(name, np.nan)
        row["n_test"] = self.n_test
        return row


@dataclass(frozen=True, eq=False)
class VarianceComponents:
    """Event weights ``gamma[a]`` and centered terms ``eta[a]`` for groups a = 0, 1."""

    gamma: tuple
    eta: tuple


def _z(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(stats.norm.ppf(1 - level / 2))


def _half_width(terms: np.ndarray, level: float) -> np.ndarray:
    n = terms.shape[0]
    if n < 2:
        return np.full(terms.shape[1:], np.nan)
    return _z(level) * terms.std(axis=0, ddof=1) / np.sqrt(n)


def _risk_terms(f: np.ndarray, target, mode: str, pseudo: Optional[PseudoOutcomes]) -> np.ndarray:
    if mode == COUNTERFACTUAL:
        if pseudo is None or pseudo.phibar is None:
            raise DataValidationError("counterfactual risk needs pseudo-outcomes with phibar")
        phi, phibar = pseudo.phi, pseudo.phibar
        if f.ndim == 2:
            phi, phibar = phi[:, None], phibar[:, None]
        return f * f - 2 * f * phi + phibar
    y = target[:, None] if f.ndim == 2 else target
    return (f - y) ** 2


def estimate_risk(predictions, data, mode: str = "observable", pseudo: Optional[PseudoOutcomes] = None,
                  level: float = 0.05) -> tuple:
    """MSE estimate and CI half-width.

    ``data`` is a :class:`Dataset` or the outcome vector to score against
    (e.g. oracle ``y0``).  Counterfactual mode uses ``pseudo`` instead.
    """
    f = np.asarray(predictions, dtype=float)
    y = data.y if isinstance(data, Dataset) else (None if data is None else np.asarray(data, dtype=float))
    if mode != COUNTERFACTUAL and (y is None or y.shape[0] != f.shape[0]):
        raise DataValidationError("predictions and outcomes differ in length")
    terms = _risk_terms(f, y, mode, pseudo)
    mse = terms.mean(axis=0)
    if mode == COUNTERFACTUAL and np.any(mse < 0):
        warnings.warn("counterfactual MSE estimate is negative (pseudo-outcome noise)", RuntimeWarning)
    hw = _half_width(terms, level)
    return (float(mse), float(hw)) if f.ndim == 1 else (mse, hw)


def variance_components(g: FairnessVector, predictions) -> VarianceComponents:
    f = np.asarray(predictions, dtype=float)
    gammas, etas = [], []
    for w in g.weights:
        wf = w[:, None] if f.ndim == 2 else w
        etas.append(wf * (f - (wf * f).mean(axis=0) / w.mean()))
        gammas.append(w)
    return VarianceComponents(tuple(gammas), tuple(etas))


def estimate_disparity(predictions, g: FairnessVector, mode: Optional[str] = None, pseudo=None,
                       level: float = 0.05) -> tuple:
    """Signed disparity ``Pn(g f)`` and CI half-width.

    The same influence construction serves both modes and all kinds; the
    mode (and the pseudo-outcomes) are already encoded in ``g``.
    """
    f = np.asarray(predictions, dtype=float)
    if f.shape[0] != len(g):
        raise DataValidationError(f"{f.shape[0]} predictions for {len(g)} units")
    gf = g.g[:, None] * f if f.ndim == 2 else g.g * f
    est = gf.mean(axis=0)
    vc = variance_components(g, f)
    w0, w1 = g.weights
    psi = g.spec.alpha0 * vc.eta[0] / w0.mean() - g.spec.alpha1 * vc.eta[1] / w1.mean()
    hw = _half_width(psi, level)
    return (float(est), float(hw)) if f.ndim == 1 else (est, hw)


def auc(predictions, labels) -> float:
    """Mann-Whitney AUC; ties count one half."""
    f = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if f.shape[0] != y.shape[0]:
        raise DataValidationError("predictions and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("AUC needs binary labels")
    return float(_auc_columns(f.reshape(len(f), -1), y)[0])


def _auc_columns(F: np.ndarray, y: np.ndarray) -> np.ndarray:
    pos = y == 1
    n1 = int(pos.sum())
    n0 = y.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise DataValidationError("AUC needs both classes present")
    ranks = stats.rankdata(F, axis=0)
    return (ranks[pos].sum(axis=0) - n1 * (n1 + 1) / 2) / (n1 * n0)


def to_classifier(predictions, rule: str = "threshold", threshold: float = 0.5, seed: int = 0) -> np.ndarray:
    """Binary decisions: ``1{f >= threshold}`` or seeded Bernoulli(f) draws."""
    f = np.asarray(predictions, dtype=float)
    if rule == "threshold":
        return (f >= threshold).astype(int)
    if rule == "bernoulli":
        if np.any(f < 0) or np.any(f > 1):
            raise DataValidationError("bernoulli rule needs predictions in [0, 1]")
        return (np.random.default_rng(seed).random(f.shape) < f).astype(int)
    raise ValueError(f"unknown rule {rule!r}")


def select_min_norm(profiles: Sequence[PerformanceProfile], metrics: Sequence[str]) -> int:
    """Model id minimizing the Euclidean norm of the chosen metrics.

    Ties go to the lower mse, then the lower model id.
    """
    if not profiles:
        raise ValueError("no profiles to select from")
    if not metrics:
        raise ValueError("select at least one metric")

    def key(p):
        return (float(np.linalg.norm([p.metric(m) for m in metrics])), p.mse, p.model_id)

    return min(profiles, key=key).model_id


def metric_subsets(disparities: Sequence[str]) -> list:
    """``mse`` alone, then ``mse`` with each nonempty subset of the disparities."""
    out = [("mse",)]
    for r in range(1, len(disparities) + 1):
        out.extend(("mse",) + combo for combo in itertools.combinations(disparities, r))
    return out


class Evaluator:
    """Scores many weight vectors on one evaluation fold.

    Parameters
    ----------
    basis : ndarray (n, k)
        Basis evaluated on the evaluation fold.
    fairness : list of FairnessVector
        Fairness functions evaluated on the same rows.
    outcome : ndarray, optional
        Outcome for observable risk (Y, or oracle Y0).
    pseudo : PseudoOutcomes, optional
        Pseudo-outcomes for counterfactual risk.
    labels : ndarray, optional
        Binary labels for AUC; AUC is NaN without them.
    """

    def __init__(self, basis, fairness: Sequence[FairnessVector], outcome=None, pseudo=None,
                 labels=None, mode: str = "observable", bounds=(0.0, 1.0), truncate: bool = True,
                 level: float = 0.05):
        self.basis = np.asarray(basis, dtype=float)
        self.fairness = list(fairness)
        self.outcome = None if outcome is None else np.asarray(outcome, dtype=float)
        self.pseudo = pseudo
        self.labels = None if labels is None else np.asarray(labels, dtype=float)
        self.mode = mode
        self.bounds = bounds
        self.truncate = truncate
        self.level = level
        if self.labels is not None and not np.all((self.labels == 0) | (self.labels == 1)):
            logger.info("AUC labels are not binary; AUC reported as NaN")
            self.labels = None

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    def predictions(self, betas) -> np.ndarray:
        F = self.basis @ np.asarray(betas, dtype=float).T
        return np.clip(F, *self.bounds) if self.truncate else F

    def score_predictions(self, F: np.ndarray) -> dict:
        """Vectorized metrics for the columns of ``F`` (n, G)."""
        mse, mse_ci = estimate_risk(F, self.outcome, self.mode, self.pseudo, self.level)
        out = {"mse": mse, "mse_ci": mse_ci,
               "auc": _auc_columns(F, self.labels) if self.labels is not None else np.full(F.shape[1], np.nan)}
        for g in self.fairness:
            est, hw = estimate_disparity(F, g, level=self.level)
            out[g.name] = est
            out[f"{g.name}_ci"] = hw
        return out

    def profile(self, betas, ids=None, lambdas=None, names: Sequence[str] = (), chunk: int = 256) -> list:
        betas = np.atleast_2d(np.asarray(betas, dtype=float))
        G = betas.shape[0]
        ids = list(range(G)) if ids is None else list(ids)
        profiles = []
        for lo in range(0, G, chunk):
            block = self.score_predictions(self.predictions(betas[lo:lo + chunk]))
            for i in range(block["mse"].shape[0]):
                gi = lo + i
                disp = {g.name: float(block[g.name][i]) for g in self.fairness}
                ci = {"mse": float(block["mse_ci"][i])}
                ci.update({g.name: float(block[f"{g.name}_ci"][i]) for g in self.fairness})
                lam = {} if lambdas is None else {nm: float(v) for nm, v in zip(names, lambdas[gi])}
                profiles.append(PerformanceProfile(ids[gi], float(block["mse"][i]), float(block["auc"][i]),
                                                   disp, ci, self.n, lam))
        return profiles


def frontier_frame(profiles: Sequence[PerformanceProfile]) -> pd.DataFrame:
    return pd.DataFrame([p.to_row() for p in profiles])


def profiles_from_frame(frame: pd.DataFrame) -> list:
    """Rebuild profiles from a frontier table."""
    disp_names = [c[:-len("_signed")] for c in frame.columns if c.endswith("_signed")]
    lam_names = [c[len("lambda_"):] for c in frame.columns if c.startswith("lambda_")]
    out = []
    for row in frame.to_dict("records"):
        ci = {"mse": row.get("mse_ci", np.nan)}
        ci.update({nm: row.get(f"{nm}_ci", np.nan) for nm in disp_names})
        out.append(PerformanceProfile(int(row["model_id"]), float(row["mse"]), float(row.get("auc", np.nan)),
                                      {nm: float(row[f"{nm}_signed"]) for nm in disp_names}, ci,
                                      int(row.get("n_test", 0)),
                                      {nm: float(row[f"lambda_{nm}"]) for nm in lam_names}))
    return out
