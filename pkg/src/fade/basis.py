"""Basis matrices b(W) for the linear ensemble.

Columns are built from source specs:

* ``"mean"``: constant column holding the training mean outcome
  (among D=0 units in counterfactual mode);
* ``{"type": "prior", "name": ...}``: a prior-predictor score column of S;
* ``{"type": "feature", "name": ...}``: a raw covariate;
* ``{"type": "file", "path": ...}``: a headerless single-column prediction file;
* ``{"type": "values", "name": ..., "values": array}``: predictions in memory;
* ``{"type": "model", "name": ..., "model": obj}``: any object with
  ``predict(dataset)``, e.g. a base predictor from :func:`train_base_predictor`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .dataset import Dataset
from .exceptions import ConditioningError, DataValidationError, SignatureMismatchError
from .nuisance import LogisticIRLS, NuisanceModel

EIG_TOL = 1e-8


def _hash(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    """An (n, k) basis evaluated on one fold.

    ``layout`` identifies the column definitions alone and is what lets a
    weight vector fitted on one fold be applied to another; ``signature``
    additionally pins the fold.
    """

    values: np.ndarray
    names: tuple
    fold: str = "full"
    bounds: tuple = (0.0, 1.0)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise DataValidationError(f"basis of shape {values.shape} does not match {len(self.names)} names")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def layout(self) -> str:
        return _hash(list(self.names))

    @property
    def signature(self) -> str:
        return _hash(list(self.names), self.fold)

    def gram(self) -> np.ndarray:
        return self.values.T @ self.values / self.n

    def check_conditioning(self, eig_tol: float = EIG_TOL) -> None:
        """Raise :class:`ConditioningError` if ``Pn(b b^T)`` is near-singular.

        The threshold is relative: ``min_eig < eig_tol * max_eig``.
        """
        if self.k >= self.n:
            raise ConditioningError(f"basis has k={self.k} >= n={self.n} columns", self.names)
        if not np.all(np.isfinite(self.values)):
            raise ConditioningError("basis has non-finite entries", self.names)
        eigval, eigvec = np.linalg.eigh(self.gram())
        top = max(eigval[-1], 0.0)
        if top <= 0 or eigval[0] < eig_tol * top:
            load = np.abs(eigvec[:, 0])
            culprits = [nm for nm, v in zip(self.names, load) if v >= 0.2 * load.max()]
            raise ConditioningError(
                f"Pn(bb^T) is near-singular (min eigenvalue {eigval[0]:.3g}, max {top:.3g}); "
                f"near-collinear columns: {culprits}", culprits, float(eigval[0]))

    def predict(self, beta, truncate: bool = True) -> np.ndarray:
        return predict(self.values, beta, truncate, self.bounds)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=list(self.names))


def predict(basis_row, beta, truncate: bool = True, bounds=(0.0, 1.0)) -> np.ndarray:
    """``b^T beta``, clipped to ``bounds`` when ``truncate``.

    ``basis_row`` may be a single row (k,) or a matrix (n, k); ``beta`` may be
    a vector (k,) or a stack of weight vectors (k, m).
    """
    b = np.asarray(basis_row, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if b.shape[-1] != beta.shape[0]:
        raise DataValidationError(f"basis has {b.shape[-1]} columns, beta has {beta.shape[0]} entries")
    out = b @ beta
    if truncate:
        out = np.clip(out, *bounds)
    return out


def mean_outcome(data: Dataset, mode: str) -> float:
    """Pn(Y | D=0) in counterfactual mode, Pn(Y) otherwise."""
    if mode == "counterfactual":
        if data.d is None:
            raise DataValidationError("counterfactual mean column needs a D column")
        sub = data.y[data.d == 0]
        if sub.size == 0:
            raise DataValidationError("no D=0 rows for the mean column")
        return float(sub.mean())
    return float(data.y.mean())


BASE_LEARNERS = ("logistic", "random_forest", "gradient_boosting", "naive_bayes", "ridge")


@dataclass(frozen=True, eq=False)
class FittedPredictor:
    """A fitted scikit-learn model scoring a dataset on named covariates."""

    name: str
    features: tuple
    estimator: object
    bounds: tuple = (0.0, 1.0)

    def predict(self, data: Dataset) -> np.ndarray:
        w = np.column_stack([data.column(c) for c in self.features])
        lo, hi = self.bounds
        if hasattr(self.estimator, "predict_proba"):
            proba = self.estimator.predict_proba(w)
            col = list(self.estimator.classes_).index(1.0) if 1.0 in self.estimator.classes_ else None
            out = proba[:, col] if col is not None else np.zeros(len(w))
        else:
            out = self.estimator.predict(w)
        return np.clip(lo + (hi - lo) * out, lo, hi)


def _make_learner(kind: str, seed: int):
    from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier
    from sklearn.linear_model import Ridge
    from sklearn.naive_bayes import GaussianNB

    if kind == "random_forest":
        return RandomForestClassifier(random_state=seed, n_jobs=1)
    if kind == "gradient_boosting":
        return GradientBoostingClassifier(random_state=seed)
    if kind == "naive_bayes":
        return GaussianNB()
    if kind == "ridge":
        return Ridge()
    raise ValueError(f"unknown base learner {kind!r}; choose from {BASE_LEARNERS}")


def train_base_predictor(learn: Dataset, features: Optional[Sequence[str]], mode: str,
                         kind: str = "logistic", seed: int = 0, max_iter: int = 100, tol: float = 1e-8):
    """Fit a base predictor of Y on ``features`` (default: A, X and S).

    In counterfactual mode only D=0 rows are used, so the model targets
    E[Y0 | W] under ignorability.  ``kind="logistic"`` is the built-in IRLS
    fit; the other kinds are scikit-learn models with default settings.
    """
    sub = learn
    if mode == "counterfactual":
        if learn.d is None:
            raise DataValidationError("counterfactual base predictors need a D column")
        sub = learn.take(np.flatnonzero(learn.d == 0))
    features = tuple(learn.w_names if features is None else features)
    w = np.column_stack([sub.column(c) for c in features]) if features else np.zeros((len(sub), 0))
    lo, hi = learn.bounds
    target = (sub.y - lo) / (hi - lo)
    if kind == "logistic":
        est = LogisticIRLS(max_iter, tol).fit(w, target)
        return NuisanceModel("y", features, "logit", est, scale=(lo, hi), clip=(lo, hi))
    est = _make_learner(kind, seed)
    if kind != "ridge":
        if not np.all((target == 0) | (target == 1)):
            raise DataValidationError(f"{kind} base predictor needs a binary outcome")
    est.fit(w, target)
    return FittedPredictor(kind, features, est, (lo, hi))


def _normalize(source):
    if isinstance(source, str):
        if source == "mean":
            return {"type": "mean"}
        kind, _, name = source.partition(":")
        if kind in ("prior", "feature"):
            return {"type": kind, "name": name}
        if kind == "file":
            return {"type": "file", "path": name}
        raise ValueError(f"unknown basis source {source!r}")
    return dict(source)


def source_name(source) -> str:
    src = _normalize(source)
    if "name" in src:
        return str(src["name"]) if src["type"] in ("values", "model") else f"{src['type']}:{src['name']}"
    if src["type"] == "mean":
        return "mean"
    if src["type"] == "file":
        return f"file:{src['path']}"
    raise ValueError(f"basis source {source!r} needs a name")


def assemble(data: Dataset, sources, mode: str = "observable", mean_value: Optional[float] = None,
             fold: Optional[str] = None, eig_tol: Optional[float] = EIG_TOL) -> BasisMatrix:
    """Evaluate the basis columns on ``data``.

    ``mean_value`` fixes the constant of a ``"mean"`` column (use the value
    learned on the training side when assembling a test fold); by default
    it is computed from ``data``.  Set ``eig_tol=None`` to skip the
    conditioning check (test folds are never solved on).
    """
    n = len(data)
    cols, names = [], []
    for source in sources:
        src = _normalize(source)
        kind = src.get("type")
        if kind == "mean":
            value = mean_outcome(data, mode) if mean_value is None else float(mean_value)
            col = np.full(n, value)
        elif kind == "prior":
            if src["name"] not in data.roles.s:
                raise DataValidationError(f"{src['name']!r} is not a prior-score column")
            col = data.column(src["name"])
        elif kind == "feature":
            col = data.column(src["name"])
        elif kind == "file":
            col = pd.read_csv(src["path"], header=None, float_precision="round_trip").to_numpy(dtype=float)
            if col.ndim != 2 or col.shape[1] != 1:
                raise DataValidationError(f"{src['path']}: expected one column of predictions")
            col = col[:, 0]
        elif kind == "values":
            col = np.asarray(src["values"], dtype=float)
        elif kind == "model":
            col = np.asarray(src["model"].predict(data), dtype=float)
        else:
            raise ValueError(f"unknown basis source type {kind!r}")
        if col.shape != (n,):
            raise DataValidationError(f"basis column {source_name(src)!r} has {col.shape[0]} rows, expected {n}")
        cols.append(col)
        names.append(source_name(src))
    if len(set(names)) != len(names):
        # a duplicated source is exactly collinear; let the eigen check name it
        names = [f"{nm}#{i}" if names.count(nm) > 1 else nm for i, nm in enumerate(names)]
    basis = BasisMatrix(np.column_stack(cols) if cols else np.zeros((n, 0)), tuple(names),
                        fold or data.fold, data.bounds)
    if eig_tol is not None:
        basis.check_conditioning(eig_tol)
    return basis


def check_layout(basis: BasisMatrix, layout: str) -> None:
    if basis.layout != layout:
        raise SignatureMismatchError("weights were fitted on a basis with different columns")
