"""Fairness functions and signed disparities.

Every supported disparity is a weighted difference of two conditional means
of the predictor::

    alpha0 * E[f | h0(A, Yt) = 1] - alpha1 * E[f | h1(A, Yt) = 1]

which equals ``E[g * f]`` for the fairness function::

    g = alpha0 * h0 / E[h0] - alpha1 * h1 / E[h1]

An event ``h`` is a set of ``(a, v)`` cells over the sensitive feature and
the binary outcome.  When the outcome is a probability (a regression
estimate or a pseudo-outcome) the indicator of cell ``(a, 1)`` becomes
``1{A=a} * Yt`` and of ``(a, 0)`` becomes ``1{A=a} * (1 - Yt)``.

Normalizers are same-sample means, so ``mean(g) == alpha0 - alpha1`` exactly
(zero for the built-in kinds).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .dataset import Dataset
from .exceptions import DataValidationError

OBSERVABLE = "observable"
COUNTERFACTUAL = "counterfactual"
MODES = (OBSERVABLE, COUNTERFACTUAL)

_BUILTIN_CELLS = {
    # |E[f | A=0] - E[f | A=1]|
    "rate": (frozenset({(0, 0), (0, 1)}), frozenset({(1, 0), (1, 1)})),
    # |E[f | A=0, Yt=0] - E[f | A=1, Yt=0]|
    "fpr": (frozenset({(0, 0)}), frozenset({(1, 0)})),
    # |E[1-f | A=0, Yt=1] - E[1-f | A=1, Yt=1]| = |E[f | A=1, Yt=1] - E[f | A=0, Yt=1]|
    "fnr": (frozenset({(1, 1)}), frozenset({(0, 1)})),
}


def _cells(cells) -> frozenset:
    out = frozenset((int(a), int(v)) for a, v in cells)
    if not out or not out <= {(0, 0), (0, 1), (1, 0), (1, 1)}:
        raise ValueError(f"cells must be a nonempty subset of {{0,1}} x {{0,1}}, got {sorted(out)}")
    return out


@dataclass(frozen=True)
class FairnessSpec:
    """Which disparity, and whether it is taken w.r.t. Y or Y0.

    For ``kind="custom"`` supply ``alpha0``, ``alpha1`` and the cell sets
    ``h0``, ``h1``.  ``clip_proxy`` clips counterfactual outcome proxies to
    [0, 1] before they enter the cell weights.
    """

    kind: str = "rate"
    mode: str = OBSERVABLE
    alpha0: float = 1.0
    alpha1: float = 1.0
    h0: Optional[frozenset] = None
    h1: Optional[frozenset] = None
    label: Optional[str] = None
    clip_proxy: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kind in _BUILTIN_CELLS:
            h0, h1 = _BUILTIN_CELLS[self.kind]
            if (self.h0 is not None and _cells(self.h0) != h0) or (self.h1 is not None and _cells(self.h1) != h1):
                raise ValueError(f"built-in kind {self.kind!r} does not take custom cells")
            if (self.alpha0, self.alpha1) != (1.0, 1.0):
                raise ValueError(f"built-in kind {self.kind!r} does not take custom weights")
        elif self.kind == "custom":
            if self.h0 is None or self.h1 is None:
                raise ValueError("custom fairness spec needs cells h0 and h1")
            h0, h1 = _cells(self.h0), _cells(self.h1)
        else:
            raise ValueError(f"unknown fairness kind {self.kind!r}")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "h1", h1)

    @property
    def name(self) -> str:
        return self.label or self.kind

    @property
    def uses_outcome(self) -> bool:
        return not all(_is_full_group(h, a) or not any(c[0] == a for c in h)
                       for h in (self.h0, self.h1) for a in (0, 1))

    @classmethod
    def from_mapping(cls, spec: Mapping, mode: Optional[str] = None) -> "FairnessSpec":
        if isinstance(spec, str):
            spec = {"kind": spec}
        kw = dict(kind=spec.get("kind", "rate"), mode=spec.get("mode", mode or OBSERVABLE),
                  label=spec.get("label"), clip_proxy=bool(spec.get("clip_proxy", True)))
        if kw["kind"] == "custom":
            kw.update(alpha0=float(spec.get("alpha0", 1.0)), alpha1=float(spec.get("alpha1", 1.0)),
                      h0=frozenset(map(tuple, spec["h0"])), h1=frozenset(map(tuple, spec["h1"])))
        return cls(**kw)


def _is_full_group(cells, a) -> bool:
    return (a, 0) in cells and (a, 1) in cells


@dataclass(frozen=True, eq=False)
class FairnessVector:
    """Per-unit fairness function values with the pieces needed for inference.

    ``weights`` are the two event weights (h0, h1) per unit; ``g`` is
    ``alpha0 * w0 / mean(w0) - alpha1 * w1 / mean(w1)``.
    """

    g: np.ndarray
    spec: FairnessSpec
    weights: tuple = field(repr=False, default=None)

    @property
    def name(self) -> str:
        return self.spec.name

    def __len__(self):
        return self.g.shape[0]


def _event_weight(cells, a, outcome):
    w = np.zeros_like(a, dtype=float)
    for grp in (0, 1):
        member = (a == grp).astype(float)
        if _is_full_group(cells, grp):
            w += member
        elif (grp, 1) in cells:
            w += member * outcome
        elif (grp, 0) in cells:
            w += member * (1.0 - outcome)
    return w


def eval_fairness(spec: FairnessSpec, data, outcome_proxy=None) -> FairnessVector:
    """Evaluate the fairness function ``g`` on every unit.

    Parameters
    ----------
    spec : FairnessSpec
    data : Dataset or array_like
        A dataset, or just the sensitive-feature vector.
    outcome_proxy : array_like, optional
        Stand-in for the outcome.  Required in counterfactual mode (pass the
        pseudo-outcomes or outcome-regression values); in observable mode it
        overrides ``data.y`` (e.g. to evaluate against oracle ``y0``).
    """
    a = np.asarray(data.a if isinstance(data, Dataset) else data, dtype=float)
    outcome = None
    if spec.uses_outcome:
        if outcome_proxy is not None:
            outcome = np.asarray(outcome_proxy, dtype=float)
        elif spec.mode == COUNTERFACTUAL:
            raise DataValidationError(f"counterfactual {spec.name} needs an outcome proxy")
        elif isinstance(data, Dataset):
            outcome = data.y
        else:
            raise DataValidationError(f"{spec.name} needs outcomes")
        if outcome.shape != a.shape:
            raise DataValidationError(f"outcome proxy has {outcome.shape[0]} rows, expected {a.shape[0]}")
        if spec.mode == COUNTERFACTUAL:
            if spec.clip_proxy:
                outcome = np.clip(outcome, 0.0, 1.0)
        elif (outcome < 0).any() or (outcome > 1).any():
            raise DataValidationError(f"{spec.name} needs outcomes in [0, 1]")
    w0 = _event_weight(spec.h0, a, outcome)
    w1 = _event_weight(spec.h1, a, outcome)
    p0, p1 = w0.mean(), w1.mean()
    if not (p0 > 0 and p1 > 0):
        raise DataValidationError(f"{spec.name}: empty (A, outcome) cell, zero normalizer")
    g = spec.alpha0 * w0 / p0 - spec.alpha1 * w1 / p1
    return FairnessVector(g, spec, (w0, w1))


def disparity(g: FairnessVector, predictions) -> float:
    """Signed disparity ``mean(g * f)``; report ``abs`` of it."""
    f = np.asarray(predictions, dtype=float)
    if f.shape[0] != len(g):
        raise DataValidationError(f"{f.shape[0]} predictions for {len(g)} units")
    return float(np.mean(g.g * f))
