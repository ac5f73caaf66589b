"""Synthetic data with known potential outcomes.

Each column draws from its own child stream of ``numpy.random.SeedSequence(seed)``,
spawned in the fixed order ``A, X, D, Y0, Y1``.  Changing ``n`` therefore
changes every column, but changing how one column is generated never shifts
the draws of another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dataset import Dataset, Roles

SIM_ROLES = Roles(a="a", y="y", x=("x1", "x2", "x3", "x4"), d="d", y0="y0", y1="y1")


@dataclass(frozen=True)
class DgpSpec:
    n: int = 1000
    seed: int = 0
    p_a: float = 0.3
    shift: tuple = (1.0, -0.8, 4.0, 2.0)
    pi_coef: tuple = (0.2, -1.0, 1.0, -1.0, 1.0)
    y0_coef: tuple = (-5.0, 2.0, -3.0, 4.0, -5.0)
    y1_coef: tuple = (1.0, -2.0, 3.0, -4.0, 5.0)
    cap: float = 0.975

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 < self.cap < 1:
            raise ValueError("propensity cap must lie in (0, 1)")
        if not 0 <= self.p_a <= 1:
            raise ValueError("p_a must be a probability")
        dim = len(self.shift)
        for name in ("pi_coef", "y0_coef", "y1_coef"):
            if len(getattr(self, name)) != dim + 1:
                raise ValueError(f"{name} needs {dim + 1} entries (A then X)")


def _design(a, x):
    return np.column_stack([a, x])


def true_propensity(spec: DgpSpec, a, x) -> np.ndarray:
    """P(D = 1 | A, X), capped at ``spec.cap``."""
    return np.minimum(spec.cap, expit(_design(a, x) @ np.asarray(spec.pi_coef)))


def bayes_optimal(spec: DgpSpec, a, x=None) -> np.ndarray:
    """E[Y0 | A, X], the counterfactual Bayes-optimal predictor.

    Accepts either ``(a, x)`` arrays or a single :class:`Dataset`.
    """
    if isinstance(a, Dataset):
        a, x = a.a, a.x
    return expit(_design(a, x) @ np.asarray(spec.y0_coef))


# mu0 = E[Y | W, D=0] = E[Y0 | W] under ignorability
true_mu0 = bayes_optimal


def generate(spec: DgpSpec) -> Dataset:
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(5)]
    rng_a, rng_x, rng_d, rng_y0, rng_y1 = streams
    n = spec.n
    a = (rng_a.random(n) < spec.p_a).astype(float)
    x = rng_x.standard_normal((n, len(spec.shift))) + a[:, None] * np.asarray(spec.shift)
    d = (rng_d.random(n) < true_propensity(spec, a, x)).astype(float)
    y0 = (rng_y0.random(n) < bayes_optimal(spec, a, x)).astype(float)
    y1 = (rng_y1.random(n) < expit(_design(a, x) @ np.asarray(spec.y1_coef))).astype(float)
    y = (1 - d) * y0 + d * y1
    return Dataset(a=a, x=x, y=y, bounds=(0.0, 1.0), roles=SIM_ROLES, d=d, y0=y0, y1=y1)
