import numpy as np
import pytest

from fade.basis import BasisMatrix
from fade.fairness import FairnessSpec, eval_fairness
from fade.solver import ProblemData, build_problem

KINDS = ("rate", "fpr", "fnr")


def random_problem(rng, k, t, n=200):
    """Moments of a random basis with fairness vectors built from real kinds."""
    B = rng.normal(size=(n, k)) * rng.uniform(0.5, 2.0, size=k)
    B[:, 0] = 1.0
    y = (rng.random(n) < 0.5).astype(float)
    a = np.r_[np.zeros(n // 2), np.ones(n - n // 2)]
    y = np.clip(y + 0.3 * B[:, 1] > 0.5, 0, 1).astype(float)
    gs = [eval_fairness(FairnessSpec(KINDS[j % 3]), a, y) for j in range(t)]
    basis = BasisMatrix(B, tuple(f"c{i}" for i in range(k)), "train")
    return build_problem(basis, y, gs, y ** 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
