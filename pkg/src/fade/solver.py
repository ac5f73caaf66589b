"""Weights for fair linear ensembles.

All three problems are posed on the empirical moments of a basis ``b``::

    Q = Pn(b b^T)        c = Pn(b * target)        m_j = Pn(g_j * b)
    d = Pn(target**2)    (or Pn(phibar) for counterfactual targets)

* penalized:  minimize  b'Qb - 2c'b + sum_j lam_j (m_j'b)^2  (closed form)
* risk-min:   minimize  b'Qb - 2c'b  subject to |m_j'b| <= eps_j
* unfair-min: minimize  sum_j alpha_j (m_j'b)^2  subject to  b'Qb - 2c'b + d <= eps^2
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg

from .basis import BasisMatrix
from .exceptions import (ConditioningError, DataValidationError, InfeasibleError, NumericalError,
                         SignatureMismatchError)

logger = logging.getLogger(__name__)

KKT_TOL = 1e-9
RISK_TOL = 1e-10
BREAKDOWN_TOL = 1e-12

#: one-dimensional penalty axis used in the simulation study
DEFAULT_AXIS = (0.0, 0.001, 0.01, 1.0, 10.0, 20.0, 50.0, 100.0, 500.0, 1000.0, 2000.0)


@dataclass(frozen=True, eq=False)
class ProblemData:
    Q: np.ndarray
    c: np.ndarray
    m: np.ndarray
    d: Optional[float] = None
    signature: str = ""
    layout: str = ""
    n: int = 0
    fairness_names: tuple = ()
    basis_names: tuple = ()

    @property
    def k(self) -> int:
        return self.c.shape[0]

    @property
    def t(self) -> int:
        return self.m.shape[0]


def build_problem(basis: BasisMatrix, target, g_vectors: Sequence = (), second_moment=None,
                  want_d: bool = False) -> ProblemData:
    """Empirical moments for the solvers.

    ``target`` is Y (observable) or the pseudo-outcomes (counterfactual).
    ``second_moment`` is the per-unit second-moment proxy (Y**2 or phibar);
    with ``want_d`` and no ``second_moment``, ``target**2`` is used.
    """
    B = basis.values
    n = B.shape[0]
    target = np.asarray(target, dtype=float)
    if target.shape != (n,):
        raise DataValidationError(f"target has shape {target.shape}, expected ({n},)")
    Q = B.T @ B / n
    Q = (Q + Q.T) / 2
    try:
        linalg.cho_factor(Q)
    except linalg.LinAlgError:
        raise ConditioningError("Pn(bb^T) is not positive definite", basis.names) from None
    gs = [np.asarray(getattr(g, "g", g), dtype=float) for g in g_vectors]
    for g in gs:
        if g.shape != (n,):
            raise DataValidationError(f"fairness vector has shape {g.shape}, expected ({n},)")
    m = np.array([B.T @ g / n for g in gs]).reshape(len(gs), B.shape[1])
    d = None
    if second_moment is not None:
        second_moment = np.asarray(second_moment, dtype=float)
        if second_moment.shape != (n,):
            raise DataValidationError("second-moment proxy has the wrong length")
        d = float(second_moment.mean())
    elif want_d:
        d = float(np.mean(target ** 2))
    names = tuple(getattr(g, "name", f"g{j}") for j, g in enumerate(g_vectors))
    return ProblemData(Q, B.T @ target / n, m, d, basis.signature, basis.layout, n, names, basis.names)


@dataclass(frozen=True, eq=False)
class FadeSolution:
    """A weight vector and how it was produced.

    ``origin["kind"]`` is ``"penalized"``, ``"risk_min"`` or ``"unfair_min"``;
    the remaining keys record the penalties, constraints and dual values.
    """

    beta: np.ndarray
    origin: dict = field(default_factory=dict)
    signature: str = ""
    layout: str = ""

    @property
    def kind(self) -> str:
        return self.origin.get("kind", "")

    @property
    def lambdas(self) -> np.ndarray:
        if self.kind == "penalized":
            return np.asarray(self.origin["lambda"], dtype=float)
        if self.kind == "risk_min":
            return np.asarray(self.origin["dual_lambda"], dtype=float)
        raise AttributeError(f"{self.kind} solution has no penalty vector")


@dataclass(frozen=True)
class LambdaGrid:
    """Cartesian product of per-penalty axes, in lexicographic order."""

    axes: tuple
    seed: Optional[tuple] = None

    def __post_init__(self):
        axes = tuple(tuple(float(v) for v in ax) for ax in self.axes)
        if not axes or any(len(ax) == 0 for ax in axes):
            raise ValueError("every grid axis needs at least one value")
        for ax in axes:
            if any(v < 0 or not np.isfinite(v) for v in ax):
                raise ValueError("penalties must be finite and nonnegative")
        object.__setattr__(self, "axes", axes)
        if self.seed is not None:
            object.__setattr__(self, "seed", tuple(float(v) for v in self.seed))

    @classmethod
    def default(cls, t: int) -> "LambdaGrid":
        return cls((DEFAULT_AXIS,) * t)

    @property
    def t(self) -> int:
        return len(self.axes)

    def points(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.axes)), dtype=float).reshape(-1, self.t)

    def __len__(self):
        return int(np.prod([len(ax) for ax in self.axes]))


def _check_signature(p: ProblemData, sol: FadeSolution) -> None:
    if sol.signature and p.signature and sol.signature != p.signature:
        raise SignatureMismatchError("solution and problem were built on different bases")


def _base_inverse(p: ProblemData, lam0: float = 0.0, K=None) -> np.ndarray:
    A = p.Q
    if lam0 < 0:
        raise ValueError("lambda0 must be nonnegative")
    if K is not None and lam0 > 0:
        K = np.asarray(K, dtype=float)
        if K.shape != A.shape or not np.allclose(K, K.T):
            raise ValueError("smoothing matrix must be symmetric k x k")
        eig = np.linalg.eigvalsh(K)
        if eig[0] < -1e-10 * max(1.0, abs(eig[-1])):
            raise ValueError("smoothing matrix must be positive semi-definite")
        A = A + lam0 * K
    try:
        factor = linalg.cho_factor(A)
    except linalg.LinAlgError:
        raise ConditioningError("Q (+ lambda0 K) is not positive definite", p.basis_names) from None
    inv = linalg.cho_solve(factor, np.eye(p.k))
    return (inv + inv.T) / 2


def _sherman_morrison(q0inv: np.ndarray, m: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """Apply rank-one updates j = 1..t to ``q0inv`` for every row of ``lambdas``.

    Returns the stack of updated inverses, shape (G, k, k).
    """
    G = lambdas.shape[0]
    qs = np.broadcast_to(q0inv, (G,) + q0inv.shape).copy()
    for j in range(m.shape[0]):
        lam = lambdas[:, j]
        u = qs @ m[j]
        denom = 1.0 + lam * (u @ m[j])
        if np.any(denom <= BREAKDOWN_TOL):
            raise NumericalError(f"Sherman-Morrison breakdown at penalty {j}: denominator {denom.min():.3g}")
        qs -= (lam / denom)[:, None, None] * (u[:, :, None] * u[:, None, :])
    return qs


def _check_lambdas(p: ProblemData, lambdas) -> np.ndarray:
    lambdas = np.atleast_2d(np.asarray(lambdas, dtype=float))
    if lambdas.shape[1] != p.t:
        raise ValueError(f"expected {p.t} penalties per point, got {lambdas.shape[1]}")
    if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise ValueError("penalties must be finite and nonnegative")
    return lambdas


def solve_penalized(p: ProblemData, lam, lam0: float = 0.0, K=None) -> FadeSolution:
    """Closed-form penalized weights ``(Q + lam0 K + sum_j lam_j m_j m_j^T)^{-1} c``.

    ``Q + lam0 K`` is inverted once; each penalty then enters as a
    Sherman-Morrison rank-one update, in order j = 1..t.
    """
    lambdas = _check_lambdas(p, lam if p.t else np.zeros((1, 0)))
    q = _sherman_morrison(_base_inverse(p, lam0, K), p.m, lambdas)[0]
    return FadeSolution(q @ p.c, {"kind": "penalized", "lambda": lambdas[0].tolist(), "lambda0": float(lam0)},
                        p.signature, p.layout)


def solve_grid(p: ProblemData, grid: LambdaGrid, lam0: float = 0.0, K=None,
               chunk: int = 8192) -> list:
    """Penalized weights for every grid point, in grid order.

    The base inverse is formed once per sweep and the moment vectors ``m_j``
    once per problem; grid points are processed in vectorized chunks.
    """
    if len(grid) == 0:
        raise ValueError("empty grid")
    if grid.t != p.t:
        raise ValueError(f"grid has {grid.t} axes for {p.t} fairness penalties")
    pts = grid.points()
    q0inv = _base_inverse(p, lam0, K)
    betas = np.empty((pts.shape[0], p.k))
    for lo in range(0, pts.shape[0], chunk):
        qs = _sherman_morrison(q0inv, p.m, pts[lo:lo + chunk])
        betas[lo:lo + chunk] = qs @ p.c
    return [FadeSolution(b, {"kind": "penalized", "lambda": pt.tolist(), "lambda0": float(lam0)},
                         p.signature, p.layout) for b, pt in zip(betas, pts)]


def empirical_risk(p: ProblemData, beta) -> float:
    """``Pn[(b'beta)^2 - 2 b'beta target] + d``; needs ``p.d``."""
    if p.d is None:
        raise ValueError("risk level needs the second-moment term d")
    beta = np.asarray(beta, dtype=float)
    return float(beta @ p.Q @ beta - 2 * p.c @ beta + p.d)


def risk_objective(p: ProblemData, beta) -> float:
    beta = np.asarray(beta, dtype=float)
    return float(beta @ p.Q @ beta - 2 * p.c @ beta)


def penalized_objective(p: ProblemData, beta, lam) -> float:
    beta = np.asarray(beta, dtype=float)
    return risk_objective(p, beta) + float(np.sum(np.asarray(lam) * (p.m @ beta) ** 2))


def _active_set(H, grad0, G, h, x0, max_iter, kkt_tol):
    """Primal active-set method for  min 1/2 x'Hx + grad0'x  s.t.  Gx <= h.

    ``x0`` must be feasible.  Returns (x, multipliers for all rows, iterations).
    Raises :class:`NumericalError` when ``max_iter`` is hit.
    """
    k = H.shape[0]
    x = x0.copy()
    work: list = []
    live = np.isfinite(h)
    scale = max(1.0, np.linalg.norm(grad0), np.linalg.norm(H))
    for it in range(1, max_iter + 1):
        grad = H @ x + grad0
        A = G[work]
        kkt = np.block([[H, A.T], [A, np.zeros((len(work), len(work)))]])
        rhs = np.concatenate([-grad, np.zeros(len(work))])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        step, mult = sol[:k], sol[k:]
        if np.linalg.norm(step) <= 1e-13 * max(1.0, np.linalg.norm(x)):
            if not work or mult.min() >= -kkt_tol * scale:
                nu = np.zeros(G.shape[0])
                nu[work] = np.maximum(mult, 0.0)
                return x, nu, it
            work.pop(int(np.argmin(mult)))
            continue
        Gp = G @ step
        slack = h - G @ x
        alpha, block = 1.0, None
        for i in np.flatnonzero(live & (Gp > 1e-14 * scale * max(1.0, np.linalg.norm(step)))):
            if i in work:
                continue
            ratio = max(slack[i], 0.0) / Gp[i]
            if ratio < alpha or (block is not None and ratio == alpha and Gp[i] > Gp[block]):
                alpha, block = ratio, i
        x = x + alpha * step
        if block is not None:
            work.append(int(block))
    raise NumericalError(f"active-set method did not terminate within {max_iter} iterations")


def _kkt_residual(p, beta, eps, nu_pos, nu_neg) -> float:
    mb = p.m @ beta
    stat = 2 * p.Q @ beta - 2 * p.c + p.m.T @ (nu_pos - nu_neg)
    fin = np.isfinite(eps)
    primal = np.maximum(np.abs(mb[fin]) - eps[fin], 0.0)
    comp = np.concatenate([nu_pos[fin] * (eps[fin] - mb[fin]), nu_neg[fin] * (eps[fin] + mb[fin])])
    scale = max(1.0, np.linalg.norm(2 * p.c))
    parts = [np.linalg.norm(stat) / scale, primal.max(initial=0.0), np.abs(comp).max(initial=0.0) / scale]
    return float(max(parts))


def solve_risk_min(p: ProblemData, eps, kkt_tol: float = KKT_TOL, max_iter: Optional[int] = None) -> FadeSolution:
    """Least-squares weights under disparity caps ``|m_j' beta| <= eps_j``.

    A primal active-set method started at ``beta = 0`` (always feasible).
    The returned origin carries the multipliers of the two one-sided
    constraints per disparity and the equivalent squared-penalty vector
    ``dual_lambda_j = nu_j / (2 |m_j' beta|)`` (0 for inactive constraints).
    """
    eps = np.asarray(eps, dtype=float).reshape(-1)
    if eps.shape[0] != p.t:
        raise ValueError(f"expected {p.t} constraint levels, got {eps.shape[0]}")
    if np.any(eps < 0) or np.any(np.isnan(eps)):
        raise ValueError("constraint levels must be nonnegative")
    G = np.vstack([p.m, -p.m])
    max_iter = max_iter or 50 * (2 * p.t + p.k + 1)
    try:
        beta, nu, iters = _active_set(2 * p.Q, -2 * p.c, G, np.concatenate([eps, eps]),
                                      np.zeros(p.k), max_iter, kkt_tol)
    except NumericalError:
        # cycling under degeneracy: perturb the caps once and retry
        logger.warning("risk-min active set hit the iteration cap; retrying with perturbed caps")
        bumped = eps * (1 + 1e-10) + 1e-14
        beta, nu, iters = _active_set(2 * p.Q, -2 * p.c, G, np.concatenate([bumped, bumped]),
                                      np.zeros(p.k), max_iter, kkt_tol)
    nu_pos, nu_neg = nu[:p.t], nu[p.t:]
    resid = _kkt_residual(p, beta, eps, nu_pos, nu_neg)
    if resid > max(kkt_tol, 1e-7):
        raise NumericalError(f"risk-min KKT residual {resid:.3g} exceeds tolerance")
    mb = p.m @ beta
    net = nu_pos - nu_neg
    with np.errstate(divide="ignore", invalid="ignore"):
        dual = np.where(np.abs(net) > 0, np.abs(net) / (2 * np.abs(mb)), 0.0)
    origin = {"kind": "risk_min", "eps": eps.tolist(), "nu_pos": nu_pos.tolist(), "nu_neg": nu_neg.tolist(),
              "dual_lambda": dual.tolist(), "iterations": iters, "kkt_residual": resid}
    return FadeSolution(beta, origin, p.signature, p.layout)


def _unfairness_minimizer(p: ProblemData, M: np.ndarray) -> np.ndarray:
    """Least-risk point among the minimizers of ``beta' M beta`` (its null space)."""
    eig, vec = np.linalg.eigh(M)
    null = vec[:, eig <= 1e-12 * max(1.0, eig[-1])]
    if null.shape[1] == 0:
        return np.zeros(p.k)
    reduced = null.T @ p.Q @ null
    return null @ np.linalg.solve(reduced, null.T @ p.c)


def solve_unfair_min(p: ProblemData, eps: float, alpha, risk_tol: float = RISK_TOL,
                     max_iter: int = 200) -> FadeSolution:
    """Minimize ``sum_j alpha_j (m_j' beta)^2`` subject to risk <= ``eps**2``.

    The solution path is ``beta(s) = (Q + s M)^{-1} c`` with ``M = sum_j
    alpha_j m_j m_j^T`` and ``s = 1/nu`` the inverse Lagrange multiplier.  Risk
    increases along ``s`` from the least-squares risk (``s = 0``) to the risk
    of the least-risk unfairness minimizer (``s -> inf``), which is returned
    directly when it already meets the cap.  Otherwise ``s`` is bisected
    until ``|risk - eps**2| <= risk_tol * max(1, eps**2)``.

    Raises
    ------
    InfeasibleError
        If the least-squares risk exceeds ``eps**2``.
    """
    if p.d is None:
        raise ValueError("unfair-min needs the second-moment term d (Pn(Y^2) or Pn(phibar))")
    if not eps > 0:
        raise ValueError("risk cap eps must be positive")
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.shape[0] != p.t or np.any(alpha < 0):
        raise ValueError(f"alpha needs {p.t} nonnegative weights")
    target = float(eps) ** 2
    tol = risk_tol * max(1.0, target)
    M = (p.m.T * alpha) @ p.m

    def beta_at(s):
        if s <= 1.0:
            return np.linalg.solve(p.Q + s * M, p.c)
        return np.linalg.solve(p.Q / s + M, p.c / s)

    def done(beta, nu, s, iters):
        origin = {"kind": "unfair_min", "eps": float(eps), "alpha": alpha.tolist(), "dual_nu": nu,
                  "penalty_scale": s, "risk": empirical_risk(p, beta),
                  "unfairness": float(beta @ M @ beta), "iterations": iters}
        return FadeSolution(beta, origin, p.signature, p.layout)

    ols = np.linalg.solve(p.Q, p.c)
    ols_risk = empirical_risk(p, ols)
    if ols_risk > target + tol:
        raise InfeasibleError(f"risk cap {target:.6g} is below the least achievable risk {ols_risk:.6g}",
                              ols_risk)
    limit = _unfairness_minimizer(p, M)
    if empirical_risk(p, limit) <= target + tol:
        return done(limit, 0.0, float("inf"), 0)
    if ols_risk >= target - tol:
        return done(ols, float("inf"), 0.0, 0)

    # bisect on u = s / (1 + s) in [0, 1); risk is nondecreasing in u
    lo, hi = 0.0, 1.0 - 1e-12
    if empirical_risk(p, beta_at(hi / (1 - hi))) < target - tol:
        raise NumericalError("unfair-min bracket failed: risk never reaches the cap")
    best = ols
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        s = mid / (1 - mid)
        beta = beta_at(s)
        gap = empirical_risk(p, beta) - target
        if abs(gap) <= tol:
            return done(beta, 1.0 / s, s, it)
        if gap < 0:
            lo, best = mid, beta
        else:
            hi = mid
        if hi - lo <= np.finfo(float).eps:
            break
    s = lo / (1 - lo)
    logger.warning("unfair-min bisection stopped at |risk - eps^2| = %.3g", abs(empirical_risk(p, best) - target))
    return done(best, 1.0 / s if s > 0 else float("inf"), s, max_iter)


def seed_grid(sol: FadeSolution, spread: Sequence[float] = (0.5, 1.0, 2.0)) -> LambdaGrid:
    """Penalty grid centred on the dual vector of a risk-min solution.

    Each axis holds ``0``, ``lambda*_j`` and ``lambda*_j * s`` for every
    multiplier ``s`` in ``spread``.
    """
    if sol.kind != "risk_min":
        raise ValueError("seed_grid needs a risk-min solution carrying dual multipliers")
    star = np.asarray(sol.origin["dual_lambda"], dtype=float)
    if not np.all(np.isfinite(star)):
        raise NumericalError("dual multiplier is infinite (a zero-width cap is active)")
    axes = []
    for lam in star:
        vals = {0.0, float(lam)} | {float(lam * s) for s in spread if s >= 0}
        axes.append(tuple(sorted(vals)))
    return LambdaGrid(tuple(axes), seed=tuple(star.tolist()))


def equivalent_lambda(sol: FadeSolution) -> np.ndarray:
    """Penalty vector whose penalized solution coincides with ``sol``."""
    if sol.kind == "penalized":
        return np.asarray(sol.origin["lambda"], dtype=float)
    if sol.kind == "risk_min":
        return np.asarray(sol.origin["dual_lambda"], dtype=float)
    if sol.kind == "unfair_min":
        return sol.origin["penalty_scale"] * np.asarray(sol.origin["alpha"], dtype=float)
    raise ValueError(f"unknown solution kind {sol.kind!r}")


def solutions_to_frame(solutions: Sequence[FadeSolution], fairness_names: Sequence[str],
                       basis_names: Sequence[str]) -> pd.DataFrame:
    """One row per solution: model id, (equivalent) penalty per disparity, weight per column."""
    rows = []
    for i, sol in enumerate(solutions):
        row = {"model_id": i}
        with np.errstate(invalid="ignore"):
            lam = equivalent_lambda(sol)
        row.update({f"lambda_{nm}": float(v) for nm, v in zip(fairness_names, lam)})
        row.update({f"beta_{nm}": float(b) for nm, b in zip(basis_names, sol.beta)})
        rows.append(row)
    return pd.DataFrame(rows)


def solutions_from_frame(frame: pd.DataFrame) -> tuple:
    """Inverse of :func:`solutions_to_frame`: (ids, lambdas, betas, fairness names, basis names)."""
    lam_cols = [c for c in frame.columns if c.startswith("lambda_")]
    beta_cols = [c for c in frame.columns if c.startswith("beta_")]
    return (frame["model_id"].to_numpy(dtype=int), frame[lam_cols].to_numpy(dtype=float),
            frame[beta_cols].to_numpy(dtype=float), [c[7:] for c in lam_cols], [c[5:] for c in beta_cols])
