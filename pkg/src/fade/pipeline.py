"""End-to-end runs driven by a JSON config.

Stages and their artifacts (all under the output directory)::

    simulate  -> data.csv
    split     -> folds/<fold>.csv
    nuisance  -> nuisance/<fold>.csv          (counterfactual mode)
    fit       -> basis/<fold>.csv, basis/meta.json, solutions.csv
    evaluate  -> frontier.csv
    select    -> selection.json

Each stage reads only the artifacts of earlier stages, so a run can be
resumed from any point.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import basis as basis_mod
from .dataset import FOLD_NAMES, Dataset, Roles, SplitPlan, from_frame, load_csv, save_csv, split
from .evaluation import Evaluator, frontier_frame, metric_subsets, profiles_from_frame, select_min_norm
from .exceptions import ConfigError, StageError
from .fairness import COUNTERFACTUAL, MODES, OBSERVABLE, FairnessSpec, eval_fairness
from .nuisance import (DEFAULT_GAMMA, IRLSNuisanceLearner, NuisanceFit, PseudoOutcomes, cross_fit,
                       ingest_external_scores, pseudo_outcomes)
from .sim import SIM_ROLES, DgpSpec, generate
from .solver import (DEFAULT_AXIS, LambdaGrid, build_problem, seed_grid, solutions_from_frame,
                     solutions_to_frame, solve_grid, solve_risk_min, solve_unfair_min)

logger = logging.getLogger("fade")

FLOAT_FORMAT = "%.17g"
SOLVER_JOBS = ("grid", "risk_min", "unfair_min", "seed_grid")


@dataclass
class RunConfig:
    """Validated run configuration.  See the README for the JSON layout."""

    output: Path
    mode: str = OBSERVABLE
    csv: Optional[Path] = None
    dgp: Optional[dict] = None
    roles: Optional[Roles] = None
    bounds: tuple = (0.0, 1.0)
    split: SplitPlan = field(default_factory=SplitPlan)
    nuisance: Optional[dict] = None
    sources: list = field(default_factory=lambda: ["mean"])
    fairness: list = field(default_factory=list)
    fairness_proxy: str = "phi"
    solver: dict = field(default_factory=lambda: {"job": "grid"})
    level: float = 0.05
    oracle: bool = False
    truncate: bool = True
    seed: int = 0
    jobs: int = 1

    @classmethod
    def from_dict(cls, raw: dict, output=None, seed: Optional[int] = None, jobs: Optional[int] = None) -> "RunConfig":
        raw = dict(raw)
        mode = raw.get("mode", OBSERVABLE)
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        out = output or raw.get("output")
        if not out:
            raise ConfigError("no output directory (config 'output' or --output)")
        base_seed = int(seed if seed is not None else raw.get("seed", 0))
        inp = raw.get("input") or {}
        csv_path, dgp = inp.get("csv"), inp.get("dgp")
        if (csv_path is None) == (dgp is None):
            raise ConfigError("input needs exactly one of 'csv' or 'dgp'")
        bounds = tuple(float(b) for b in raw.get("bounds", (0.0, 1.0)))
        if len(bounds) != 2 or not bounds[0] < bounds[1]:
            raise ConfigError("bounds must be [low, high] with low < high")
        if dgp is not None:
            dgp = dict(dgp)
            dgp["seed"] = int(base_seed if seed is not None else dgp.get("seed", base_seed))
            roles = SIM_ROLES
        else:
            if "roles" not in raw:
                raise ConfigError("csv input needs a 'roles' map")
            try:
                roles = Roles.from_mapping(raw["roles"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            csv_path = Path(csv_path)
            if not csv_path.exists():
                raise ConfigError(f"input file {csv_path} does not exist")
            header = pd.read_csv(csv_path, nrows=0).columns
            missing = [c for c in roles.columns() if c not in header]
            if missing:
                raise ConfigError(f"role columns missing from {csv_path}: {missing}")
        if mode == COUNTERFACTUAL:
            if roles.d is None:
                raise ConfigError("counterfactual mode needs a D column in the roles map")
            if "nuisance" not in raw:
                raise ConfigError("counterfactual mode needs a 'nuisance' spec")
        split_raw = dict(raw.get("split") or {})
        if "sizes" in split_raw:
            sizes = split_raw.pop("sizes")
            sizes = [sizes.get(nm, 0) for nm in FOLD_NAMES] if isinstance(sizes, dict) else list(sizes)
            total = sum(sizes)
            if dgp is not None:
                dgp.setdefault("n", total)
            if total <= 0:
                raise ConfigError("split sizes must sum to a positive count")
            split_raw["fractions"] = [s / total for s in sizes]
        split_raw["seed"] = int(base_seed if seed is not None else split_raw.get("seed", base_seed))
        try:
            plan = SplitPlan.from_mapping(split_raw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        nuisance = raw.get("nuisance")
        if nuisance is not None:
            nuisance = dict(nuisance)
            if nuisance.get("type", "irls") not in ("irls", "external"):
                raise ConfigError("nuisance type must be 'irls' or 'external'")
        try:
            fairness = [FairnessSpec.from_mapping(f, mode) for f in raw.get("fairness", ["rate", "fpr", "fnr"])]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad fairness spec: {exc}") from None
        names = [f.name for f in fairness]
        if len(set(names)) != len(names):
            raise ConfigError("fairness specs need distinct names (set 'label')")
        solver = dict(raw.get("solver") or {"job": "grid"})
        job = solver.get("job", "grid")
        if job not in SOLVER_JOBS:
            raise ConfigError(f"solver job must be one of {SOLVER_JOBS}")
        if job == "grid":
            axes = solver.get("axes") or [list(DEFAULT_AXIS)] * len(fairness)
            if len(axes) != len(fairness):
                raise ConfigError(f"grid has {len(axes)} axes for {len(fairness)} fairness specs")
            try:
                LambdaGrid(tuple(axes))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            solver["axes"] = [list(map(float, ax)) for ax in axes]
        elif "eps" not in solver:
            raise ConfigError(f"solver job {job!r} needs 'eps'")
        if job in ("risk_min", "seed_grid"):
            eps = solver["eps"]
            eps = [eps] * len(fairness) if np.isscalar(eps) else list(eps)
            if len(eps) != len(fairness) or any(float(e) < 0 for e in eps):
                raise ConfigError("risk_min needs one nonnegative eps per fairness spec")
            solver["eps"] = [float(e) for e in eps]
        if job == "unfair_min" and not float(solver["eps"]) > 0:
            raise ConfigError("unfair_min eps must be positive")
        if not fairness and job != "grid":
            raise ConfigError(f"solver job {job!r} needs at least one fairness spec")
        ev = raw.get("evaluation") or {}
        proxy = raw.get("fairness_proxy", "phi")
        if proxy not in ("phi", "mu0"):
            raise ConfigError("fairness_proxy must be 'phi' or 'mu0'")
        sources = raw.get("basis", {}).get("sources", ["mean"])
        if not sources:
            raise ConfigError("basis needs at least one source")
        return cls(output=Path(out), mode=mode, csv=csv_path, dgp=dgp, roles=roles, bounds=bounds, split=plan,
                   nuisance=nuisance, sources=list(sources), fairness=fairness, fairness_proxy=proxy,
                   solver=solver, level=float(ev.get("level", 0.05)), oracle=bool(ev.get("oracle", False)),
                   truncate=bool(ev.get("truncate", True)), seed=base_seed,
                   jobs=int(jobs if jobs is not None else raw.get("jobs", 1)))

    @classmethod
    def load(cls, path, **kw) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, **kw)

    @property
    def fairness_names(self) -> list:
        return [f.name for f in self.fairness]


# ---------------------------------------------------------------- helpers


@contextmanager
def _timed(stage: str):
    t0 = time.perf_counter()
    logger.info("stage %s: start", stage)
    yield
    logger.info("stage %s: done in %.3f s", stage, time.perf_counter() - t0)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(f"{stage} needs {path}; run the earlier stage first")
    return path


def _load_fold(cfg: RunConfig, name: str) -> Dataset:
    path = _require(cfg.output / "folds" / f"{name}.csv", "this stage")
    frame = pd.read_csv(path, float_precision="round_trip")
    return from_frame(frame, cfg.roles, cfg.bounds, fold=name)


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")


# ---------------------------------------------------------------- stages


def stage_simulate(cfg: RunConfig) -> Path:
    if cfg.dgp is None:
        raise ConfigError("simulate needs a 'dgp' input")
    with _timed("simulate"):
        ds = generate(DgpSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.dgp.items()}))
        cfg.output.mkdir(parents=True, exist_ok=True)
        save_csv(ds, cfg.output / "data.csv")
    return cfg.output / "data.csv"


def stage_split(cfg: RunConfig) -> dict:
    with _timed("split"):
        src = cfg.csv if cfg.csv is not None else _require(cfg.output / "data.csv", "split")
        ds = load_csv(src, cfg.roles, cfg.bounds)
        parts = split(ds, cfg.split)
        folder = cfg.output / "folds"
        folder.mkdir(parents=True, exist_ok=True)
        for name, part in zip(FOLD_NAMES, parts):
            save_csv(part, folder / f"{name}.csv")
        sizes = {name: len(part) for name, part in zip(FOLD_NAMES, parts)}
        logger.info("fold sizes %s", sizes)
    return sizes


def _nuisance_for(cfg: RunConfig, target: Dataset, nuis: Optional[Dataset], fold: str) -> tuple:
    spec = cfg.nuisance or {}
    gamma = float(spec.get("gamma", DEFAULT_GAMMA))
    if spec.get("type", "irls") == "external":
        paths = spec.get(fold) or {}
        if "pi" not in paths or "mu0" not in paths:
            raise ConfigError(f"external nuisance for {fold} needs 'pi' and 'mu0' files")
        pi = ingest_external_scores(paths["pi"], "pi", len(target), cfg.bounds, gamma)
        mu0 = ingest_external_scores(paths["mu0"], "mu0", len(target), cfg.bounds, gamma)
        nu0 = ingest_external_scores(paths["nu0"], "nu0", len(target), cfg.bounds, gamma) if "nu0" in paths else None
        if nu0 is None and np.all(np.isin(target.y, (0.0, 1.0))):
            nu0 = mu0
        fit = NuisanceFit(pi, mu0, nu0, gamma, provenance="external")
        return pseudo_outcomes(fit, target, want_phibar=nu0 is not None), fit
    learner = IRLSNuisanceLearner(gamma=gamma, max_iter=int(spec.get("max_iter", 100)),
                                  tol=float(spec.get("tol", 1e-8)), features=spec.get("features"))
    if cfg.split.cross_fit_folds > 1 or nuis is None or len(nuis) == 0:
        return cross_fit(target, cfg.split.cross_fit_folds, learner, seed=cfg.split.seed)
    fit = learner.fit(nuis).predict(target)
    return pseudo_outcomes(fit, target), fit


def stage_nuisance(cfg: RunConfig) -> None:
    if cfg.mode != COUNTERFACTUAL:
        logger.info("stage nuisance: skipped in observable mode")
        return
    with _timed("nuisance"):
        pairs = [("train_target", "train_nuis")]
        if not cfg.oracle:
            pairs.append(("test_target", "test_nuis"))
        for target_name, nuis_name in pairs:
            target = _load_fold(cfg, target_name)
            nuis = _load_fold(cfg, nuis_name)
            po, fit = _nuisance_for(cfg, target, nuis, target_name)
            frame = pd.DataFrame({"pi": fit.pi_hat, "mu0": fit.mu0_hat, "phi": po.phi})
            if po.phibar is not None:
                frame["nu0"] = fit.nu0_hat
                frame["phibar"] = po.phibar
            _write_csv(frame, cfg.output / "nuisance" / f"{target_name}.csv")


def _load_nuisance(cfg: RunConfig, fold: str) -> pd.DataFrame:
    return pd.read_csv(_require(cfg.output / "nuisance" / f"{fold}.csv", "this stage"), float_precision="round_trip")


def _resolve_sources(cfg: RunConfig, learn: Dataset) -> tuple:
    """Train learner sources on the learn fold; returns (sources, mean value)."""
    resolved, seen = [], set()
    for i, src in enumerate(cfg.sources):
        if isinstance(src, dict) and src.get("type") == "learner":
            if len(learn) == 0:
                raise ConfigError("learner sources need a nonempty learn fold")
            kind = src.get("kind", "logistic")
            name = src.get("name", kind)
            if name in seen:
                raise ConfigError(f"duplicate basis source name {name!r}")
            seen.add(name)
            model = basis_mod.train_base_predictor(learn, src.get("features"), cfg.mode, kind=kind,
                                                   seed=int(src.get("seed", cfg.seed + i)))
            resolved.append({"type": "model", "name": name, "model": model})
        else:
            resolved.append(src)
    mean_value = None
    if len(learn) > 0 and (cfg.mode != COUNTERFACTUAL or np.any(learn.d == 0)):
        mean_value = basis_mod.mean_outcome(learn, cfg.mode)
    return resolved, mean_value


def _fairness_vectors(cfg: RunConfig, data: Dataset, proxy) -> list:
    return [eval_fairness(spec, data, proxy if spec.uses_outcome else None) for spec in cfg.fairness]


def stage_fit(cfg: RunConfig) -> pd.DataFrame:
    with _timed("fit"):
        learn = _load_fold(cfg, "learn")
        train = _load_fold(cfg, "train_target")
        test = _load_fold(cfg, "test_target")
        sources, mean_value = _resolve_sources(cfg, learn)
        if mean_value is None:
            mean_value = basis_mod.mean_outcome(train, cfg.mode)
        B = basis_mod.assemble(train, sources, cfg.mode, mean_value=mean_value, fold="train_target")
        Bt = basis_mod.assemble(test, sources, cfg.mode, mean_value=mean_value, fold="test_target", eig_tol=None)
        _write_csv(B.to_frame(), cfg.output / "basis" / "train_target.csv")
        _write_csv(Bt.to_frame(), cfg.output / "basis" / "test_target.csv")
        (cfg.output / "basis" / "meta.json").write_text(json.dumps(
            {"names": list(B.names), "layout": B.layout, "signature": B.signature, "mean_value": mean_value},
            indent=2))
        if cfg.mode == COUNTERFACTUAL:
            nz = _load_nuisance(cfg, "train_target")
            target, second = nz["phi"].to_numpy(), nz["phibar"].to_numpy() if "phibar" in nz else None
            proxy = target if cfg.fairness_proxy == "phi" else nz["mu0"].to_numpy()
        else:
            target, second, proxy = train.y, train.y ** 2, train.y
        gs = _fairness_vectors(cfg, train, proxy)
        problem = build_problem(B, target, gs, second)
        sols = _solve(cfg, problem)
        frame = solutions_to_frame(sols, cfg.fairness_names, B.names)
        _write_csv(frame, cfg.output / "solutions.csv")
        logger.info("fit: %d solution(s) over k=%d columns", len(sols), B.k)
    return frame


def _solve(cfg: RunConfig, problem) -> list:
    job = cfg.solver.get("job", "grid")
    lam0 = float(cfg.solver.get("lambda0", 0.0))
    K = cfg.solver.get("K")
    if job == "grid":
        return solve_grid(problem, LambdaGrid(tuple(cfg.solver["axes"])), lam0, K)
    if job == "risk_min":
        return [solve_risk_min(problem, cfg.solver["eps"])]
    if job == "unfair_min":
        alpha = cfg.solver.get("alpha") or [1.0] * problem.t
        return [solve_unfair_min(problem, float(cfg.solver["eps"]), alpha)]
    sol = solve_risk_min(problem, cfg.solver["eps"])
    grid = seed_grid(sol, tuple(cfg.solver.get("spread", (0.5, 1.0, 2.0))))
    logger.info("seeded grid at dual lambda %s", list(grid.seed))
    return solve_grid(problem, grid, lam0, K)


def _test_evaluator(cfg: RunConfig, basis_values: np.ndarray) -> Evaluator:
    test = _load_fold(cfg, "test_target")
    if basis_values is not None and basis_values.shape[0] != len(test):
        raise StageError("test basis and test fold differ in length")
    kw = dict(bounds=cfg.bounds, truncate=cfg.truncate, level=cfg.level)
    if cfg.mode == COUNTERFACTUAL and cfg.oracle:
        if test.y0 is None:
            raise ConfigError("oracle evaluation needs a y0 column")
        specs = [FairnessSpec(s.kind, OBSERVABLE, s.alpha0, s.alpha1, s.h0, s.h1, s.label) for s in cfg.fairness]
        gs = [eval_fairness(s, test, test.y0 if s.uses_outcome else None) for s in specs]
        return Evaluator(basis_values, gs, outcome=test.y0, labels=test.y0, **kw)
    if cfg.mode == COUNTERFACTUAL:
        nz = _load_nuisance(cfg, "test_target")
        if "phibar" not in nz:
            raise StageError("counterfactual evaluation needs phibar in the test nuisance file")
        po = PseudoOutcomes(nz["phi"].to_numpy(), nz["phibar"].to_numpy())
        proxy = po.phi if cfg.fairness_proxy == "phi" else nz["mu0"].to_numpy()
        return Evaluator(basis_values, _fairness_vectors(cfg, test, proxy), pseudo=po,
                         mode=COUNTERFACTUAL, **kw)
    return Evaluator(basis_values, _fairness_vectors(cfg, test, test.y), outcome=test.y, labels=test.y, **kw)


def stage_evaluate(cfg: RunConfig, predictions: Optional[Path] = None) -> pd.DataFrame:
    """Profile every solution on the test fold, or the columns of ``predictions``.

    A predictions file (headered CSV, one column per predictor, aligned with
    the test fold) bypasses the fit stage; each column is scored as-is.
    """
    with _timed("evaluate"):
        if predictions is not None:
            preds = pd.read_csv(predictions, float_precision="round_trip")
            ev = _test_evaluator(cfg, preds.to_numpy(dtype=float))
            profiles = ev.profile(np.eye(preds.shape[1]))
            frame = frontier_frame(profiles)
            frame.insert(1, "predictor", list(preds.columns))
            out = cfg.output / "frontier_external.csv"
        else:
            ids, lambdas, betas, names, basis_names = solutions_from_frame(
                pd.read_csv(_require(cfg.output / "solutions.csv", "evaluate"), float_precision="round_trip"))
            Bt = pd.read_csv(_require(cfg.output / "basis" / "test_target.csv", "evaluate"), float_precision="round_trip")
            if list(Bt.columns) != basis_names:
                raise StageError("solutions and test basis have different columns")
            ev = _test_evaluator(cfg, Bt.to_numpy(dtype=float))
            chunks = [(lo, min(lo + 256, len(ids))) for lo in range(0, len(ids), 256)]

            def work(span):
                lo, hi = span
                return ev.profile(betas[lo:hi], ids[lo:hi], lambdas[lo:hi], names)

            with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
                profiles = [p for block in pool.map(work, chunks) for p in block]
            frame = frontier_frame(profiles)
            out = cfg.output / "frontier.csv"
        _write_csv(frame, out)
        logger.info("evaluate: %d profile(s) -> %s", len(frame), out.name)
    return frame


def stage_select(cfg: RunConfig) -> dict:
    with _timed("select"):
        frame = pd.read_csv(_require(cfg.output / "frontier.csv", "select"), float_precision="round_trip")
        profiles = profiles_from_frame(frame)
        by_id = {p.model_id: p for p in profiles}
        names = [nm for nm in cfg.fairness_names if nm in (profiles[0].disparities if profiles else {})]
        picks = []
        for subset in metric_subsets(names):
            mid = select_min_norm(profiles, subset)
            p = by_id[mid]
            picks.append({"metrics": list(subset), "model_id": int(mid), "lambda": p.lambdas, "mse": p.mse,
                          "auc": None if np.isnan(p.auc) else p.auc,
                          "disparities": {k: abs(v) for k, v in p.disparities.items()}})
        report = {"n_models": len(profiles), "selections": picks}
        (cfg.output / "selection.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def run(cfg: RunConfig) -> dict:
    """All stages in order; returns the selection report."""
    t0 = time.perf_counter()
    if cfg.dgp is not None:
        stage_simulate(cfg)
    stage_split(cfg)
    stage_nuisance(cfg)
    stage_fit(cfg)
    stage_evaluate(cfg)
    report = stage_select(cfg)
    logger.info("run: total %.3f s", time.perf_counter() - t0)
    return report
