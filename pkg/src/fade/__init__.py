"""Fair linear ensembles of predictors for observable and counterfactual targets."""

from .basis import BasisMatrix, assemble, predict, train_base_predictor
from .dataset import Dataset, Roles, SplitPlan, load_csv, save_csv, split
from .estimators import FadeRegressor
from .evaluation import (Evaluator, PerformanceProfile, auc, estimate_disparity, estimate_risk,
                         select_min_norm, to_classifier)
from .exceptions import (ConditioningError, ConfigError, DataValidationError, FadeError, InfeasibleError,
                         NumericalError, SignatureMismatchError, StageError)
from .fairness import FairnessSpec, FairnessVector, disparity, eval_fairness
from .nuisance import (IRLSNuisanceLearner, LogisticIRLS, NuisanceFit, PseudoOutcomes, cross_fit,
                       fit_logistic_irls, ingest_external_scores, pseudo_outcomes)
from .sim import DgpSpec, bayes_optimal, generate
from .solver import (FadeSolution, LambdaGrid, ProblemData, build_problem, seed_grid, solve_grid,
                     solve_penalized, solve_risk_min, solve_unfair_min)

__version__ = "0.1.0"

__all__ = [
    "BasisMatrix", "assemble", "predict", "train_base_predictor",
    "Dataset", "Roles", "SplitPlan", "load_csv", "save_csv", "split",
    "FadeRegressor",
    "Evaluator", "PerformanceProfile", "auc", "estimate_disparity", "estimate_risk", "select_min_norm",
    "to_classifier",
    "ConditioningError", "ConfigError", "DataValidationError", "FadeError", "InfeasibleError", "NumericalError",
    "SignatureMismatchError", "StageError",
    "FairnessSpec", "FairnessVector", "disparity", "eval_fairness",
    "IRLSNuisanceLearner", "LogisticIRLS", "NuisanceFit", "PseudoOutcomes", "cross_fit", "fit_logistic_irls",
    "ingest_external_scores", "pseudo_outcomes",
    "DgpSpec", "bayes_optimal", "generate",
    "FadeSolution", "LambdaGrid", "ProblemData", "build_problem", "seed_grid", "solve_grid", "solve_penalized",
    "solve_risk_min", "solve_unfair_min",
]
