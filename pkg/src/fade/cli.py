"""Command-line entry point: ``fade <stage> --config run.json``.

Exit codes: 0 ok, 2 configuration/data/stage error, 3 infeasible problem,
4 numerical failure.  Errors are also printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .exceptions import ConditioningError, FadeError, InfeasibleError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4

STAGES = {
    "simulate": pipeline.stage_simulate,
    "split": pipeline.stage_split,
    "nuisance": pipeline.stage_nuisance,
    "fit": pipeline.stage_fit,
    "evaluate": pipeline.stage_evaluate,
    "select": pipeline.stage_select,
    "run": pipeline.run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fade", description="Fair linear ensembles over a basis of predictors.")
    parser.add_argument("command", choices=sorted(STAGES))
    parser.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    parser.add_argument("--output", type=Path, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="seed for simulation and splitting (overrides config)")
    parser.add_argument("--jobs", type=int, help="worker threads for evaluation")
    parser.add_argument("--predictions", type=Path, help="evaluate: score the columns of this CSV instead")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, (NumericalError, ConditioningError)):
        return EXIT_NUMERIC
    return EXIT_CONFIG


def _report(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, InfeasibleError):
        payload["min_risk"] = exc.min_risk
    if isinstance(exc, ConditioningError):
        payload["columns"] = exc.columns
    print(json.dumps(payload), file=sys.stderr)


def _setup_logging(output: Path, verbose: bool) -> logging.Handler:
    output.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(output / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("fade")
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    return handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    try:
        cfg = pipeline.RunConfig.load(args.config, output=args.output, seed=args.seed, jobs=args.jobs)
        handler = _setup_logging(cfg.output, args.verbose)
        if args.command == "evaluate":
            pipeline.stage_evaluate(cfg, args.predictions)
        else:
            STAGES[args.command](cfg)
    except (FadeError, ValueError, OSError) as exc:
        code = _exit_code(exc) if isinstance(exc, FadeError) else EXIT_CONFIG
        logging.getLogger("fade").error("%s: %s", type(exc).__name__, exc)
        _report(exc, code)
        return code
    except ArithmeticError as exc:
        _report(exc, EXIT_NUMERIC)
        return EXIT_NUMERIC
    finally:
        if handler is not None:
            logging.getLogger("fade").removeHandler(handler)
            handler.close()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
