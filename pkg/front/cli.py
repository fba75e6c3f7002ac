"""
Command-line interface - argparse subcommands over the calibration pipeline
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import pandas as pd

from back.exceptions import (
    CalibrationToolkitError,
    ConfigurationError,
    DataLoadError,
    DivergenceError,
    InvalidParameterError,
    MissingArtifactError,
    TheoryCheckError,
)
from back.logger import logger, set_level
from back.pipeline import CalibrationPipeline
from config import LOG_LEVELS, Config, PipelineConfig

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_THEORY_FAILED = 4

# Everything that is not a PipelineConfig field
_CLI_ONLY = ("command", "config", "log_level")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Long-form flag per PipelineConfig field; unset flags leave the config untouched"""
    none = argparse.SUPPRESS

    inputs = parser.add_argument_group("inputs")
    inputs.add_argument("--config", type=Path, default=None, help="JSON config document")
    inputs.add_argument("--train", type=Path, default=none, help="train manifest")
    inputs.add_argument("--val", type=Path, default=none, help="validation manifest")
    inputs.add_argument("--test", type=Path, action="append", default=none,
                        help="test manifest (repeatable)")

    transfer = parser.add_argument_group("transfer")
    transfer.add_argument("--zeta", type=int, default=none, help="head/tail count threshold")
    transfer.add_argument("--alpha", type=float, default=none, help="weight of the tail class's own statistics")
    transfer.add_argument("--eta1", type=float, default=none, help="lower weight clip")
    transfer.add_argument("--eta2", type=float, default=none, help="upper weight clip")
    transfer.add_argument("--strategy", choices=["attention", "uniform", "onehot"], default=none)

    metrics = parser.add_argument_group("metrics and search")
    metrics.add_argument("--bins", type=int, default=none, help="ECE/SCE bins")
    metrics.add_argument("--ranges", type=int, default=none, help="ACE ranges")
    metrics.add_argument("--scheme", choices=["equal_width", "equal_mass"], default=none)
    metrics.add_argument("--hist-bins", type=int, default=none, help="weight histogram bins")
    metrics.add_argument("--top-k", type=int, default=none, help="head classes per tail class in attention.csv")
    metrics.add_argument("--tmin", type=float, default=none, help="lower temperature bound")
    metrics.add_argument("--tmax", type=float, default=none, help="upper temperature bound")

    outputs = parser.add_argument_group("outputs")
    outputs.add_argument("--seed", type=int, default=none)
    outputs.add_argument("--out", type=Path, default=none, help="output directory")
    outputs.add_argument("--format", choices=["json", "csv"], default=none, help="stdout table format")
    outputs.add_argument("--log-level", default=None, help="override LOG_LEVEL")

    synth = parser.add_argument_group("synthetic data")
    synth.add_argument("--num-classes", type=int, default=none)
    synth.add_argument("--feature-dim", type=int, default=none)
    synth.add_argument("--imbalance-factor", type=float, default=none)
    synth.add_argument("--max-count", type=int, default=none)
    synth.add_argument("--gamma", type=float, default=none, help="logit overconfidence scale")
    synth.add_argument("--prior-bias", action=argparse.BooleanOptionalAction, default=none)
    synth.add_argument("--test-per-class", type=int, default=none)
    synth.add_argument("--separation", type=float, default=none)
    synth.add_argument("--memorization", type=float, default=none,
                       help="contraction exponent of training embeddings toward their class mean")
    synth.add_argument("--data-format", choices=["binary", "csv"], default=none)

    sweeps = parser.add_argument_group("sweeps and theory checks")
    sweeps.add_argument("--alphas", type=float, nargs="+", default=none)
    sweeps.add_argument("--mc-samples", type=int, default=none)
    sweeps.add_argument("--theory-cases", type=int, default=none)


COMMANDS: Dict[str, str] = {
    "synth": "generate a synthetic long-tailed train/val/test bundle",
    "fit": "fit per-class Gaussians on train and split head/tail classes",
    "calibrate": "fit base, plain and weighted temperatures on val",
    "evaluate": "score every fitted method on the test manifests",
    "diagram": "emit reliability-diagram tables for val and test",
    "sweep-alpha": "weighted temperature and test metrics across alpha",
    "verify-theory": "numerically check the weight-error bound and crossover points",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailcal",
        description="Post-hoc calibration of long-tailed classifiers by head-to-tail distribution transfer",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        _add_config_flags(subparsers.add_parser(name, help=help_text, description=help_text))
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    """Merge the optional config document with the flags that were given"""
    overrides = {key: value for key, value in vars(args).items() if key not in _CLI_ONLY}
    if args.config is not None:
        return PipelineConfig.load(args.config, overrides)
    return PipelineConfig.build(**overrides)


def _report_frame(report: Dict[str, Dict[str, dict]]) -> pd.DataFrame:
    rows = []
    for split, methods in report.items():
        for method, record in methods.items():
            row = {"split": split}
            row.update({key: value for key, value in record.items() if key != "before"})
            row.update({f"before_{key}": value for key, value in record["before"].items()})
            rows.append(row)
    return pd.DataFrame(rows)


def emit(result: Union[pd.DataFrame, Dict[str, Any]], fmt: str) -> str:
    """Render a command result for stdout"""
    if isinstance(result, dict):
        if fmt == "json":
            return json.dumps(result, indent=2)
        result = _report_frame(result)
    if fmt == "csv":
        return result.to_csv(index=False).rstrip("\n")
    return json.dumps(result.to_dict(orient="records"), indent=2, default=str)


def _run(command: str, pipeline: CalibrationPipeline) -> Union[pd.DataFrame, Dict[str, Any]]:
    handlers: Dict[str, Callable[[], Any]] = {
        "synth": pipeline.synth,
        "fit": pipeline.fit,
        "calibrate": pipeline.calibrate,
        "evaluate": pipeline.evaluate,
        "diagram": pipeline.diagram,
        "sweep-alpha": pipeline.sweep_alpha,
        "verify-theory": pipeline.verify_theory,
    }
    return handlers[command]()


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and map failures to exit codes

    Returns:
        0 success, 2 invalid input, 3 missing artifact, 4 failed theory check
    """
    args = build_parser().parse_args(argv)
    try:
        if args.log_level:
            if args.log_level.upper() not in LOG_LEVELS:
                raise ConfigurationError(f"--log-level must be one of {LOG_LEVELS}, got {args.log_level!r}")
            set_level(args.log_level)
        Config.validate()
        config = config_from_args(args)
        logger.info(f"Running {args.command} (out={config.out})")
        pipeline = CalibrationPipeline(config)
        result = _run(args.command, pipeline)
        print(emit(result, config.format))
        if args.command == "verify-theory":
            pipeline.assert_theory(result)
    except TheoryCheckError as e:
        logger.error(str(e))
        return EXIT_THEORY_FAILED
    except MissingArtifactError as e:
        logger.error(str(e))
        return EXIT_MISSING_ARTIFACT
    except (ConfigurationError, InvalidParameterError, DataLoadError, DivergenceError, CalibrationToolkitError) as e:
        logger.error(str(e))
        return EXIT_INVALID
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        return EXIT_UNEXPECTED
    logger.info(f"{args.command} finished")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
