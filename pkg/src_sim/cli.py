"""
Command-line surface: argument parsing, grid syntax and the CLI > config file > pyproject precedence.
"""

import argparse
import re
from pathlib import Path

import numpy as np
from dotenv import dotenv_values
from loguru import logger
from pydantic import ValidationError

from src_common.common_utils import ConfigError, SkgSimError, global_config
from src_sim.experiments import RUNNERS, Experiment, ExperimentConfig, Transcript

GRID_PATTERN = re.compile(r"^\s*([^:]+):([^:]+):(\d+)(log|lin)\s*$")

# config-file key -> (ExperimentConfig field, parser name)
FILE_KEYS = {
    "N": ("n_subcarriers", "int_grid"),
    "SNR_DB": ("snr_db", "grid"),
    "KAPPA": ("kappa", "grid"),
    "BETA_GRID": ("beta", "grid"),
    "THETA": ("theta", "grid"),
    "SIGMA_E2": ("sigma_e2", "grid"),
    "TRIALS": ("trials", "int"),
    "SEED": ("seed", "int"),
    "DP_RESOLUTION": ("dp_resolution", "float"),
    "OUT": ("output_path", "path"),
    "WORKERS": ("workers", "int"),
    "TF_B": ("frame_duration_bandwidth", "float"),
    "CODE": ("code", "str"),
}


def parse_grid(text: str) -> tuple[float, ...]:
    """
    Parses a comma list ("0.0001,100"), a log grid ("1e-4:1:25log") or a linear grid ("0:1:5lin").
    :raises ConfigError: on malformed input
    """
    text = str(text).strip()
    if not text:
        raise ConfigError("empty grid")
    match = GRID_PATTERN.match(text)
    try:
        if match is None:
            return tuple(float(item) for item in text.split(","))
        start, stop, count = float(match.group(1)), float(match.group(2)), int(match.group(3))
    except ValueError as e:
        raise ConfigError(f"malformed grid {text!r}: {e}") from e
    if count < 1:
        raise ConfigError(f"grid {text!r} needs at least one point")
    if match.group(4) == "lin":
        return tuple(float(v) for v in np.linspace(start, stop, count))
    if start <= 0 or stop <= 0:
        raise ConfigError(f"log grid {text!r} needs positive bounds")
    return tuple(float(v) for v in np.geomspace(start, stop, count))


def parse_int_grid(text: str) -> tuple[int, ...]:
    values = parse_grid(text)
    if any(v != int(v) for v in values):
        raise ConfigError(f"integer grid expected, got {text!r}")
    return tuple(int(v) for v in values)


def _convert(value: str, kind: str):
    try:
        match kind:
            case "grid":
                return parse_grid(value)
            case "int_grid":
                return parse_int_grid(value)
            case "int":
                return int(value)
            case "float":
                return float(value)
            case "path":
                return Path(value)
            case _:
                return value
    except ValueError as e:
        raise ConfigError(f"invalid value {value!r}: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skg-sim",
        description="Pipelined secret key generation and encrypted data transfer simulator",
    )
    parser.add_argument("experiment", choices=[e.value for e in Experiment])
    parser.add_argument("--config", type=Path, help="flat KEY=value experiment file")
    parser.add_argument("--n", dest="N", help="subcarrier counts, e.g. 12 or 12,64")
    parser.add_argument("--snr-db", dest="SNR_DB", help="pilot SNR grid in dB")
    parser.add_argument("--kappa", dest="KAPPA", help="inverse code rate grid")
    parser.add_argument("--beta-grid", dest="BETA_GRID", help="key-to-data ratio grid, e.g. 1e-4:1:25log")
    parser.add_argument("--theta", dest="THETA", help="delay exponent grid")
    parser.add_argument("--sigma-e2", dest="SIGMA_E2", help="estimation error variance grid")
    parser.add_argument("--trials", dest="TRIALS", help="Monte Carlo trials per grid point")
    parser.add_argument("--seed", dest="SEED", help="master seed")
    parser.add_argument("--dp-resolution", dest="DP_RESOLUTION", help="knapsack grid step in bits/s/Hz")
    parser.add_argument("--out", dest="OUT", help="output CSV path")
    parser.add_argument("--workers", dest="WORKERS", help="worker threads")
    parser.add_argument("--tf-b", dest="TF_B", help="frame duration times bandwidth")
    parser.add_argument("--code", dest="CODE", help="reconciliation code: hamming74 or hamming84")
    parser.add_argument("--tamper-bit", type=int, help="flip this bit of the first extended ciphertext")
    parser.add_argument("--exhaust-crps", action="store_true", help="enrol a single CRP and run out of it")
    return parser


def _defaults() -> dict[str, str]:
    return {
        "N": str(global_config["DEFAULT_SUBCARRIERS"]),
        "SNR_DB": str(global_config["DEFAULT_SNR_DB"]),
        "KAPPA": str(global_config["DEFAULT_KAPPA"]),
        "BETA_GRID": global_config["DEFAULT_BETA_GRID"],
        "THETA": global_config["DEFAULT_THETA"],
        "SIGMA_E2": str(global_config["DEFAULT_SIGMA_E2"]),
        "TRIALS": str(global_config["DEFAULT_TRIALS"]),
        "SEED": str(global_config["DEFAULT_SEED"]),
        "DP_RESOLUTION": str(global_config["DP_RESOLUTION"]),
        "OUT": global_config["DEFAULT_OUTPUT"],
        "WORKERS": str(global_config["MAX_SIM_WORKERS"]),
        "TF_B": str(global_config["FRAME_DURATION_BANDWIDTH"]),
        "CODE": "hamming74",
    }


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Merges pyproject defaults, the optional config file and the command line, in increasing precedence.
    :raises ConfigError: on unknown keys, malformed values or constraint violations
    """
    values = _defaults()
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        from_file = {k.upper(): v for k, v in dotenv_values(args.config).items() if v is not None}
        unknown = sorted(set(from_file) - set(FILE_KEYS))
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {', '.join(unknown)}")
        values.update(from_file)
        logger.debug("Loaded {} keys from {}", len(from_file), args.config)
    values.update({key: getattr(args, key) for key in FILE_KEYS if getattr(args, key) is not None})

    fields = {name: _convert(values[key], kind) for key, (name, kind) in FILE_KEYS.items()}
    try:
        return ExperimentConfig(
            experiment=Experiment(args.experiment),
            effective_dp_resolution=global_config["EFFECTIVE_DP_RESOLUTION"],
            tamper_bit=args.tamper_bit,
            exhaust_crps=args.exhaust_crps,
            **fields,
        )
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def main(argv: list[str] | None = None) -> int:
    """
    Runs one experiment. Exit codes: 0 success, 1 failed verification or simulation error, 2 configuration
    or I/O error.
    """
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as e:
        logger.error("Invalid configuration: {}", e)
        return 2

    logger.info("Running {} with seed {} on {} workers", cfg.experiment.value, cfg.seed, cfg.workers)
    try:
        result = RUNNERS[cfg.experiment](cfg)
    except OSError as e:
        logger.error("I/O error on {}: {}", cfg.output_path, e)
        return 2
    except SkgSimError as e:
        logger.critical("Experiment {} failed: {}", cfg.experiment.value, e)
        return 1

    if isinstance(result, Transcript):
        return result.exit_code
    return 0
