import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from loguru import logger
from pydantic import BaseModel

PYPROJECT_PATH = Path(__file__).resolve().parent.parent / "pyproject.toml"


def __load_config() -> dict:
    """
    Loads the simulation defaults from pyproject.toml.
    :return: Dictionary with configuration data.
    """
    with open(PYPROJECT_PATH, "rb") as f:
        return tomllib.load(f)


def configure_logger(logfile: str = None, level: str = "INFO"):
    """
    Configures the logger to output to stdout and optionally to a logfile.
    :param logfile:  Path to the logfile. If None, only stdout is used.
    :param level: Minimum level printed on stdout.
    """
    logger.remove()
    logger.add(
        sys.stdout,
        colorize=True,
        level=level,
        format=(
            "<green>{time:HH:mm:ss}</green> "
            "| <level>{level: <8}</level> "
            "| <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> "
            "- <level>{message}</level>"
        ),
    )
    if logfile:
        logger.add(
            logfile,
            rotation="100 MB",
            level="TRACE",
        )


def db_to_linear(snr_db: float) -> float:
    """
    Converts an SNR given in dB to a linear power ratio.
    """
    return 10.0 ** (snr_db / 10.0)


def theta_to_alpha(theta: float, frame_duration_bandwidth: float = 1.0) -> float:
    """
    Maps the delay exponent theta to the normalized exponent alpha = theta * Tf * B / ln 2.
    """
    return theta * frame_duration_bandwidth / math.log(2.0)


class CrpRecord(BaseModel):
    """
    Represents one enrolled challenge-response pair: the challenge, the public helper data (the syndrome only)
    and the digest of the key the response amplifies to. erasure_mask holds the guard-band positions of the
    enrolment response; it never leaves the verifier.
    """

    challenge: bytes
    helper_data: bytes
    key_digest: bytes
    erasure_mask: bytes = b""
    used: bool = False


class SkgSimError(Exception):
    """
    Base class for all errors raised by the simulator and the protocol library.
    """


class NoUsableSubcarrierError(SkgSimError):
    def __init__(self):
        super().__init__("no usable subcarrier")


class PowerAllocationError(SkgSimError):
    pass


class OracleSizeError(SkgSimError):
    def __init__(self, n_items: int, limit: int):
        super().__init__(f"oracle size limit: {n_items} items exceeds {limit}")


class SchedulingError(SkgSimError):
    pass


class ReconciliationError(SkgSimError):
    def __init__(self, block_index: int):
        super().__init__(f"reconciliation failure in block {block_index}")
        self.block_index = block_index


class AmplificationBudgetError(SkgSimError):
    def __init__(self, requested: int, allowed: float):
        super().__init__(f"amplification budget exceeded: requested {requested} bits, allowed {allowed:.1f}")


class ResumptionError(SkgSimError):
    def __init__(self):
        super().__init__("resumption secret already consumed")


class EnrolmentExhaustedError(SkgSimError):
    def __init__(self, device_id: str):
        super().__init__(f"enrolment exhausted for device {device_id}")
        self.device_id = device_id


class FrameDecodeError(SkgSimError):
    pass


class ConfigError(SkgSimError):
    pass


global_config = __load_config()
