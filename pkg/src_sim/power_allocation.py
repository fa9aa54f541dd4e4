"""
Power allocation across subcarriers.

Two regimes are supported: waterfilling for the long-term rate, and the delay-constrained policy that
maximizes the effective capacity for a QoS exponent alpha. Both locate their Lagrange multiplier by
bisection on the power residual, then polish it in closed form on the converged active set.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from loguru import logger

from src_common.common_utils import NoUsableSubcarrierError, PowerAllocationError

BISECTION_TOLERANCE = 1e-12
MAX_BISECTION_STEPS = 400


class Regime(Enum):
    WATERFILLING = "waterfilling"
    EFFECTIVE_CAPACITY = "effective_capacity"


@dataclass(frozen=True)
class PowerPolicy:
    """
    Per-subcarrier powers aligned with the gain vector they were computed for.
    multiplier is lambda for waterfilling and the cutoff g_0 for the effective-capacity policy.
    """

    powers: np.ndarray
    multiplier: float
    regime: Regime
    alpha: float = 0.0

    @property
    def active(self) -> np.ndarray:
        return self.powers > 0


def _validated_gains(g_hat: np.ndarray, total_power: float) -> tuple[np.ndarray, np.ndarray]:
    gains = np.asarray(g_hat, dtype=float)
    if total_power <= 0:
        raise ValueError(f"total power must be positive, got {total_power}")
    if np.any(gains < 0):
        raise ValueError("gains must be non-negative")
    usable = gains > 0
    if not np.any(usable):
        raise NoUsableSubcarrierError()
    return gains, usable


def _bisect(residual, lower: float, upper: float) -> float:
    """
    Bisection for an increasing residual with residual(lower) <= 0 <= residual(upper).
    """
    f_lower, f_upper = residual(lower), residual(upper)
    if not f_lower <= 0 <= f_upper:
        raise PowerAllocationError(f"multiplier not bracketed: residuals {f_lower:.3e}, {f_upper:.3e}")
    for _ in range(MAX_BISECTION_STEPS):
        middle = 0.5 * (lower + upper)
        f_middle = residual(middle)
        if not f_lower <= f_middle <= f_upper:
            raise PowerAllocationError("power residual is not monotone in the multiplier")
        if f_middle > 0:
            upper, f_upper = middle, f_middle
        else:
            lower, f_lower = middle, f_middle
        if abs(f_middle) <= BISECTION_TOLERANCE or upper - lower <= BISECTION_TOLERANCE * max(1.0, abs(middle)):
            break
    return 0.5 * (lower + upper)


def _polish(active: np.ndarray, closed_form, powers_at) -> tuple[float, np.ndarray]:
    """
    Re-solves the multiplier exactly on the active set until the set is self-consistent.
    """
    if not np.any(active):
        raise PowerAllocationError("power budget too small to activate any subcarrier")
    level = closed_form(active)
    for _ in range(active.size + 1):
        raw = powers_at(level)
        refreshed = raw > 0
        if np.array_equal(refreshed, active):
            break
        active = refreshed
        level = closed_form(active)
    return level, np.where(active, powers_at(level), 0.0)


def waterfilling(g_hat: np.ndarray, total_power: float) -> PowerPolicy:
    """
    Waterfilling p_j = [1/lambda - 1/g_j]^+ with sum p_j = total_power.
    :param g_hat: estimated gains, any order
    :param total_power: sum-power budget (N * P for an average per-subcarrier power P)
    :return: PowerPolicy with multiplier lambda
    """
    gains, usable = _validated_gains(g_hat, total_power)
    inverse = np.full(gains.shape, np.inf)
    inverse[usable] = 1.0 / gains[usable]

    def powers_at(level: float) -> np.ndarray:
        return np.where(usable, level - inverse, -np.inf)

    def residual(level: float) -> float:
        return float(np.sum(np.maximum(powers_at(level), 0.0)) - total_power)

    def closed_form(active: np.ndarray) -> float:
        return (total_power + np.sum(inverse[active])) / np.count_nonzero(active)

    finite_inverse = inverse[usable]
    level = _bisect(residual, float(finite_inverse.min()), float(finite_inverse.max()) + total_power)
    level, powers = _polish(powers_at(level) > 0, closed_form, powers_at)
    logger.debug("Waterfilling level {:.6g} with {} active subcarriers", level, np.count_nonzero(powers))
    return PowerPolicy(powers=powers, multiplier=1.0 / level, regime=Regime.WATERFILLING)


def effective_power_allocation(g_hat: np.ndarray, total_power: float, alpha: float) -> PowerPolicy:
    """
    Delay-constrained optimal policy p_i = 1 / (g_0^b g_i^a) - 1 / g_i, clamped at zero,
    with a = alpha / (alpha + N) and b = N / (alpha + N).

    The search runs over t = g_0^{-b}; subcarrier i is active iff t > g_i^{-b}, and the allocated power is
    increasing in t, so bisection on log t brackets the cutoff.
    :param g_hat: estimated gains, any order
    :param total_power: sum-power budget
    :param alpha: normalized delay exponent, > 0
    :return: PowerPolicy with multiplier g_0
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    gains, usable = _validated_gains(g_hat, total_power)
    n = gains.size
    a = alpha / (alpha + n)
    b = n / (alpha + n)
    log_gains = np.full(gains.shape, -np.inf)
    log_gains[usable] = np.log(gains[usable])

    def powers_at(log_t: float) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            raw = np.exp(log_t - a * log_gains) - np.exp(-log_gains)
        return np.where(usable, raw, -np.inf)

    def residual(log_t: float) -> float:
        return float(np.sum(np.maximum(powers_at(log_t), 0.0)) - total_power)

    def closed_form(active: np.ndarray) -> float:
        numerator = total_power + np.sum(np.exp(-log_gains[active]))
        return float(np.log(numerator) - np.log(np.sum(np.exp(-a * log_gains[active]))))

    strongest = float(log_gains[usable].max())
    lower = -b * strongest
    upper = math.log(total_power + math.exp(-strongest)) + a * strongest
    log_t = _bisect(residual, lower, upper)
    log_t, powers = _polish(powers_at(log_t) > 0, closed_form, powers_at)

    if not np.any(powers > 0) or not math.isclose(powers.sum(), total_power, rel_tol=1e-9):
        raise PowerAllocationError(f"no positive-power solution for total power {total_power}")
    log_cutoff = -log_t / b
    cutoff = math.exp(log_cutoff) if log_cutoff < 709.0 else math.inf
    logger.debug("Effective policy alpha={:.4g}: cutoff {:.6g}, {} active", alpha, cutoff, np.count_nonzero(powers))
    return PowerPolicy(powers=powers, multiplier=cutoff, regime=Regime.EFFECTIVE_CAPACITY, alpha=alpha)


def capacity(g_hat: np.ndarray, policy: PowerPolicy) -> float:
    """
    Sum rate sum_j log2(1 + g_j p_j) in bits/s/Hz.
    """
    return float(np.sum(subcarrier_rates(g_hat, policy)))


def subcarrier_rates(g_hat: np.ndarray, policy: PowerPolicy) -> np.ndarray:
    gains = np.asarray(g_hat, dtype=float)
    if gains.shape != policy.powers.shape:
        raise ValueError(f"gain vector shape {gains.shape} does not match powers {policy.powers.shape}")
    return np.log2(1.0 + gains * policy.powers)


def effective_objective(g_hat: np.ndarray, powers: np.ndarray, alpha: float) -> float:
    """
    Product prod_i (1 + p_i g_i)^(-alpha/N) minimized by the delay-constrained policy.
    """
    gains = np.asarray(g_hat, dtype=float)
    return float(np.exp(-alpha / gains.size * np.sum(np.log1p(gains * np.asarray(powers)))))
