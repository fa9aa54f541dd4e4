"""
Scalar performance metrics: efficiencies of the parallel and sequential schemes, effective data and syndrome
rates under a delay exponent, the optimal effective capacity and the delay-outage approximation.

Rate matrices are (trials x subcarriers) arrays of log2(1 + p g) in descending-rank order.
"""

import math
from typing import TYPE_CHECKING, Iterable

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, computed_field
from scipy.special import logsumexp

from src_common.common_utils import SchedulingError, theta_to_alpha
from src_sim.power_allocation import effective_power_allocation

if TYPE_CHECKING:
    from src_sim.scheduler import Allocation, SecurityParams

ROUNDING_SLACK = 1e-9
LN2 = math.log(2.0)


class DelayConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta: float = Field(ge=0)
    frame_duration_bandwidth: float = Field(default=1.0, gt=0)

    @computed_field
    @property
    def alpha(self) -> float:
        return theta_to_alpha(self.theta, self.frame_duration_bandwidth)


class SequentialAccounting(BaseModel):
    """
    Frame budget of the sequential scheme: M reconciliation frames followed by L data frames.
    """

    model_config = ConfigDict(frozen=True)

    m_frames: int = Field(ge=0)
    l_frames: int = Field(ge=0)

    @computed_field
    @property
    def eta(self) -> float:
        total = self.l_frames + self.m_frames
        return self.l_frames / total if total else 0.0


def parallel_efficiency(trials: Iterable[tuple["Allocation", float]]) -> float:
    """
    Ratio of the mean data rate on D to the mean capacity (ratio of means, not mean of ratios).
    """
    pairs = list(trials)
    if not pairs:
        raise ValueError("at least one trial is required")
    achieved = np.array([allocation.achieved for allocation, _ in pairs])
    capacities = np.array([cap for _, cap in pairs])
    if capacities.mean() == 0:
        raise ValueError("mean capacity is zero")
    return float(achieved.mean() / capacities.mean())


def ratio_standard_error(numerators: np.ndarray, denominators: np.ndarray) -> float:
    """
    Delta-method standard error of mean(numerators) / mean(denominators).
    """
    numerators = np.asarray(numerators, dtype=float)
    denominators = np.asarray(denominators, dtype=float)
    if numerators.size < 2 or denominators.mean() == 0:
        return 0.0
    ratio = numerators.mean() / denominators.mean()
    residual = numerators - ratio * denominators
    return float(np.std(residual, ddof=1) / (math.sqrt(numerators.size) * abs(denominators.mean())))


def sequential_accounting(
    c_skg: float, mean_recon_rate: float, mean_capacity: float, params: "SecurityParams"
) -> SequentialAccounting:
    """
    M = ceil(kappa C_SKG / E[C_R]) reconciliation frames and L = floor(C_SKG / (beta E[C])) data frames.
    A key and its reconciliation always take at least one frame.
    """
    if mean_recon_rate <= 0 or mean_capacity <= 0:
        raise ValueError("mean reconciliation rate and mean capacity must be positive")
    m_frames = max(1, math.ceil(params.kappa * c_skg / mean_recon_rate - ROUNDING_SLACK))
    l_frames = max(0, math.floor(c_skg / (params.beta * mean_capacity) + ROUNDING_SLACK))
    return SequentialAccounting(m_frames=m_frames, l_frames=l_frames)


def sequential_equivalent_frames(n: int, acct: SequentialAccounting) -> float:
    """
    Number of subcarrier slots per data frame in the sequential scheme, N (L + M) / L.
    """
    if acct.l_frames < 1:
        raise SchedulingError("sequential scheme carries no data frame (L = 0)")
    return n * (acct.l_frames + acct.m_frames) / acct.l_frames


def _log2_mean_power(rates: np.ndarray, exponent: float) -> np.ndarray:
    """
    Column-wise log2 E[2^(exponent * R)], evaluated in the log domain.
    """
    return (logsumexp(exponent * LN2 * rates, axis=0) - math.log(rates.shape[0])) / LN2


def effective_rate(rates_per_trial: np.ndarray, set_size: float, alpha: float) -> float:
    """
    Effective rate -(1/alpha) sum_i log2 E[(1 + p_i g_i)^(-alpha/F)] of the subcarriers in the matrix,
    assuming independence across subcarriers; alpha = 0 gives E[(1/F) sum_i R_i].
    :param rates_per_trial: (trials x |set|) matrix of per-subcarrier rates
    :param set_size: normalization F (|D| for data, N - |D| for syndromes, N (L + M) / L for sequential)
    :param alpha: normalized delay exponent
    :return: effective rate, 0 for an empty set
    """
    rates = np.atleast_2d(np.asarray(rates_per_trial, dtype=float))
    if rates.size == 0:
        return 0.0
    if set_size < 1:
        raise ValueError(f"set size must be at least 1, got {set_size}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if alpha == 0:
        return float(rates.mean(axis=0).sum() / set_size)
    return float(-np.sum(_log2_mean_power(rates, -alpha / set_size)) / alpha)


def effective_rate_joint(rates_per_trial: np.ndarray, set_size: float, alpha: float) -> float:
    """
    Effective rate without the independence factorization: -(1/alpha) log2 E[2^(-(alpha/F) sum_i R_i)].
    """
    rates = np.atleast_2d(np.asarray(rates_per_trial, dtype=float))
    if rates.size == 0:
        return 0.0
    if set_size < 1:
        raise ValueError(f"set size must be at least 1, got {set_size}")
    frame_rates = rates.sum(axis=1)[:, np.newaxis]
    if alpha == 0:
        return float(frame_rates.mean() / set_size)
    return float(-_log2_mean_power(frame_rates, -alpha / set_size)[0] / alpha)


class ExpectationPool:
    """
    Shared Monte Carlo pool of per-rank rates. Every candidate partition evaluated against the same pool sees
    the same channel draws.
    """

    def __init__(self, rates: np.ndarray, alpha: float):
        self.rates = np.atleast_2d(np.asarray(rates, dtype=float))
        self.alpha = alpha
        self._throughputs: dict[float, np.ndarray] = {}

    @classmethod
    def from_trials(cls, gains: np.ndarray, powers: np.ndarray, alpha: float) -> "ExpectationPool":
        return cls(np.log2(1.0 + np.asarray(gains) * np.asarray(powers)), alpha)

    @property
    def n_subcarriers(self) -> int:
        return self.rates.shape[1]

    @property
    def n_trials(self) -> int:
        return self.rates.shape[0]

    def throughputs(self, set_size: int) -> np.ndarray:
        """
        Per-rank effective throughput tau_i(F) = -(F/alpha) log2 E[(1 + p_i g_i)^(-alpha/F)], so that
        the effective rate of a set of size F is sum_{i in set} tau_i(F) / F.
        """
        if set_size not in self._throughputs:
            if self.alpha == 0:
                values = self.rates.mean(axis=0)
            else:
                values = -set_size * _log2_mean_power(self.rates, -self.alpha / set_size) / self.alpha
            self._throughputs[set_size] = np.maximum(values, 0.0)
        return self._throughputs[set_size]

    def frame_rate(self, ranks) -> float:
        """
        Effective rate a rank set contributes per subcarrier of the whole frame: sum_{i in set} tau_i(|set|) / N.
        Shares of disjoint sets add up to at most frame_rate(range(N)).
        """
        ranks = np.asarray(list(ranks), dtype=int)
        if ranks.size == 0:
            return 0.0
        return float(self.throughputs(ranks.size)[ranks].sum() / self.n_subcarriers)

    def active_ranks(self) -> np.ndarray:
        """
        Ranks that carry a positive rate in at least one trial.
        """
        return np.flatnonzero((self.rates > 0).any(axis=0))


def optimal_effective_capacity(g_hat_trials: np.ndarray, total_power: float, alpha: float) -> float:
    """
    Effective capacity of all N subcarriers under the delay-constrained optimal policy, with the cutoff
    solved per trial from the power constraint.
    :param g_hat_trials: (trials x N) estimated gains
    :param total_power: sum-power budget per trial
    :param alpha: normalized delay exponent, > 0
    :return: E_C^opt
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    gains = np.atleast_2d(np.asarray(g_hat_trials, dtype=float))
    powers = np.vstack([effective_power_allocation(row, total_power, alpha).powers for row in gains])
    value = effective_rate(np.log2(1.0 + gains * powers), gains.shape[1], alpha)
    logger.debug("E_C^opt={:.6g} over {} trials at alpha={:.4g}", value, gains.shape[0], alpha)
    return value


def delay_outage(theta: float, arrival_rate: float, d_max: float, p_nonempty: float) -> float:
    """
    Delay-outage approximation Pr[Q > 0] * exp(-theta * zeta * D_max).
    """
    if min(theta, arrival_rate, d_max) < 0:
        raise ValueError("theta, arrival rate and delay bound must be non-negative")
    if not 0 <= p_nonempty <= 1:
        raise ValueError(f"p_nonempty must lie in [0, 1], got {p_nonempty}")
    return p_nonempty * math.exp(-theta * arrival_rate * d_max)
