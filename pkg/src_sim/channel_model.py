"""
Rayleigh block-fading AWGN channel with imperfect channel estimation.

Each coherence block draws N independent subcarrier coefficients. Alice and Bob observe the same
coefficients through independent unit-variance noise, Eve observes an independent channel. Alice's
estimates are ranked by estimated gain, strongest first; all rank-indexed quantities in this package use
that descending order with zero-based ranks.
"""

from dataclasses import dataclass

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import gammaln

STREAM_CHANNEL = 0
STREAM_PROTOCOL = 1
STREAM_PUF = 2
STREAM_NONCE = 3


def trial_rng(master_seed: int, trial_index: int, stream: int = STREAM_CHANNEL) -> np.random.Generator:
    """
    Counter-based generator for one trial: the stream is a pure function of (master_seed, trial_index, stream),
    so trials can be evaluated in any order or on any worker and still draw identical numbers.
    :param master_seed: experiment seed
    :param trial_index: Monte Carlo trial counter
    :param stream: independent sub-stream of the trial (channel, protocol randomness, ...)
    :return: seeded numpy generator
    """
    if trial_index < 0:
        raise ValueError(f"trial_index must be non-negative, got {trial_index}")
    seed_sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial_index, stream))
    return np.random.Generator(np.random.PCG64(seed_sequence))


def complex_gaussian(rng: np.random.Generator, variance: float, size: int) -> np.ndarray:
    """
    Circularly symmetric zero-mean complex Gaussian samples with the given total variance.
    """
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


class ChannelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_subcarriers: int = Field(ge=1)
    pilot_power: float = Field(gt=0)
    gain_variance: float = Field(default=1.0, gt=0)
    est_error_variance: float = Field(default=0.0, ge=0)
    master_seed: int = Field(default=0, ge=0, lt=2**64)


@dataclass(frozen=True)
class ChannelRealization:
    """
    One coherence-block draw.

    h, h_hat and the observations are in natural subcarrier order; g_hat is sorted descending and
    g_hat[r] belongs to subcarrier perm[r].
    """

    h: np.ndarray
    h_hat: np.ndarray
    g_hat: np.ndarray
    obs_alice: np.ndarray
    obs_bob: np.ndarray
    obs_eve: np.ndarray
    perm: np.ndarray
    h_eve: np.ndarray

    @property
    def n_subcarriers(self) -> int:
        return self.h.size

    def unsorted_gains(self) -> np.ndarray:
        """
        Applies the inverse permutation, returning the estimated gains in subcarrier order.
        """
        gains = np.empty_like(self.g_hat)
        gains[self.perm] = self.g_hat
        return gains


def sample_channel(cfg: ChannelConfig, trial_index: int) -> ChannelRealization:
    """
    Draws the channel of one trial. Deterministic given (cfg.master_seed, trial_index).
    :param cfg: channel configuration
    :param trial_index: Monte Carlo trial counter, >= 0
    :return: ChannelRealization
    """
    rng = trial_rng(cfg.master_seed, trial_index, STREAM_CHANNEL)
    n = cfg.n_subcarriers
    amplitude = np.sqrt(cfg.pilot_power)

    h = complex_gaussian(rng, cfg.gain_variance, n)
    h_err = complex_gaussian(rng, cfg.est_error_variance, n)
    z_alice = complex_gaussian(rng, 1.0, n)
    z_bob = complex_gaussian(rng, 1.0, n)
    h_eve = complex_gaussian(rng, cfg.gain_variance, n)
    z_eve = complex_gaussian(rng, 1.0, n)

    h_hat = h + h_err
    gains = np.abs(h_hat) ** 2 / (cfg.est_error_variance * cfg.pilot_power + 1.0)
    perm = np.argsort(-gains, kind="stable")
    logger.trace("Trial {} drawn, strongest estimated gain {:.4f}", trial_index, gains[perm[0]])

    return ChannelRealization(
        h=h,
        h_hat=h_hat,
        g_hat=gains[perm],
        obs_alice=amplitude * h + z_alice,
        obs_bob=amplitude * h + z_bob,
        obs_eve=amplitude * h_eve + z_eve,
        perm=perm,
        h_eve=h_eve,
    )


class OrderStatsModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    sigma2: float = Field(gt=0)

    @property
    def per_rank_variance(self) -> np.ndarray:
        return ordered_variance(self.n, self.sigma2)


def ordered_variance(n: int, sigma2: float) -> np.ndarray:
    """
    Variance of the gain at each descending rank: sigma_j^2 = sigma^2 * sum_{q=j}^{n} 1/q^2.
    :param n: number of subcarriers
    :param sigma2: variance of the unordered gains
    :return: vector of length n, index 0 is the strongest rank
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    inverse_squares = 1.0 / np.arange(1, n + 1, dtype=float) ** 2
    return sigma2 * np.cumsum(inverse_squares[::-1])[::-1]


def order_stat_pdf(n: int, j: int, sigma2: float, g: float) -> float:
    """
    Density of the j-th largest of n i.i.d. exponential gains with mean sigma2, j counted from 1:
    n! / (sigma2 (n-j)! (j-1)!) * (1 - e^{-g/sigma2})^{n-j} * e^{-j g/sigma2}.
    """
    if not 1 <= j <= n:
        raise ValueError(f"rank j={j} outside 1..{n}")
    if g < 0:
        raise ValueError(f"gain must be non-negative, got {g}")
    x = g / sigma2
    log_norm = gammaln(n + 1) - gammaln(n - j + 1) - gammaln(j) - np.log(sigma2)
    log_body = -j * x
    if n > j:
        log_body += (n - j) * np.log1p(-np.exp(-x)) if x > 0 else -np.inf
    return float(np.exp(log_norm + log_body))


def skg_rate(power: float, rank_variances: np.ndarray, skg_ranks) -> float:
    """
    Secret key rate of the given ranks: sum of log2(1 + P s / (2 + 1/(P s))) with s the rank variance.
    Passing [sigma^2] * N and all ranks gives the sequential (unordered) rate.
    :param power: pilot power P
    :param rank_variances: per-rank gain variances
    :param skg_ranks: iterable of zero-based ranks used for key generation
    :return: rate in bits per channel use
    """
    if power <= 0:
        raise ValueError(f"power must be positive, got {power}")
    ranks = np.fromiter(skg_ranks, dtype=int)
    if ranks.size == 0:
        return 0.0
    snr = power * np.asarray(rank_variances, dtype=float)[ranks]
    return float(np.sum(np.log2(1.0 + snr**2 / (2.0 * snr + 1.0))))
