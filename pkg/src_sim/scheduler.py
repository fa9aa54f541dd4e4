"""
Subcarrier scheduling: split the ranks into the data set D and the reconciliation set D-breve.

Long-term regime: subset-sum knapsack max sum_{j in D} R_j s.t. sum_{j in D} R_j <= C / (1 + kappa beta),
solved exactly by dynamic programming on a fixed-point grid, greedily in one linear pass, or by brute force
as an oracle. Effective-rate regime: the same greedy pass with the constraint evaluated on effective
throughputs, and a cardinality-indexed knapsack, both against N E_C^opt / (1 + kappa beta). Ranks with zero
rate never join D.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from src_common.common_utils import OracleSizeError, SchedulingError, global_config
from src_sim.channel_model import ChannelRealization
from src_sim.power_allocation import PowerPolicy
from src_sim.rate_metrics import ExpectationPool

BRUTEFORCE_LIMIT = 20
GRID_SLACK = 1e-9
FEASIBILITY_SLACK = 1e-9


class SecurityParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    kappa: float = Field(ge=1)
    beta: float = Field(gt=0, le=1)


@dataclass(frozen=True)
class Allocation:
    """
    Partition of the ranks with the rates it was decided on. achieved is the sum of rates over data_set.
    data_feasible is False when no rank could be assigned to data under the constraint.
    """

    data_set: tuple[int, ...]
    recon_set: tuple[int, ...]
    rates: np.ndarray
    budget: float
    achieved: float
    data_feasible: bool = True

    @classmethod
    def from_selection(cls, rates: np.ndarray, selected, budget: float) -> "Allocation":
        rates = np.asarray(rates, dtype=float)
        data_set = tuple(sorted(int(i) for i in selected))
        chosen = set(data_set)
        recon_set = tuple(i for i in range(rates.size) if i not in chosen)
        achieved = float(rates[list(data_set)].sum()) if data_set else 0.0
        return cls(data_set=data_set, recon_set=recon_set, rates=rates, budget=budget, achieved=achieved)

    @property
    def size(self) -> int:
        return len(self.data_set)


def knapsack_budget(capacity: float, params: SecurityParams) -> float:
    """
    Combined security and reconciliation constraint on the data rate, C / (1 + kappa beta).
    """
    if capacity < 0:
        raise ValueError(f"capacity must be non-negative, got {capacity}")
    return capacity / (1.0 + params.kappa * params.beta)


def _grid_weights(rates: np.ndarray, resolution: float) -> list[int]:
    # weights rounded up, so a set fitting on the grid fits the real budget
    return [max(0, math.ceil(r / resolution - GRID_SLACK)) for r in rates]


def _grid_capacity(budget: float, resolution: float) -> int:
    return math.floor(budget / resolution + GRID_SLACK)


def _check_inputs(rates, budget: float) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if budget < 0:
        raise SchedulingError(f"knapsack budget must be non-negative, got {budget}")
    if np.any(rates < 0):
        raise SchedulingError("rates must be non-negative")
    return rates


def _subset_sum(weights: list[int], capacity: int) -> tuple[int, list[int]]:
    """
    Exact subset sum on integer weights. Reachable sums are kept as bits of a Python integer; the sets
    reachable before each item are kept for the backtrace.
    """
    mask = (1 << (capacity + 1)) - 1
    reachable = 1
    history = []
    for weight in weights:
        history.append(reachable)
        reachable |= (reachable << weight) & mask
    best = reachable.bit_length() - 1
    chosen, target = [], best
    for index in range(len(weights) - 1, -1, -1):
        if (history[index] >> target) & 1:
            continue
        chosen.append(index)
        target -= weights[index]
    return best, chosen


def solve_dp(rates: np.ndarray, budget: float, resolution: float = global_config["DP_RESOLUTION"]) -> Allocation:
    """
    Optimal subset sum on a fixed-point grid: weights are rounded up and the budget down.
    :param rates: per-rank rates R_j
    :param budget: knapsack capacity
    :param resolution: grid step in bits/s/Hz
    :return: Allocation
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    rates = _check_inputs(rates, budget)
    if rates.sum() <= budget:
        return Allocation.from_selection(rates, np.flatnonzero(rates > 0), budget)
    best, chosen = _subset_sum(_grid_weights(rates, resolution), _grid_capacity(budget, resolution))
    allocation = Allocation.from_selection(rates, chosen, budget)
    logger.trace("DP filled {} of {} grid units with {} items", best, _grid_capacity(budget, resolution), len(chosen))
    return allocation


def solve_greedy(rates: np.ndarray, budget: float) -> Allocation:
    """
    Single left-to-right pass over all ranks: an item stays in D iff the running sum remains within budget.
    Rates are expected in non-increasing order. Ranks with zero rate carry nothing and stay in the
    reconciliation set.
    """
    rates = _check_inputs(rates, budget)
    if np.any(np.diff(rates) > 0):
        logger.debug("Greedy pass called on rates that are not sorted descending")
    selected, running = [], 0.0
    for index, rate in enumerate(rates):
        if rate > 0 and running + rate <= budget:
            selected.append(index)
            running += rate
    return Allocation.from_selection(rates, selected, budget)


def solve_bruteforce(rates: np.ndarray, budget: float, resolution: float | None = None) -> Allocation:
    """
    Exhaustive oracle over all 2^N subsets. With a resolution the search runs on the same grid as solve_dp.
    """
    rates = _check_inputs(rates, budget)
    if rates.size > BRUTEFORCE_LIMIT:
        raise OracleSizeError(rates.size, BRUTEFORCE_LIMIT)
    if rates.sum() <= budget:
        return Allocation.from_selection(rates, np.flatnonzero(rates > 0), budget)
    if resolution is None:
        values, limit = rates, budget
    else:
        values = np.array(_grid_weights(rates, resolution), dtype=np.int64)
        limit = _grid_capacity(budget, resolution)
    sums = np.zeros(1, dtype=values.dtype)
    for value in values:
        sums = np.concatenate([sums, sums + value])
    best_mask = int(np.argmax(np.where(sums <= limit, sums, -1)))
    selected = [index for index in range(rates.size) if best_mask >> index & 1]
    return Allocation.from_selection(rates, selected, budget)


def _single_trial_pool(realization: ChannelRealization, policy: PowerPolicy, alpha: float) -> ExpectationPool:
    return ExpectationPool.from_trials(realization.g_hat[np.newaxis, :], policy.powers[np.newaxis, :], alpha)


def effective_budget(pool: ExpectationPool, params: SecurityParams, e_opt: float | None = None) -> float:
    """
    Throughput budget N E_C^opt / (1 + kappa beta) for sum_{i in D} tau_i(|D|). Without e_opt the whole
    frame of the pool is taken as the optimal effective capacity.
    """
    if e_opt is None:
        e_opt = pool.frame_rate(range(pool.n_subcarriers))
    if e_opt < 0:
        raise ValueError(f"e_opt must be non-negative, got {e_opt}")
    return pool.n_subcarriers * e_opt / (1.0 + params.kappa * params.beta)


def _effective_partition(pool: ExpectationPool, data: list[int]) -> tuple[float, float, np.ndarray]:
    """
    Data and syndrome throughputs of a partition, each side evaluated at its own set size.
    """
    n = pool.n_subcarriers
    in_data = np.zeros(n, dtype=bool)
    in_data[data] = True
    rates = np.zeros(n)
    if in_data.any():
        rates[in_data] = pool.throughputs(int(in_data.sum()))[in_data]
    if (~in_data).any():
        rates[~in_data] = pool.throughputs(int((~in_data).sum()))[~in_data]
    return float(rates[in_data].sum()), float(rates[~in_data].sum()), rates


def _effective_allocation(pool: ExpectationPool, data, budget: float) -> Allocation:
    data = sorted(int(i) for i in data)
    data_throughput, _, rates = _effective_partition(pool, data)
    chosen = set(data)
    return Allocation(
        data_set=tuple(data),
        recon_set=tuple(i for i in range(pool.n_subcarriers) if i not in chosen),
        rates=rates,
        budget=budget,
        achieved=data_throughput,
        data_feasible=bool(data),
    )


def solve_greedy_effective(
    realization: ChannelRealization | None,
    policy: PowerPolicy | None,
    params: SecurityParams,
    alpha: float,
    mc_expectations: ExpectationPool | None = None,
) -> Allocation:
    """
    Greedy pass of the long-term heuristic in throughput units: a rank joins D iff
    sum_{i in D} tau_i(|D|) stays within N E_C^opt / (1 + kappa beta). The sum is re-evaluated for every
    candidate since tau depends on |D|. At least one rank always stays in the reconciliation set, and ranks
    that never carry a rate are not assigned to data.
    :param realization: channel draw, used to build a one-trial pool when mc_expectations is not given
    :param policy: powers of the draw, fixed by the delay-constrained policy
    :param params: kappa and beta
    :param alpha: normalized delay exponent
    :param mc_expectations: shared pool of rates; every partition is judged on the same draws
    :return: Allocation with effective throughputs as rates and achieved = sum_{i in D} tau_i(|D|)
    """
    pool = mc_expectations
    if pool is None:
        if realization is None or policy is None:
            raise SchedulingError("either a realization with its policy or an expectation pool is required")
        pool = _single_trial_pool(realization, policy, alpha)
    n = pool.n_subcarriers
    budget = effective_budget(pool, params)
    data: list[int] = []
    for rank in pool.active_ranks():
        candidate = data + [int(rank)]
        if len(candidate) == n:
            break
        data_throughput, _, _ = _effective_partition(pool, candidate)
        if data_throughput <= budget * (1.0 + FEASIBILITY_SLACK):
            data = candidate
    if not data:
        logger.debug("No rank fits the effective-rate constraint at alpha={:.4g}", alpha)
    return _effective_allocation(pool, data, budget)


def _exact_count_subset_sum(weights: list[int], capacity: int, count: int) -> tuple[int, list[int]] | None:
    """
    Best subset sum within capacity using exactly count items, or None when no such subset fits.
    """
    n = len(weights)
    mask = (1 << (capacity + 1)) - 1
    reachable = [0] * (count + 1)
    reachable[0] = 1
    history = []
    for index, weight in enumerate(weights):
        # only counts that can still be completed to `count` by the remaining items matter for the backtrace
        lowest = max(0, count - (n - index))
        history.append({c: reachable[c] for c in range(lowest, min(index, count) + 1)})
        for c in range(min(index + 1, count), 0, -1):
            reachable[c] |= (reachable[c - 1] << weight) & mask
    best = reachable[count].bit_length() - 1
    if best < 0:
        return None
    chosen, target, remaining = [], best, count
    for index in range(n - 1, -1, -1):
        if remaining == 0:
            break
        if (history[index].get(remaining, 0) >> target) & 1:
            continue
        chosen.append(index)
        target -= weights[index]
        remaining -= 1
    return best, chosen


def solve_dp_effective(
    pool: ExpectationPool,
    params: SecurityParams,
    e_opt: float,
    resolution: float = global_config["EFFECTIVE_DP_RESOLUTION"],
) -> Allocation:
    """
    Knapsack for the effective-rate regime, assuming E_{C,D} + E_{C,D'} = E_C^opt holds with equality.
    For every data-set size d the per-rank throughputs tau_i(d) of the active ranks are packed, with exactly
    d items, against N E_C^opt / (1 + kappa beta); the size giving the largest data throughput wins.
    :param pool: shared pool of rates under the delay-constrained policy
    :param params: kappa and beta
    :param e_opt: optimal effective capacity of the N subcarriers, in rate per subcarrier of the frame
    :param resolution: grid step for the throughputs
    :return: Allocation with effective throughputs as rates and achieved = sum_{i in D} tau_i(|D|)
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    n = pool.n_subcarriers
    budget = effective_budget(pool, params, e_opt)
    capacity = _grid_capacity(budget, resolution)
    active = pool.active_ranks()
    best_value, best_set = 0.0, []
    for size in range(1, min(active.size, n - 1) + 1):
        throughputs = pool.throughputs(size)[active]
        ordered = np.sort(throughputs)
        if ordered[:size].sum() > budget:
            break
        if ordered[-size:].sum() <= budget:
            chosen = list(np.argsort(-throughputs, kind="stable")[:size])
        else:
            solution = _exact_count_subset_sum(_grid_weights(throughputs, resolution), capacity, size)
            if solution is None:
                continue
            chosen = solution[1]
        value = float(throughputs[chosen].sum())
        if value > best_value:
            best_value, best_set = value, [int(active[i]) for i in chosen]
    return _effective_allocation(pool, best_set, budget)


def solve_bruteforce_effective(pool: ExpectationPool, params: SecurityParams, e_opt: float) -> Allocation:
    """
    Exhaustive oracle for solve_dp_effective: every data set with a non-empty reconciliation set is tried.
    """
    n = pool.n_subcarriers
    if n > BRUTEFORCE_LIMIT:
        raise OracleSizeError(n, BRUTEFORCE_LIMIT)
    budget = effective_budget(pool, params, e_opt)
    best_value, best_set = 0.0, ()
    for size in range(1, n):
        throughputs = pool.throughputs(size)
        for subset in itertools.combinations(range(n), size):
            value = float(throughputs[list(subset)].sum())
            if value <= budget * (1.0 + FEASIBILITY_SLACK) and value > best_value:
                best_value, best_set = value, subset
    return _effective_allocation(pool, best_set, budget)
