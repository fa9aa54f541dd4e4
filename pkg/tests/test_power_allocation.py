import numpy as np
import pytest

from src_common.common_utils import NoUsableSubcarrierError
from src_sim.power_allocation import (
    Regime,
    capacity,
    effective_objective,
    effective_power_allocation,
    subcarrier_rates,
    waterfilling,
)


def test_waterfilling_two_subcarriers():
    policy = waterfilling(np.array([4.0, 1.0]), 2.0)
    np.testing.assert_allclose(policy.powers, [1.375, 0.625])
    assert policy.multiplier == pytest.approx(1 / 1.625)
    assert policy.regime is Regime.WATERFILLING


def test_waterfilling_drops_weak_subcarrier():
    policy = waterfilling(np.array([10.0, 0.01]), 1.0)
    np.testing.assert_allclose(policy.powers, [1.0, 0.0])
    assert policy.active.tolist() == [True, False]


def test_zero_gains_get_no_power():
    policy = waterfilling(np.array([2.0, 0.0, 1.0]), 3.0)
    assert policy.powers[1] == 0.0
    assert policy.powers.sum() == pytest.approx(3.0)


def test_no_usable_subcarrier():
    with pytest.raises(NoUsableSubcarrierError, match="no usable subcarrier"):
        waterfilling(np.zeros(4), 1.0)


@pytest.mark.parametrize("total_power", [0.0, -1.0])
def test_power_budget_must_be_positive(total_power):
    with pytest.raises(ValueError):
        waterfilling(np.ones(3), total_power)


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 5.0, 200.0])
def test_power_conservation(rng, alpha):
    for _ in range(20):
        gains = rng.exponential(1.0, size=24)
        for policy in (waterfilling(gains, 240.0), effective_power_allocation(gains, 240.0, alpha)):
            assert policy.powers.sum() == pytest.approx(240.0, rel=1e-9)
            assert np.all(policy.powers >= 0)


def test_small_alpha_matches_waterfilling(rng):
    for _ in range(100):
        gains = rng.uniform(0.1, 3.0, size=24)
        reference = waterfilling(gains, 240.0)
        policy = effective_power_allocation(gains, 240.0, 1e-6)
        np.testing.assert_allclose(policy.powers, reference.powers, rtol=1e-3, atol=1e-4)


def test_large_alpha_inverts_the_channel(rng):
    for _ in range(100):
        gains = rng.uniform(0.1, 3.0, size=24)
        policy = effective_power_allocation(gains, 240.0, 1e6)
        received = policy.powers[policy.active] * gains[policy.active]
        assert np.ptp(received) <= 1e-3 * received.mean()


def test_effective_policy_minimizes_objective(rng):
    gains = rng.exponential(1.0, size=12)
    optimal = effective_power_allocation(gains, 12.0, 2.0)
    uniform = np.full(12, 1.0)
    assert effective_objective(gains, optimal.powers, 2.0) <= effective_objective(gains, uniform, 2.0) + 1e-12
    assert effective_objective(gains, optimal.powers, 2.0) <= effective_objective(
        gains, waterfilling(gains, 12.0).powers, 2.0
    ) * (1 + 1e-12)
    assert optimal.regime is Regime.EFFECTIVE_CAPACITY


def test_effective_policy_rejects_non_positive_alpha():
    with pytest.raises(ValueError):
        effective_power_allocation(np.ones(3), 1.0, 0.0)


def test_capacity_and_rates():
    gains = np.array([4.0, 1.0])
    policy = waterfilling(gains, 2.0)
    rates = subcarrier_rates(gains, policy)
    np.testing.assert_allclose(rates, np.log2(1 + gains * policy.powers))
    assert capacity(gains, policy) == pytest.approx(rates.sum())
    with pytest.raises(ValueError):
        subcarrier_rates(np.ones(3), policy)
