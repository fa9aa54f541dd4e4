import numpy as np
import pytest

from src_common.database import CrpDatabase
from src_sim.channel_model import ChannelConfig
from src_sim.codes import ExtendedHammingCode, HammingCode


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def hamming() -> HammingCode:
    return HammingCode()


@pytest.fixture
def extended_hamming() -> ExtendedHammingCode:
    return ExtendedHammingCode()


@pytest.fixture
def protocol_channel() -> ChannelConfig:
    """
    Default protocol operating point: 50 dB pilot SNR on 256 subcarriers.
    """
    return ChannelConfig(n_subcarriers=256, pilot_power=1e5, master_seed=7)


@pytest.fixture
def crp_db():
    with CrpDatabase() as db:
        yield db
