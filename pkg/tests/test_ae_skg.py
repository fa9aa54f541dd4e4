import numpy as np
import pytest

from src_common.common_utils import FrameDecodeError
from src_sim.ae_skg import (
    TAG_BYTES,
    ExtendedCiphertext,
    OpenError,
    SealingSession,
    open_extended,
    open_with_key,
    seal,
    sign,
    verify,
)
from src_sim.channel_model import ChannelConfig, sample_channel
from src_sim.experiments import flip_bit
from src_sim.puf_auth import PufDevice, Verifier
from src_sim.skg_protocol import (
    AmplificationBudget,
    KeyMaterial,
    ResumptionState,
    encode_syndrome,
    resumption_generate,
    skg_generate,
    syndrome_length,
)

KEY_BITS = 256


@pytest.fixture
def key(rng) -> KeyMaterial:
    return KeyMaterial(k_e=rng.bytes(16), k_i=rng.bytes(16), total_len_bits=KEY_BITS)


@pytest.fixture
def budget(hamming) -> AmplificationBudget:
    return AmplificationBudget.from_lengths(512, syndrome_length(512, hamming))


def test_sign_and_verify(rng):
    k_i, data = rng.bytes(16), rng.bytes(40)
    tag = sign(k_i, data)
    assert len(tag) == TAG_BYTES
    assert verify(k_i, data, tag)
    assert not verify(k_i, data, flip_bit(tag, 5))
    assert not verify(rng.bytes(16), data, tag)


def test_round_trip(key):
    sealed = seal(key, b"attack at dawn", encode_syndrome(np.ones(9, dtype=np.uint8)))
    assert open_with_key(key, sealed).plaintext == b"attack at dawn"
    assert open_with_key(key, sealed.to_bytes()).plaintext == b"attack at dawn"


def test_empty_message(key):
    sealed = seal(key, b"", encode_syndrome(np.zeros(3, dtype=np.uint8)))
    assert sealed.ciphertext == b""
    assert len(sealed.tag) == TAG_BYTES
    outcome = open_with_key(key, sealed)
    assert outcome.ok
    assert outcome.plaintext == b""


def test_fresh_nonces_change_the_ciphertext(key):
    session = SealingSession(key, encode_syndrome(np.zeros(3, dtype=np.uint8)))
    first, second = session.seal(b"same message"), session.seal(b"same message")
    assert first.ciphertext != second.ciphertext
    assert open_with_key(key, second, sequence=1).plaintext == b"same message"
    assert not open_with_key(key, second, sequence=0).ok


def test_many_random_round_trips(rng):
    for _ in range(500):
        key = KeyMaterial(k_e=rng.bytes(16), k_i=rng.bytes(16), total_len_bits=KEY_BITS)
        message = rng.bytes(int(rng.integers(0, 64)))
        sealed = seal(key, message, encode_syndrome(rng.integers(0, 2, size=21, dtype=np.uint8)), rng.bytes(4))
        assert open_with_key(key, sealed.to_bytes(), assoc_data=sealed.assoc_data).plaintext == message


def test_every_single_bit_flip_is_rejected(key):
    # 4 + 6 + 4 + 18 + 32 = 64 bytes on the wire
    wire = seal(key, bytes(range(18)), encode_syndrome(np.ones(9, dtype=np.uint8))).to_bytes()
    assert len(wire) == 64
    for bit in range(8 * len(wire)):
        outcome = open_with_key(key, flip_bit(wire, bit))
        assert outcome.error is OpenError.INTEGRITY_FAILURE
        assert outcome.plaintext is None


def test_associated_data_is_authenticated(key):
    sealed = seal(key, b"resumed", encode_syndrome(np.zeros(3, dtype=np.uint8)), b"lookup-id")
    assert open_with_key(key, sealed.to_bytes(), assoc_data=b"lookup-id").ok
    assert not open_with_key(key, sealed.to_bytes(), assoc_data=b"other-id").ok


@pytest.mark.parametrize("wire", [b"", b"\x00\x00\x00\x05ab", bytes(8) + bytes(TAG_BYTES - 1)])
def test_malformed_frames(wire):
    with pytest.raises(FrameDecodeError):
        ExtendedCiphertext.from_bytes(wire)


def test_open_extended_recovers_the_message(protocol_channel, hamming, budget):
    failures = 0
    for trial in range(100):
        realization = sample_channel(protocol_channel, trial)
        key, syndrome = skg_generate(realization.obs_alice, hamming, budget, KEY_BITS)
        wire = seal(key, b"frame payload", encode_syndrome(syndrome)).to_bytes()
        outcome = open_extended(realization.obs_bob, hamming, budget, wire, KEY_BITS)
        if outcome.ok:
            assert outcome.plaintext == b"frame payload"
        else:
            failures += 1
    assert failures <= 5


def test_wrong_receiver_fails(protocol_channel, hamming, budget):
    for trial in range(50):
        realization = sample_channel(protocol_channel, trial)
        key, syndrome = skg_generate(realization.obs_alice, hamming, budget, KEY_BITS)
        wire = seal(key, b"for bob only", encode_syndrome(syndrome)).to_bytes()
        outcome = open_extended(realization.obs_eve, hamming, budget, wire, KEY_BITS)
        assert not outcome.ok
        assert outcome.plaintext is None


def test_tampered_syndrome_is_caught(hamming, budget):
    realization = sample_channel(ChannelConfig(n_subcarriers=256, pilot_power=1e12, master_seed=4), 0)
    key, syndrome = skg_generate(realization.obs_alice, hamming, budget, KEY_BITS)
    wire = seal(key, b"payload", encode_syndrome(syndrome)).to_bytes()
    for bit in range(32, 32 + 8 * len(encode_syndrome(syndrome))):
        outcome = open_extended(realization.obs_bob, hamming, budget, flip_bit(wire, bit), KEY_BITS)
        assert outcome.error is OpenError.INTEGRITY_FAILURE


def test_reconciliation_failure_is_reported(extended_hamming):
    budget = AmplificationBudget.from_lengths(512, syndrome_length(512, extended_hamming))
    realization = sample_channel(ChannelConfig(n_subcarriers=256, pilot_power=1e12, master_seed=4), 0)
    key, syndrome = skg_generate(realization.obs_alice, extended_hamming, budget, KEY_BITS)
    # two flipped bits in the first syndrome block look like a double error, which the extended code detects
    syndrome[:2] ^= 1
    wire = seal(key, b"payload", encode_syndrome(syndrome)).to_bytes()
    outcome = open_extended(realization.obs_bob, extended_hamming, budget, wire, KEY_BITS)
    assert outcome.error is OpenError.RECONCILIATION_FAILURE
    assert outcome.plaintext is None


def test_resumed_session_opens_with_the_matching_state(rng, hamming, budget):
    cfg = ChannelConfig(n_subcarriers=256, pilot_power=1e12, master_seed=6)
    session_key, _ = skg_generate(sample_channel(cfg, 0).obs_alice, hamming, budget, KEY_BITS)
    state_alice = ResumptionState.issue(session_key, 512, rng)
    state_bob = ResumptionState.derive(session_key, state_alice.lookup_id, 512)
    wrong_state = ResumptionState.derive(session_key, rng.bytes(16), 512)

    second = sample_channel(cfg, 1)
    key, syndrome = resumption_generate(second.obs_alice, hamming, budget, KEY_BITS, state_alice)
    wire = seal(key, b"0-rtt", encode_syndrome(syndrome), state_alice.lookup_id).to_bytes()
    rejected = open_extended(
        second.obs_bob, hamming, budget, wire, KEY_BITS, state_alice.lookup_id, resumption_state=wrong_state
    )
    accepted = open_extended(
        second.obs_bob, hamming, budget, wire, KEY_BITS, state_alice.lookup_id, resumption_state=state_bob
    )
    assert not rejected.ok
    assert accepted.plaintext == b"0-rtt"


@pytest.mark.slow
def test_authenticated_sessions_end_to_end(crp_db, protocol_channel, hamming, budget):
    verifier = Verifier(crp_db, hamming, seed=21)
    device = PufDevice("node-e2e", seed=22)
    sessions, aborted = 10_000, 0
    for trial in range(sessions):
        verifier.enroll(device, 1)
        if not verifier.authenticate(device):
            aborted += 1
            continue
        realization = sample_channel(protocol_channel, trial)
        key, syndrome = skg_generate(realization.obs_alice, hamming, budget, KEY_BITS)
        message = trial.to_bytes(4, "big") * 8
        wire = seal(key, message, encode_syndrome(syndrome)).to_bytes()
        outcome = open_extended(realization.obs_bob, hamming, budget, wire, KEY_BITS)
        if not outcome.ok:
            aborted += 1
            continue
        assert outcome.plaintext == message
    assert aborted <= sessions // 100
    assert crp_db.count_unused(device.device_id) == 0
