"""
Simulated PUF and verifier: enrolment of single-use challenge-response pairs and authentication through the
same quantize / syndrome / hash chain the key generation uses.
"""

import threading

import numpy as np
from cryptography.hazmat.primitives import constant_time, hashes
from loguru import logger

from src_common.common_utils import CrpRecord, FrameDecodeError, ReconciliationError, global_config
from src_common.database import CrpDatabase
from src_sim.channel_model import STREAM_PUF, complex_gaussian, trial_rng
from src_sim.codes import LinearBlockCode
from src_sim.skg_protocol import (
    AmplificationBudget,
    KeyMaterial,
    QuantizedVector,
    QuantizerConfig,
    compute_syndrome,
    decode_syndrome,
    encode_syndrome,
    privacy_amplify,
    quantize,
    reconcile,
)

DIGEST_DOMAIN = b"skg-sim/crp-digest/v1"
CHALLENGE_BYTES = 16
PUF_KEY_BITS = 128


def _sha256(*parts: bytes) -> bytes:
    digest = hashes.Hash(hashes.SHA256())
    for part in parts:
        digest.update(part)
    return digest.finalize()


class PufDevice:
    """
    Device whose response to a challenge is a fixed latent complex Gaussian vector, observed through
    per-measurement Gaussian noise. The latent vector is a function of the device seed and the challenge only.
    """

    def __init__(
        self,
        device_id: str,
        seed: int,
        noise_sigma: float = global_config["PUF_NOISE_SIGMA"],
        response_length: int = global_config["PUF_RESPONSE_LENGTH"],
    ):
        if noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {noise_sigma}")
        if response_length < 1:
            raise ValueError(f"response_length must be positive, got {response_length}")
        self.device_id = device_id
        self.noise_sigma = noise_sigma
        self.response_length = response_length
        self._seed = seed
        self._noise_rng = trial_rng(seed, 0, STREAM_PUF)
        self._lock = threading.Lock()

    def latent(self, challenge: bytes) -> np.ndarray:
        challenge_word = int.from_bytes(_sha256(challenge)[:16], "big")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self._seed, challenge_word])))
        return complex_gaussian(rng, 1.0, self.response_length)

    def measure(self, challenge: bytes) -> np.ndarray:
        """
        Noisy response: latent + sigma * (N(0,1) + j N(0,1)).
        """
        with self._lock:
            noise = self._noise_rng.standard_normal((2, self.response_length))
        return self.latent(challenge) + self.noise_sigma * (noise[0] + 1j * noise[1])


def key_digest(key: KeyMaterial) -> bytes:
    return _sha256(DIGEST_DOMAIN, key.key)


def _erasures(record: CrpRecord, n_components: int) -> np.ndarray:
    """
    Guard-band mask the verifier recorded at enrolment; an empty mask means no erasures.
    """
    if not record.erasure_mask:
        return np.zeros(n_components, dtype=bool)
    mask = decode_syndrome(record.erasure_mask).astype(bool)
    if mask.size != n_components:
        raise FrameDecodeError(f"erasure mask covers {mask.size} components, the response has {n_components}")
    return mask


def _amplified(bits: QuantizedVector, syndrome_bits: int, key_len: int) -> KeyMaterial:
    budget = AmplificationBudget.from_lengths(len(bits), syndrome_bits)
    return privacy_amplify(bits, budget, key_len, syndrome_bits)


def enroll(
    device: PufDevice,
    n_challenges: int,
    code: LinearBlockCode,
    quantizer_cfg: QuantizerConfig,
    rng: np.random.Generator,
    key_len: int = PUF_KEY_BITS,
) -> list[CrpRecord]:
    """
    Runs random challenges on the device's latent response (noiseless enrolment) and keeps, per challenge,
    the helper data, the guard-band erasure mask and the digest of the amplified key.
    :param device: device being enrolled
    :param n_challenges: number of CRPs, at least 1
    :param code: reconciliation code used as secure sketch
    :param quantizer_cfg: quantizer settings; guard-band positions are kept by the verifier, outside the helper data
    :param rng: verifier's generator drawing challenges
    :param key_len: authentication key length in bits
    :return: list of CrpRecord
    """
    if n_challenges < 1:
        raise ValueError(f"n_challenges must be at least 1, got {n_challenges}")
    records = []
    for _ in range(n_challenges):
        challenge = rng.bytes(CHALLENGE_BYTES)
        quantized = quantize(device.latent(challenge), quantizer_cfg.guard_band)
        bits = quantized.without(quantized.erasures)
        syndrome = compute_syndrome(bits, code)
        key = _amplified(bits, syndrome.size, key_len)
        records.append(
            CrpRecord(
                challenge=challenge,
                helper_data=encode_syndrome(syndrome),
                key_digest=key_digest(key),
                erasure_mask=encode_syndrome(quantized.erasures.astype(np.uint8)),
            )
        )
    logger.debug("Enrolled {} CRPs for device {}", n_challenges, device.device_id)
    return records


class Verifier:
    """
    Holds the CRP database and runs the authentication phase. Every issued CRP is deleted whatever the outcome.
    """

    def __init__(
        self,
        db: CrpDatabase,
        code: LinearBlockCode,
        quantizer_cfg: QuantizerConfig | None = None,
        key_len: int = PUF_KEY_BITS,
        seed: int = 0,
    ):
        self.db = db
        self.code = code
        self.quantizer_cfg = quantizer_cfg or QuantizerConfig()
        self.key_len = key_len
        self.rng = trial_rng(seed, 1, STREAM_PUF)

    def enroll(self, device: PufDevice, n_challenges: int) -> list[CrpRecord]:
        records = enroll(device, n_challenges, self.code, self.quantizer_cfg, self.rng, self.key_len)
        self.db.insert_records(device.device_id, records)
        return records

    def issue_challenge(self, device_id: str) -> CrpRecord:
        """
        Pops a random unused CRP.
        :raises EnrolmentExhaustedError: when the device has no CRP left
        """
        return self.db.pop_random(device_id, self.rng)

    def verify_response(self, record: CrpRecord, response: np.ndarray) -> bool:
        """
        Re-generates the authentication key from a fresh response and the stored helper data.
        """
        try:
            syndrome = decode_syndrome(record.helper_data)
            quantized = quantize(response)
            bits = reconcile(quantized.without(_erasures(record, len(quantized))), syndrome, self.code)
        except (FrameDecodeError, ReconciliationError, ValueError) as e:
            logger.debug("Response rejected: {}", e)
            return False
        return constant_time.bytes_eq(key_digest(_amplified(bits, syndrome.size, self.key_len)), record.key_digest)

    def verify_replay(self, device_id: str, challenge: bytes, response: np.ndarray) -> bool:
        """
        Checks a response presented for a challenge outside of a fresh issue. Consumed challenges always fail.
        """
        record = self.db.find(device_id, challenge)
        if record is None:
            logger.warning("Challenge {} of device {} is not available, rejecting", challenge.hex(), device_id)
            return False
        return self.verify_response(record, response)

    def authenticate(self, device: PufDevice) -> bool:
        record = self.issue_challenge(device.device_id)
        accepted = self.verify_response(record, device.measure(record.challenge))
        if accepted:
            logger.success("Device {} authenticated", device.device_id)
        else:
            logger.warning("Device {} failed authentication", device.device_id)
        return accepted


def authenticate(device: PufDevice, verifier: Verifier) -> bool:
    """
    Authentication phase: challenge, noisy response, key re-generation and digest comparison.
    :raises EnrolmentExhaustedError: when no unused CRP remains for the device
    """
    return verifier.authenticate(device)
