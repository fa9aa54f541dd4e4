"""
Secret key generation from reciprocal channel observations: quantization, syndrome-based reconciliation,
privacy amplification, plus the resumption variant that mixes a stored secret into a fresh observation.
"""

import struct
import threading
from dataclasses import dataclass, field

import numpy as np
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from src_common.common_utils import (
    AmplificationBudgetError,
    FrameDecodeError,
    ReconciliationError,
    ResumptionError,
)
from src_sim.codes import LinearBlockCode

KEY_DOMAIN = b"skg-sim/key/v1"
RESUMPTION_DOMAIN = b"skg-sim/resumption/v1"
LOOKUP_ID_BYTES = 16
MAX_KEY_BITS = 256


class QuantizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    guard_band: float = Field(default=0.0, ge=0)


@dataclass(frozen=True)
class QuantizedVector:
    """
    Bit vector with two sign bits per complex sample (real part, then imaginary part).
    erasures flags bits whose component fell inside the guard band; it stays with the party that produced it.
    """

    bits: np.ndarray
    erasures: np.ndarray = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        object.__setattr__(self, "bits", bits)
        if self.erasures is None:
            object.__setattr__(self, "erasures", np.zeros(bits.shape, dtype=bool))

    def __len__(self) -> int:
        return self.bits.size

    def __xor__(self, other: "QuantizedVector") -> "QuantizedVector":
        other_bits = other.bits if isinstance(other, QuantizedVector) else np.asarray(other, dtype=np.uint8)
        if other_bits.size != self.bits.size:
            raise ValueError(f"cannot combine vectors of {self.bits.size} and {other_bits.size} bits")
        return QuantizedVector(self.bits ^ other_bits, self.erasures)

    def without(self, mask: np.ndarray) -> "QuantizedVector":
        """
        Drops the positions flagged in a mask that both parties agreed on.
        """
        keep = ~np.asarray(mask, dtype=bool)
        return QuantizedVector(self.bits[keep], self.erasures[keep])


@dataclass(frozen=True)
class KeyMaterial:
    k_e: bytes
    k_i: bytes
    total_len_bits: int

    @property
    def key(self) -> bytes:
        return self.k_e + self.k_i


class AmplificationBudget(BaseModel):
    """
    Entropy accounting for privacy amplification, all values in bits.
    """

    model_config = ConfigDict(frozen=True)

    h_xa: float = Field(ge=0)
    i_xa_xe: float = Field(default=0.0, ge=0)
    h_xa_given_xb: float = Field(default=0.0, ge=0)
    r0: float = Field(default=0.0, ge=0)

    @property
    def max_key_bits(self) -> float:
        return self.h_xa - self.i_xa_xe - self.h_xa_given_xb - self.r0

    @classmethod
    def from_lengths(cls, vector_bits: int, syndrome_bits: int, r0: float = 0.0) -> "AmplificationBudget":
        """
        Budget of a sign-quantized vector with an independent eavesdropper: every bit carries one bit of
        entropy and the published syndrome is charged in full against the conditional entropy.
        """
        return cls(h_xa=vector_bits, i_xa_xe=0.0, h_xa_given_xb=syndrome_bits, r0=r0)


def quantize(observation: np.ndarray, guard_band: float = 0.0) -> QuantizedVector:
    """
    Sign quantizer: per sample emits the sign bit of the real part then of the imaginary part (>= 0 -> 0).
    :param observation: complex observation vector
    :param guard_band: components with magnitude below this value are flagged as erasures
    :return: QuantizedVector of length 2 * len(observation)
    """
    if guard_band < 0:
        raise ValueError(f"guard band must be non-negative, got {guard_band}")
    components = np.column_stack([np.real(observation), np.imag(observation)]).ravel()
    bits = (components < 0).astype(np.uint8)
    return QuantizedVector(bits, np.abs(components) < guard_band)


def _blocks(bits: np.ndarray, n_code: int) -> np.ndarray:
    padding = -bits.size % n_code
    return np.concatenate([bits, np.zeros(padding, dtype=np.uint8)]).reshape(-1, n_code)


def _observed_bits(observation: np.ndarray, erasure_mask: np.ndarray | None) -> QuantizedVector:
    bits = quantize(observation)
    return bits if erasure_mask is None else bits.without(erasure_mask)


def compute_syndrome(bits: QuantizedVector, code: LinearBlockCode) -> np.ndarray:
    """
    Concatenated per-block syndromes; the last block is zero-padded to the code length.
    """
    return code.syndromes(_blocks(bits.bits, code.n_code)).ravel()


def syndrome_length(n_bits: int, code: LinearBlockCode) -> int:
    return -(-n_bits // code.n_code) * code.syndrome_length


def reconcile(local_bits: QuantizedVector, remote_syndrome: np.ndarray, code: LinearBlockCode) -> QuantizedVector:
    """
    Corrects the local bits towards the remote party's vector, block by block, using s_local xor s_remote.
    :raises ReconciliationError: when a block's syndrome difference is not correctable
    """
    remote = np.asarray(remote_syndrome, dtype=np.uint8)
    if remote.size != syndrome_length(len(local_bits), code):
        raise ValueError(f"syndrome of {remote.size} bits does not match {len(local_bits)} local bits")
    blocks = _blocks(local_bits.bits, code.n_code)
    differences = code.syndromes(blocks) ^ remote.reshape(-1, code.syndrome_length)
    flips = 0
    for index in np.nonzero(differences.any(axis=1))[0]:
        pattern = code.decode_syndrome(differences[index])
        if pattern is None:
            logger.debug("Block {} has an uncorrectable syndrome difference", index)
            raise ReconciliationError(int(index))
        blocks[index] ^= pattern
        flips += int(pattern.sum())
    logger.trace("Reconciled {} bits with {} flips", len(local_bits), flips)
    return QuantizedVector(blocks.ravel()[: len(local_bits)], local_bits.erasures)


def privacy_amplify(
    bits: QuantizedVector, budget: AmplificationBudget, key_len_bits: int, syndrome_bits: int = 0
) -> KeyMaterial:
    """
    Compresses the reconciled bits with SHA-256 under a domain tag and splits the result into equal
    encryption and integrity halves.
    :param bits: reconciled vector
    :param budget: entropy budget bounding the key length
    :param key_len_bits: requested key length, a multiple of 16 up to 256
    :param syndrome_bits: number of syndrome bits published for this vector
    :return: KeyMaterial
    """
    if key_len_bits <= 0 or key_len_bits % 16 or key_len_bits > MAX_KEY_BITS:
        raise ValueError(f"key length must be a positive multiple of 16 up to {MAX_KEY_BITS}, got {key_len_bits}")
    allowed = min(budget.max_key_bits, len(bits) - syndrome_bits)
    if key_len_bits > allowed:
        raise AmplificationBudgetError(key_len_bits, allowed)
    digest = hashes.Hash(hashes.SHA256())
    digest.update(KEY_DOMAIN)
    digest.update(struct.pack(">I", len(bits)))
    digest.update(np.packbits(bits.bits).tobytes())
    key = digest.finalize()[: key_len_bits // 8]
    half = len(key) // 2
    return KeyMaterial(k_e=key[:half], k_i=key[half:], total_len_bits=key_len_bits)


def skg_generate(
    observation: np.ndarray,
    code: LinearBlockCode,
    budget: AmplificationBudget,
    key_len: int,
    erasure_mask: np.ndarray | None = None,
) -> tuple[KeyMaterial, np.ndarray]:
    """
    Sender-side pipeline G(h) = (k, s): quantize, publish the syndrome, amplify.
    """
    bits = _observed_bits(observation, erasure_mask)
    syndrome = compute_syndrome(bits, code)
    return privacy_amplify(bits, budget, key_len, syndrome.size), syndrome


def skg_receive(
    observation: np.ndarray,
    remote_syndrome: np.ndarray,
    code: LinearBlockCode,
    budget: AmplificationBudget,
    key_len: int,
    erasure_mask: np.ndarray | None = None,
) -> KeyMaterial:
    """
    Receiver-side pipeline: quantize, reconcile towards the sender, amplify.
    """
    bits = reconcile(_observed_bits(observation, erasure_mask), remote_syndrome, code)
    return privacy_amplify(bits, budget, key_len, np.asarray(remote_syndrome).size)


@dataclass
class ResumptionState:
    """
    Per-party resumption secret r_s and its lookup identifier k_l. Usable for exactly one session.
    """

    lookup_id: bytes
    resumption_secret: np.ndarray
    consumed: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def derive(cls, key: KeyMaterial, lookup_id: bytes, n_bits: int) -> "ResumptionState":
        """
        Expands the session key into an n_bits resumption secret with HKDF-SHA256 salted by the lookup id.
        Both parties holding the same key and lookup id derive the same secret.
        """
        hkdf = HKDF(algorithm=hashes.SHA256(), length=-(-n_bits // 8), salt=lookup_id, info=RESUMPTION_DOMAIN)
        secret = np.unpackbits(np.frombuffer(hkdf.derive(key.key), dtype=np.uint8))[:n_bits]
        return cls(lookup_id=lookup_id, resumption_secret=secret)

    @classmethod
    def issue(cls, key: KeyMaterial, n_bits: int, rng: np.random.Generator) -> "ResumptionState":
        """
        Draws a fresh lookup identifier and derives the matching secret.
        """
        return cls.derive(key, rng.bytes(LOOKUP_ID_BYTES), n_bits)

    def consume(self) -> np.ndarray:
        with self._lock:
            if self.consumed:
                raise ResumptionError()
            self.consumed = True
        return self.resumption_secret


class ResumptionCache:
    """
    Receiver-side store of resumption states keyed by lookup identifier. Entries leave the cache when taken.
    """

    def __init__(self):
        self._states: dict[bytes, ResumptionState] = {}
        self._lock = threading.Lock()

    def store(self, state: ResumptionState):
        with self._lock:
            self._states[state.lookup_id] = state
        logger.trace("Resumption state {} cached", state.lookup_id.hex())

    def take(self, lookup_id: bytes) -> ResumptionState:
        with self._lock:
            state = self._states.pop(lookup_id, None)
        if state is None:
            logger.warning("Unknown or already used lookup id {}", lookup_id.hex())
            raise ResumptionError()
        return state

    def __len__(self) -> int:
        return len(self._states)


def _mixed(bits: QuantizedVector, state: ResumptionState) -> QuantizedVector:
    secret = state.consume()
    if secret.size != len(bits):
        raise ValueError(f"resumption secret has {secret.size} bits, observation has {len(bits)}")
    return bits ^ secret


def resumption_generate(
    observation: np.ndarray,
    code: LinearBlockCode,
    budget: AmplificationBudget,
    key_len: int,
    state: ResumptionState,
    erasure_mask: np.ndarray | None = None,
) -> tuple[KeyMaterial, np.ndarray]:
    """
    Sender-side resumption: the pipeline of skg_generate applied to r xor r_s. Consumes the state.
    """
    bits = _mixed(_observed_bits(observation, erasure_mask), state)
    syndrome = compute_syndrome(bits, code)
    return privacy_amplify(bits, budget, key_len, syndrome.size), syndrome


def resumption_receive(
    observation: np.ndarray,
    remote_syndrome: np.ndarray,
    code: LinearBlockCode,
    budget: AmplificationBudget,
    key_len: int,
    state: ResumptionState,
    erasure_mask: np.ndarray | None = None,
) -> KeyMaterial:
    """
    Receiver-side resumption: reconciles r_B xor r_s towards r_A xor r_s and amplifies. Consumes the state.
    """
    bits = reconcile(_mixed(_observed_bits(observation, erasure_mask), state), remote_syndrome, code)
    return privacy_amplify(bits, budget, key_len, np.asarray(remote_syndrome).size)


def encode_syndrome(syndrome: np.ndarray) -> bytes:
    """
    Wire form: 4-byte big-endian bit length, then the bits packed MSB first and zero-padded to a byte.
    """
    bits = np.asarray(syndrome, dtype=np.uint8)
    return struct.pack(">I", bits.size) + np.packbits(bits).tobytes()


def decode_syndrome(data: bytes) -> np.ndarray:
    """
    Inverse of encode_syndrome. Rejects truncated frames, trailing bytes and non-zero padding.
    """
    if len(data) < 4:
        raise FrameDecodeError("syndrome frame shorter than its length prefix")
    (n_bits,) = struct.unpack(">I", data[:4])
    payload = data[4:]
    if len(payload) != -(-n_bits // 8):
        raise FrameDecodeError(f"syndrome frame declares {n_bits} bits but carries {len(payload)} bytes")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    if bits[n_bits:].any():
        raise FrameDecodeError("non-zero padding in syndrome frame")
    return bits[:n_bits]
