"""
Authenticated encryption bound to secret key generation.

The sender derives (k_e, k_i) from its observation, encrypts with AES-CTR under k_e and tags
syndrome || ciphertext || associated data with HMAC-SHA256 under k_i. The receiver reconciles, derives its own
keys, verifies the tag and only then decrypts.
"""

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from loguru import logger

from src_common.common_utils import FrameDecodeError, ReconciliationError
from src_sim.codes import LinearBlockCode
from src_sim.skg_protocol import (
    AmplificationBudget,
    KeyMaterial,
    ResumptionState,
    decode_syndrome,
    resumption_receive,
    skg_receive,
)

TAG_BYTES = 32
NONCE_BYTES = 12
MAX_NONCE_COUNTER = 2 ** (8 * NONCE_BYTES) - 1


class OpenError(Enum):
    INTEGRITY_FAILURE = "integrity failure"
    RECONCILIATION_FAILURE = "reconciliation failure"


@dataclass(frozen=True)
class OpenOutcome:
    """
    Result of opening an extended ciphertext. Failures carry an error code and never any plaintext.
    """

    plaintext: bytes | None = None
    error: OpenError | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @classmethod
    def failure(cls, error: OpenError) -> "OpenOutcome":
        return cls(plaintext=None, error=error)


@dataclass(frozen=True)
class ExtendedCiphertext:
    """
    [s || c || t] as sent on the wire. assoc_data is authenticated but travels out of band.
    """

    syndrome: bytes
    ciphertext: bytes
    tag: bytes
    assoc_data: bytes = b""

    def __post_init__(self):
        if len(self.tag) != TAG_BYTES:
            raise FrameDecodeError(f"tag must be {TAG_BYTES} bytes, got {len(self.tag)}")

    def to_bytes(self) -> bytes:
        return _framed(self.syndrome, self.ciphertext) + self.tag

    @classmethod
    def from_bytes(cls, data: bytes, assoc_data: bytes = b"") -> "ExtendedCiphertext":
        """
        Parses [u32 len s][s][u32 len c][c][32-byte t]; every byte must be accounted for.
        """
        offset = 0
        fields = []
        for name in ("syndrome", "ciphertext"):
            if len(data) < offset + 4:
                raise FrameDecodeError(f"truncated {name} length")
            (length,) = struct.unpack(">I", data[offset : offset + 4])
            offset += 4
            if len(data) < offset + length:
                raise FrameDecodeError(f"truncated {name}: {length} bytes declared")
            fields.append(data[offset : offset + length])
            offset += length
        if len(data) - offset != TAG_BYTES:
            raise FrameDecodeError(f"expected {TAG_BYTES} tag bytes, found {len(data) - offset}")
        return cls(syndrome=fields[0], ciphertext=fields[1], tag=data[offset:], assoc_data=assoc_data)


def _framed(syndrome: bytes, ciphertext: bytes) -> bytes:
    return struct.pack(">I", len(syndrome)) + syndrome + struct.pack(">I", len(ciphertext)) + ciphertext


def _nonce(counter: int) -> bytes:
    if not 0 <= counter <= MAX_NONCE_COUNTER:
        raise ValueError(f"nonce counter {counter} outside the 96-bit range")
    return counter.to_bytes(NONCE_BYTES, "big")


def _ctr(k_e: bytes, nonce: bytes) -> Cipher:
    # 96-bit nonce followed by a 32-bit block counter starting at zero
    return Cipher(algorithms.AES(k_e), modes.CTR(nonce + bytes(4)))


def _mac_input(syndrome: bytes, ciphertext: bytes, assoc_data: bytes, nonce: bytes) -> bytes:
    return nonce + _framed(syndrome, ciphertext) + assoc_data


def sign(key_i: bytes, data: bytes) -> bytes:
    """
    HMAC-SHA256 tag of data.
    """
    mac = hmac.HMAC(key_i, hashes.SHA256())
    mac.update(data)
    return mac.finalize()


def verify(key_i: bytes, data: bytes, tag: bytes) -> bool:
    """
    Constant-time tag check.
    """
    mac = hmac.HMAC(key_i, hashes.SHA256())
    mac.update(data)
    try:
        mac.verify(tag)
        return True
    except InvalidSignature:
        return False


def seal(
    key: KeyMaterial, message: bytes, syndrome: bytes, assoc_data: bytes = b"", nonce_counter: int = 0
) -> ExtendedCiphertext:
    """
    Encrypts message under k_e and authenticates syndrome, ciphertext and associated data under k_i.
    :param key: session key material
    :param message: plaintext
    :param syndrome: wire-encoded syndrome sent in the clear
    :param assoc_data: authenticated data agreed out of band (lookup id for resumption sessions)
    :param nonce_counter: position of this message in the key's nonce sequence
    :return: ExtendedCiphertext
    """
    nonce = _nonce(nonce_counter)
    encryptor = _ctr(key.k_e, nonce).encryptor()
    ciphertext = encryptor.update(message) + encryptor.finalize()
    tag = sign(key.k_i, _mac_input(syndrome, ciphertext, assoc_data, nonce))
    return ExtendedCiphertext(syndrome=syndrome, ciphertext=ciphertext, tag=tag, assoc_data=assoc_data)


def open_with_key(
    key: KeyMaterial, ext: ExtendedCiphertext | bytes, assoc_data: bytes = b"", sequence: int = 0
) -> OpenOutcome:
    """
    Ver then Ds for a receiver that already holds the key.
    :return: OpenOutcome
    """
    try:
        if isinstance(ext, bytes):
            ext = ExtendedCiphertext.from_bytes(ext, assoc_data)
    except FrameDecodeError as e:
        logger.debug("Malformed extended ciphertext: {}", e)
        return OpenOutcome.failure(OpenError.INTEGRITY_FAILURE)
    nonce = _nonce(sequence)
    if not verify(key.k_i, _mac_input(ext.syndrome, ext.ciphertext, ext.assoc_data, nonce), ext.tag):
        logger.debug("Tag verification failed")
        return OpenOutcome.failure(OpenError.INTEGRITY_FAILURE)
    decryptor = _ctr(key.k_e, nonce).decryptor()
    return OpenOutcome(plaintext=decryptor.update(ext.ciphertext) + decryptor.finalize())


def open_extended(
    receiver_observation: np.ndarray,
    code: LinearBlockCode,
    budget: AmplificationBudget,
    ext: ExtendedCiphertext | bytes,
    key_len: int,
    assoc_data: bytes = b"",
    resumption_state: ResumptionState | None = None,
    sequence: int = 0,
) -> OpenOutcome:
    """
    Receiver side of the exchange: reconcile with the transmitted syndrome, derive the keys from the
    receiver's own observation, verify, decrypt.
    :param receiver_observation: receiver's complex channel observation
    :param code: reconciliation code agreed with the sender
    :param budget: privacy amplification budget
    :param ext: extended ciphertext or its wire bytes
    :param key_len: key length in bits
    :param assoc_data: associated data agreed out of band
    :param resumption_state: set for a resumption session; consumed by this call
    :param sequence: nonce counter of the message
    :return: OpenOutcome
    """
    try:
        if isinstance(ext, bytes):
            ext = ExtendedCiphertext.from_bytes(ext, assoc_data)
        syndrome = decode_syndrome(ext.syndrome)
    except FrameDecodeError as e:
        logger.debug("Malformed extended ciphertext: {}", e)
        return OpenOutcome.failure(OpenError.INTEGRITY_FAILURE)
    try:
        if resumption_state is None:
            key = skg_receive(receiver_observation, syndrome, code, budget, key_len)
        else:
            key = resumption_receive(receiver_observation, syndrome, code, budget, key_len, resumption_state)
    except ReconciliationError as e:
        logger.debug("{}", e)
        return OpenOutcome.failure(OpenError.RECONCILIATION_FAILURE)
    except ValueError as e:
        # a syndrome whose length does not fit the observation was altered in transit
        logger.debug("Syndrome rejected: {}", e)
        return OpenOutcome.failure(OpenError.INTEGRITY_FAILURE)
    return open_with_key(key, ext, sequence=sequence)


class SealingSession:
    """
    Sender-side owner of one key and its nonce counter.
    """

    def __init__(self, key: KeyMaterial, syndrome: bytes):
        self.key = key
        self.syndrome = syndrome
        self.counter = 0

    def seal(self, message: bytes, assoc_data: bytes = b"") -> ExtendedCiphertext:
        ext = seal(self.key, message, self.syndrome, assoc_data, self.counter)
        self.counter += 1
        return ext
