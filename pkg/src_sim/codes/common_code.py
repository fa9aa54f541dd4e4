from abc import ABC, abstractmethod
from functools import cached_property
from itertools import combinations

import numpy as np
from loguru import logger


def gf2_rank(matrix: np.ndarray) -> int:
    """
    Rank of a binary matrix over GF(2) by Gaussian elimination.
    """
    rows = np.array(matrix, dtype=np.uint8) % 2
    rank = 0
    for col in range(rows.shape[1]):
        pivots = np.nonzero(rows[rank:, col])[0]
        if pivots.size == 0:
            continue
        pivot = rank + pivots[0]
        rows[[rank, pivot]] = rows[[pivot, rank]]
        others = np.nonzero(rows[:, col])[0]
        others = others[others != rank]
        rows[others] ^= rows[rank]
        rank += 1
        if rank == rows.shape[0]:
            break
    return rank


class LinearBlockCode(ABC):
    """
    Binary linear block code used for syndrome-based reconciliation.

    Subclasses provide the parity-check matrix and the correction radius; syndrome decoding uses a lookup
    table holding one coset leader per correctable syndrome. Syndromes missing from the table are reported
    as uncorrectable.
    """

    name: str = None

    def __init__(self):
        h = self.parity_check
        if gf2_rank(h) != h.shape[0]:
            raise ValueError(f"parity-check matrix of {self.name} is not full row rank")
        self._syndrome_weights = 1 << np.arange(h.shape[0], dtype=np.int64)

    @property
    @abstractmethod
    def parity_check(self) -> np.ndarray:
        """
        Binary (n-k) x n parity-check matrix H.
        """
        raise NotImplementedError("This method should be implemented in subclasses.")

    @property
    @abstractmethod
    def correction_radius(self) -> int:
        """
        Largest error weight t the decoder corrects for every pattern.
        """
        raise NotImplementedError("This method should be implemented in subclasses.")

    @property
    def n_code(self) -> int:
        return self.parity_check.shape[1]

    @property
    def k_code(self) -> int:
        return self.n_code - self.parity_check.shape[0]

    @property
    def syndrome_length(self) -> int:
        return self.n_code - self.k_code

    @property
    def kappa(self) -> float:
        return self.n_code / self.k_code

    def syndromes(self, blocks: np.ndarray) -> np.ndarray:
        """
        Per-block syndromes H r^T over GF(2).
        :param blocks: uint8 array of shape (B, n)
        :return: uint8 array of shape (B, n-k)
        """
        return (np.asarray(blocks, dtype=np.int64) @ self.parity_check.T.astype(np.int64) % 2).astype(np.uint8)

    @cached_property
    def decoding_table(self) -> dict[int, np.ndarray]:
        table: dict[int, np.ndarray] = {}
        for weight in range(self.correction_radius + 1):
            for positions in combinations(range(self.n_code), weight):
                pattern = np.zeros(self.n_code, dtype=np.uint8)
                pattern[list(positions)] = 1
                key = self._syndrome_key(self.syndromes(pattern[np.newaxis, :])[0])
                table.setdefault(key, pattern)
        logger.trace("Decoding table for {} holds {} coset leaders", self.name, len(table))
        return table

    def _syndrome_key(self, syndrome: np.ndarray) -> int:
        return int(np.asarray(syndrome, dtype=np.int64) @ self._syndrome_weights)

    def decode_syndrome(self, syndrome: np.ndarray) -> np.ndarray | None:
        """
        Maps a syndrome to its coset leader, or None when no correctable pattern produces it.
        """
        pattern = self.decoding_table.get(self._syndrome_key(syndrome))
        return None if pattern is None else pattern.copy()

    def codewords(self) -> np.ndarray:
        """
        All codewords, by exhaustive search. Only meant for short codes.
        """
        words = (np.arange(2**self.n_code)[:, np.newaxis] >> np.arange(self.n_code)) & 1
        return words[~self.syndromes(words).any(axis=1)].astype(np.uint8)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n_code}, k={self.k_code})"
