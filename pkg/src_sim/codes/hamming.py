import numpy as np

from src_sim.codes.common_code import LinearBlockCode


class HammingCode(LinearBlockCode):
    """
    Hamming (7,4): column j of H is the binary expansion of j + 1. Perfect single-error-correcting code,
    so every double error is silently miscorrected.
    """

    name = "hamming74"

    @property
    def parity_check(self) -> np.ndarray:
        columns = np.arange(1, 8)
        return ((columns[np.newaxis, :] >> np.arange(3)[:, np.newaxis]) & 1).astype(np.uint8)

    @property
    def correction_radius(self) -> int:
        return 1


class ExtendedHammingCode(HammingCode):
    """
    Extended Hamming (8,4), rate 1/2: an overall parity row is added, so double errors are detected
    instead of miscorrected.
    """

    name = "hamming84"

    @property
    def parity_check(self) -> np.ndarray:
        base = super().parity_check
        padded = np.hstack([base, np.zeros((base.shape[0], 1), dtype=np.uint8)])
        return np.vstack([padded, np.ones((1, base.shape[1] + 1), dtype=np.uint8)])
