from src_sim.codes.common_code import LinearBlockCode
from src_sim.codes.hamming import ExtendedHammingCode, HammingCode

CODES: dict[str, type[LinearBlockCode]] = {
    HammingCode.name: HammingCode,
    ExtendedHammingCode.name: ExtendedHammingCode,
}


def code_from_name(name: str) -> LinearBlockCode:
    """
    Instantiates a registered reconciliation code by its short name.
    """
    try:
        return CODES[name]()
    except KeyError as e:
        raise ValueError(f"unknown code {name!r}, expected one of {sorted(CODES)}") from e
