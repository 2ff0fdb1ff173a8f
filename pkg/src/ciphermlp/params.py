"""Scheme parameter bundle and the security gate used by both backends."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

from .errors import InvalidParameters, SecurityError

INSECURE = "insecure-test"

# Homomorphic Encryption Standard: largest total modulus bit-length supported
# at 128-bit classical security for a ternary secret, per polynomial degree.
# The two largest degrees follow the standard's doubling progression.
HES_MAX_MODULUS_BITS_128 = {
    2**10: 27,
    2**11: 54,
    2**12: 109,
    2**13: 218,
    2**14: 438,
    2**15: 881,
    2**16: 1772,
    2**17: 3524,
}

FIRST_MODULUS_BITS = 60
SPECIAL_MODULUS_BITS = 60


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclasses.dataclass(frozen=True)
class SchemeParams:
    """CKKS parameter bundle.

    ``modulus_chain`` lists the bit-size of every entry in the coefficient
    modulus chain: one base entry, ``level`` rescaling entries and one
    key-switching entry, so its length is always ``level + 2``.
    """

    poly_degree: int
    modulus_chain: tuple[int, ...]
    scale_bits: int
    level: int
    bootstrap_depth: int = 0
    security_claim: int | str = INSECURE

    def __post_init__(self):
        if not _is_power_of_two(self.poly_degree):
            raise InvalidParameters(f"poly_degree must be a power of two, got {self.poly_degree}")
        if self.level < 1:
            raise InvalidParameters(f"level must be >= 1, got {self.level}")
        if len(self.modulus_chain) != self.level + 2:
            raise InvalidParameters(
                f"modulus chain must have level + 2 = {self.level + 2} entries, "
                f"got {len(self.modulus_chain)}"
            )
        if self.scale_bits < 1:
            raise InvalidParameters("scale_bits must be positive")
        if self.bootstrap_depth < 0:
            raise InvalidParameters("bootstrap_depth must be >= 0")
        if not (0 < self.refresh_level <= self.level):
            raise InvalidParameters(
                f"refresh level {self.refresh_level} out of range for level {self.level}"
            )
        if self.security_claim == 128:
            total = sum(self.modulus_chain)
            need = minimum_secure_degree(total)
            if self.poly_degree < need:
                raise SecurityError(
                    f"128-bit security with a {total}-bit modulus needs N >= {need}, "
                    f"got N = {self.poly_degree}; use security_claim='{INSECURE}'"
                )
        elif self.security_claim != INSECURE:
            raise InvalidParameters(
                f"security_claim must be 128 or '{INSECURE}', got {self.security_claim!r}"
            )

    @property
    def slot_count(self) -> int:
        return self.poly_degree // 2

    @property
    def refresh_level(self) -> int:
        """Level a bootstrapped ciphertext comes back at."""
        if self.bootstrap_depth > 0:
            return self.level - self.bootstrap_depth
        return self.level

    def digest(self) -> bytes:
        """Stable 32-byte digest used by serialized containers."""
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


def minimum_secure_degree(total_modulus_bits: int) -> int:
    """Smallest HES-listed degree supporting the given modulus at 128 bits."""
    for degree in sorted(HES_MAX_MODULUS_BITS_128):
        if total_modulus_bits <= HES_MAX_MODULUS_BITS_128[degree]:
            return degree
    raise SecurityError(f"no HES-listed degree supports a {total_modulus_bits}-bit modulus")


def make_params(
    level: int,
    scale_bits: int,
    poly_degree: int,
    bootstrap_depth: int = 0,
    security_claim: int | str = INSECURE,
) -> SchemeParams:
    """Build parameters with the conventional chain layout.

    Base and key-switching entries get 60 bits; every rescaling entry gets
    ``scale_bits`` bits, matching the single-scale discipline.
    """
    chain = (FIRST_MODULUS_BITS,) + (scale_bits,) * level + (SPECIAL_MODULUS_BITS,)
    return SchemeParams(
        poly_degree=poly_degree,
        modulus_chain=chain,
        scale_bits=scale_bits,
        level=level,
        bootstrap_depth=bootstrap_depth,
        security_claim=security_claim,
    )


def minimum_degree_for_slots(slots_needed: int) -> int:
    """Smallest power-of-two degree whose slot count covers ``slots_needed``."""
    if slots_needed < 1:
        raise InvalidParameters("need at least one slot")
    return 2 ** (math.ceil(math.log2(slots_needed)) + 1)
