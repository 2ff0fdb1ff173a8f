"""RNS rings over the modulus chain: elements, arithmetic, rescaling.

A ring element holds one uint64 residue plane per limb of its current
modulus.  The chain orders limbs as [base | rescale entries | special], so a
ciphertext at level L always occupies a prefix of the global limb list and
key-switching appends the special limbs at the tail.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from ..errors import IncompatibleOperands, InvalidParameters
from ..params import SchemeParams
from .ntt import NttPlan, primes_for_entry, primes_for_product


class ChainContext:
    """All limb-level precomputation for one parameter set."""

    def __init__(self, params: SchemeParams):
        self.params = params
        n = params.poly_degree
        used: set[int] = set()
        base = primes_for_entry(params.modulus_chain[0], 2 * n, used)
        special = primes_for_entry(params.modulus_chain[-1], 2 * n, used)
        # Rescale entries are chosen top-down so each level's product targets
        # the square of the incoming scale over the nominal scale; this keeps
        # every level's scale within a fraction of a bit of 2^scale_bits
        # instead of letting prime-rounding drift compound quadratically.
        nominal = float(2**params.scale_bits)
        rescale: list[list[int] | None] = [None] * params.level
        scale_at = [0.0] * (params.level + 1)
        scale_at[params.level] = nominal
        for lv in range(params.level, 0, -1):
            entry = primes_for_product(scale_at[lv] ** 2 / nominal, 2 * n, used)
            rescale[lv - 1] = entry
            scale_at[lv - 1] = scale_at[lv] ** 2 / math.prod(entry)
        self.entry_primes: list[list[int]] = [base] + rescale + [special]
        self.primes: list[int] = base + [p for entry in rescale for p in entry]
        self.special_primes: list[int] = special
        self.all_primes: list[int] = self.primes + self.special_primes
        self.plans = {p: NttPlan(p, n) for p in self.all_primes}
        # limbs of the ciphertext modulus at each level (prefix lengths)
        self.level_limbs = [len(base)]
        for entry in rescale:
            self.level_limbs.append(self.level_limbs[-1] + len(entry))
        self.entry_products = [math.prod(e) for e in self.entry_primes]
        self.special_product = math.prod(special)
        self.scale_at = scale_at

    def limbs_at(self, level: int) -> list[int]:
        return self.primes[: self.level_limbs[level]]

    def modulus_at(self, level: int) -> int:
        return math.prod(self.limbs_at(level))


@dataclasses.dataclass
class RingElement:
    """Residue planes for one polynomial; ``ntt`` marks the domain."""

    ctx: ChainContext
    primes: tuple[int, ...]
    planes: np.ndarray  # (len(primes), N) uint64
    ntt: bool = False

    def copy(self) -> "RingElement":
        return RingElement(self.ctx, self.primes, self.planes.copy(), self.ntt)

    def _match(self, other: "RingElement") -> None:
        if self.primes != other.primes:
            raise IncompatibleOperands("ring elements live under different moduli")
        if self.ntt != other.ntt:
            raise IncompatibleOperands("ring elements are in different domains")

    def add(self, other: "RingElement") -> "RingElement":
        self._match(other)
        out = np.empty_like(self.planes)
        for i, p in enumerate(self.primes):
            out[i] = (self.planes[i] + other.planes[i]) % np.uint64(p)
        return RingElement(self.ctx, self.primes, out, self.ntt)

    def sub(self, other: "RingElement") -> "RingElement":
        self._match(other)
        out = np.empty_like(self.planes)
        for i, p in enumerate(self.primes):
            q = np.uint64(p)
            out[i] = (self.planes[i] + (q - other.planes[i])) % q
        return RingElement(self.ctx, self.primes, out, self.ntt)

    def neg(self) -> "RingElement":
        out = np.empty_like(self.planes)
        for i, p in enumerate(self.primes):
            q = np.uint64(p)
            out[i] = (q - self.planes[i]) % q
        return RingElement(self.ctx, self.primes, out, self.ntt)

    def scalar_mul(self, scalars: dict[int, int]) -> "RingElement":
        """Multiply by a per-limb constant (an integer reduced per prime)."""
        out = np.empty_like(self.planes)
        for i, p in enumerate(self.primes):
            out[i] = self.planes[i] * np.uint64(scalars[p] % p) % np.uint64(p)
        return RingElement(self.ctx, self.primes, out, self.ntt)

    def to_ntt(self) -> "RingElement":
        if self.ntt:
            return self
        out = np.empty_like(self.planes)
        for i, p in enumerate(self.primes):
            out[i] = self.ctx.plans[p].forward(self.planes[i])
        return RingElement(self.ctx, self.primes, out, True)

    def to_coeff(self) -> "RingElement":
        if not self.ntt:
            return self
        out = np.empty_like(self.planes)
        for i, p in enumerate(self.primes):
            out[i] = self.ctx.plans[p].inverse(self.planes[i])
        return RingElement(self.ctx, self.primes, out, False)

    def mul(self, other: "RingElement") -> "RingElement":
        a, b = self.to_ntt(), other.to_ntt()
        a._match(b)
        out = np.empty_like(a.planes)
        for i, p in enumerate(a.primes):
            out[i] = a.planes[i] * b.planes[i] % np.uint64(p)
        return RingElement(self.ctx, a.primes, out, True)

    def restrict(self, primes: tuple[int, ...]) -> "RingElement":
        """Drop residue planes (modulus reduction); requires a subset prefix."""
        keep = [self.primes.index(p) for p in primes]
        return RingElement(self.ctx, primes, self.planes[keep].copy(), self.ntt)


def make_element(ctx: ChainContext, primes: list[int], coeffs: np.ndarray) -> RingElement:
    """Lift signed integer coefficients into residue planes."""
    signed = coeffs.astype(object) if coeffs.dtype == object else coeffs.astype(np.int64)
    planes = np.empty((len(primes), ctx.params.poly_degree), dtype=np.uint64)
    for i, p in enumerate(primes):
        planes[i] = (signed % p).astype(np.uint64)
    return RingElement(ctx, tuple(primes), planes, ntt=False)


def sample_uniform(ctx: ChainContext, primes: list[int], rng: np.random.Generator,
                   ntt: bool = False) -> RingElement:
    planes = np.empty((len(primes), ctx.params.poly_degree), dtype=np.uint64)
    for i, p in enumerate(primes):
        planes[i] = rng.integers(0, p, ctx.params.poly_degree, dtype=np.uint64)
    return RingElement(ctx, tuple(primes), planes, ntt=ntt)


def sample_gaussian_coeffs(ctx: ChainContext, rng: np.random.Generator,
                           sigma: float) -> np.ndarray:
    return np.rint(rng.normal(0.0, sigma, ctx.params.poly_degree)).astype(np.int64)


def sample_ternary_coeffs(ctx: ChainContext, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(-1, 2, ctx.params.poly_degree).astype(np.int64)


def divide_round_by_prime(elem: RingElement, drop: int) -> RingElement:
    """Exact divide-and-round by one limb prime (the RNS rescaling step)."""
    if elem.ntt:
        raise IncompatibleOperands("rescaling runs in the coefficient domain")
    if drop not in elem.primes:
        raise IncompatibleOperands(f"prime {drop} not in the element's modulus")
    drop_idx = elem.primes.index(drop)
    digit = elem.planes[drop_idx].astype(np.int64)
    digit[digit > drop // 2] -= drop  # centered remainder for round-to-nearest
    keep = [i for i in range(len(elem.primes)) if i != drop_idx]
    primes = tuple(elem.primes[i] for i in keep)
    out = np.empty((len(primes), elem.planes.shape[1]), dtype=np.uint64)
    for row, i in enumerate(keep):
        p = elem.primes[i]
        q = np.uint64(p)
        r = (digit % p).astype(np.uint64)
        inv = np.uint64(pow(drop, -1, p))
        out[row] = (elem.planes[i] + (q - r)) % q * inv % q
    return RingElement(elem.ctx, primes, out, ntt=False)


def divide_round_by_primes(elem: RingElement, drops: list[int]) -> RingElement:
    for p in drops:
        elem = divide_round_by_prime(elem, p)
    return elem


def lift_centered(elem: RingElement) -> np.ndarray:
    """Garner CRT reconstruction to centered big-integer coefficients."""
    if elem.ntt:
        elem = elem.to_coeff()
    primes = elem.primes
    x = elem.planes[0].astype(object)
    modulus = int(primes[0])
    for i in range(1, len(primes)):
        p = int(primes[i])
        inv = pow(modulus % p, -1, p)
        resid = (x % p).astype(np.int64)
        t = (elem.planes[i].astype(np.int64) - resid) % p
        t = (t * inv) % p
        x = x + t.astype(object) * modulus
        modulus *= p
    half = modulus // 2
    return np.where(x > half, x - modulus, x)


def automorphism_tables(degree: int, galois: int) -> tuple[np.ndarray, np.ndarray]:
    """Index map and sign map for X -> X^galois in the negacyclic ring."""
    idx = np.arange(degree, dtype=np.int64)
    exp = (idx * galois) % (2 * degree)
    target = exp % degree
    sign = np.where(exp >= degree, -1, 1).astype(np.int64)
    return target, sign


def apply_automorphism(elem: RingElement, target: np.ndarray,
                       sign: np.ndarray) -> RingElement:
    if elem.ntt:
        raise IncompatibleOperands("automorphisms run in the coefficient domain")
    out = np.empty_like(elem.planes)
    for i, p in enumerate(elem.primes):
        q = np.uint64(p)
        vals = elem.planes[i]
        flipped = np.where(sign < 0, (q - vals) % q, vals)
        plane = np.empty_like(vals)
        plane[target] = flipped
        out[i] = plane
    return RingElement(elem.ctx, elem.primes, out, ntt=False)
