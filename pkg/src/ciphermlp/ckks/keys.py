"""Secret material and key switching for the RNS backend.

Key switching decomposes the input by its RNS limbs (one digit per limb,
which in this representation is the simple correct choice: digits are read
straight off the residue planes) and runs under the modulus extended by the
special primes, dividing them back out afterwards to shrink the noise.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ..errors import MissingRotationKey
from .ring import (
    ChainContext,
    RingElement,
    divide_round_by_primes,
    make_element,
    sample_gaussian_coeffs,
    sample_ternary_coeffs,
    sample_uniform,
)

ERROR_SIGMA = 3.2  # discrete Gaussian width, the standard's default


@dataclasses.dataclass
class KeySwitchKey:
    """One row per decomposition limb, stored NTT-ready over Q*P."""

    rows_b: list[RingElement]
    rows_a: list[RingElement]


class SecretKey:
    def __init__(self, ctx: ChainContext, rng: np.random.Generator):
        self.ctx = ctx
        self.coeffs = sample_ternary_coeffs(ctx, rng)
        full = ctx.all_primes
        self.s_full = make_element(ctx, full, self.coeffs).to_ntt()

    def restricted(self, primes: tuple[int, ...]) -> RingElement:
        keep = [self.ctx.all_primes.index(p) for p in primes]
        return RingElement(self.ctx, primes, self.s_full.planes[keep].copy(), ntt=True)


def make_keyswitch_key(ctx: ChainContext, sk: SecretKey, source_ntt: RingElement,
                       rng: np.random.Generator) -> KeySwitchKey:
    """Keys taking a polynomial times ``source`` secret to the main secret.

    Row i encrypts P * source * (CRT basis element of limb i); the basis
    element is 1 mod q_i and 0 mod every other limb, so the message plane is
    nonzero only at limb i.
    """
    full = ctx.all_primes
    n_ct_limbs = len(ctx.primes)
    p_special = ctx.special_product
    rows_b, rows_a = [], []
    for i in range(n_ct_limbs):
        a = sample_uniform(ctx, full, rng, ntt=True)
        e = make_element(ctx, full, sample_gaussian_coeffs(ctx, rng, ERROR_SIGMA)).to_ntt()
        b = a.mul(sk.s_full).neg().add(e)
        q_i = ctx.primes[i]
        msg_plane = source_ntt.planes[full.index(q_i)] * \
            np.uint64(p_special % q_i) % np.uint64(q_i)
        b.planes[full.index(q_i)] = (b.planes[full.index(q_i)] + msg_plane) % np.uint64(q_i)
        rows_b.append(b)
        rows_a.append(a)
    return KeySwitchKey(rows_b=rows_b, rows_a=rows_a)


def key_switch(ctx: ChainContext, d: RingElement,
               ksk: KeySwitchKey) -> tuple[RingElement, RingElement]:
    """Turn ``d`` (to be multiplied by the source secret) into a ciphertext
    pair under the main secret, over d's modulus."""
    if d.ntt:
        d = d.to_coeff()
    current = list(d.primes)
    extended = tuple(current + ctx.special_primes)
    acc_b = acc_a = None
    half = {p: p // 2 for p in current}
    for i, q_i in enumerate(current):
        digit = d.planes[i].astype(np.int64)
        digit[digit > half[q_i]] -= q_i
        planes = np.empty((len(extended), ctx.params.poly_degree), dtype=np.uint64)
        for row, p in enumerate(extended):
            planes[row] = (digit % p).astype(np.uint64)
        digit_elem = RingElement(ctx, extended, planes, ntt=False).to_ntt()
        row_idx = ctx.primes.index(q_i)
        ksk_b = ksk.rows_b[row_idx].restrict(extended)
        ksk_a = ksk.rows_a[row_idx].restrict(extended)
        tb = digit_elem.mul(ksk_b)
        ta = digit_elem.mul(ksk_a)
        acc_b = tb if acc_b is None else acc_b.add(tb)
        acc_a = ta if acc_a is None else acc_a.add(ta)
    out_b = divide_round_by_primes(acc_b.to_coeff(), list(reversed(ctx.special_primes)))
    out_a = divide_round_by_primes(acc_a.to_coeff(), list(reversed(ctx.special_primes)))
    return out_b, out_a


@dataclasses.dataclass
class EvalKeys:
    """Relinearization plus rotation keys indexed by Galois element.

    Decomposition is per RNS limb rather than a power-of-two gadget; in this
    representation that is the simplest correct method.
    """

    relin: KeySwitchKey
    rotations: dict[int, KeySwitchKey]
    galois_for_step: dict[int, int]
    automorphisms: dict[int, tuple[np.ndarray, np.ndarray]]

    def rotation_key(self, galois: int) -> KeySwitchKey:
        try:
            return self.rotations[galois]
        except KeyError:
            raise MissingRotationKey(f"no key for Galois element {galois}") from None


def generate_eval_keys(ctx: ChainContext, sk: SecretKey, rotation_steps: set[int],
                       rng: np.random.Generator) -> EvalKeys:
    from .ring import apply_automorphism, automorphism_tables

    s_squared = sk.s_full.mul(sk.s_full)
    relin = make_keyswitch_key(ctx, sk, s_squared, rng)
    n = ctx.params.poly_degree
    slots = n // 2
    rotations: dict[int, KeySwitchKey] = {}
    galois_for_step: dict[int, int] = {}
    autos: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for step in sorted({k % slots for k in rotation_steps} - {0}):
        galois = pow(5, step, 2 * n)
        galois_for_step[step] = galois
        tables = automorphism_tables(n, galois)
        autos[galois] = tables
        s_rot = apply_automorphism(sk.s_full.to_coeff(), *tables).to_ntt()
        rotations[galois] = make_keyswitch_key(ctx, sk, s_rot, rng)
    return EvalKeys(relin=relin, rotations=rotations,
                    galois_for_step=galois_for_step, automorphisms=autos)
