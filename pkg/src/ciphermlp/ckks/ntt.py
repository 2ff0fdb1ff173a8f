"""Negacyclic number-theoretic transforms over machine-word primes.

Primes are chosen congruent to 1 mod 2N so a primitive 2N-th root of unity
exists, which folds the negacyclic twist into the butterfly tables.  All
limbs stay below 31 bits so numpy's uint64 products never overflow.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidParameters

MAX_LIMB_BITS = 30


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for word-sized integers."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def nearest_ntt_prime(target: int, two_n: int, used: set[int]) -> int:
    """Prime closest to ``target`` that is 1 mod 2N, unused, below 2^31."""
    base = max(1, round((target - 1) / two_n))
    for offset in range(0, 1 << 22):
        for k in (base + offset, base - offset):
            if k < 1:
                continue
            p = two_n * k + 1
            if p >= 1 << (MAX_LIMB_BITS + 1) or p <= two_n:
                continue
            if p not in used and is_prime(p):
                return p
    raise InvalidParameters(f"no usable NTT prime near {target} for ring degree {two_n // 2}")


def primes_for_product(target: float, two_n: int, used: set[int]) -> list[int]:
    """Machine-word primes whose product lands as close to ``target`` as the
    candidate density allows; later limbs compensate earlier rounding."""
    bits = np.log2(target)
    if bits < 2:
        raise InvalidParameters(f"modulus entry of {bits:.1f} bits is too small")
    n_limbs = 1
    while bits / n_limbs > MAX_LIMB_BITS:
        n_limbs += 1
    remaining = float(target)
    out = []
    for i in range(n_limbs):
        share = remaining ** (1.0 / (n_limbs - i))
        p = nearest_ntt_prime(round(share), two_n, used)
        used.add(p)
        out.append(p)
        remaining /= p
    return out


def primes_for_entry(bits: int, two_n: int, used: set[int]) -> list[int]:
    """Primes for one declared chain entry of the given bit size."""
    return primes_for_product(2.0**bits, two_n, used)


def _primitive_2n_root(p: int, two_n: int) -> int:
    """Element of exact order 2N mod p, i.e. psi with psi^N = -1."""
    n = two_n // 2
    cofactor = (p - 1) // two_n
    for g in range(2, 10_000):
        psi = pow(g, cofactor, p)
        if psi != 1 and pow(psi, n, p) == p - 1:
            return psi
    raise InvalidParameters(f"no primitive 2N-th root found mod {p}")


def _bit_reverse(values: np.ndarray, bits: int) -> np.ndarray:
    idx = np.arange(len(values))
    rev = np.zeros_like(idx)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return values[rev]


class NttPlan:
    """Per-prime transform tables for one ring degree."""

    def __init__(self, prime: int, degree: int):
        self.p = prime
        self.n = degree
        log_n = degree.bit_length() - 1
        psi = _primitive_2n_root(prime, 2 * degree)
        psi_inv = pow(psi, -1, prime)
        powers = np.empty(degree, dtype=np.uint64)
        inv_powers = np.empty(degree, dtype=np.uint64)
        acc = acc_inv = 1
        for i in range(degree):
            powers[i] = acc
            inv_powers[i] = acc_inv
            acc = acc * psi % prime
            acc_inv = acc_inv * psi_inv % prime
        self.psi_brv = _bit_reverse(powers, log_n)
        self.inv_psi_brv = _bit_reverse(inv_powers, log_n)
        self.n_inv = np.uint64(pow(degree, -1, prime))

    def forward(self, a: np.ndarray) -> np.ndarray:
        """Coefficients -> evaluations (bit-reversed order), negacyclic."""
        p = np.uint64(self.p)
        x = a.astype(np.uint64).copy()
        n = self.n
        t, m = n, 1
        while m < n:
            t //= 2
            view = x.reshape(m, 2 * t)
            s = self.psi_brv[m:2 * m].reshape(m, 1)
            u = view[:, :t]
            v = view[:, t:] * s % p
            view[:, t:] = (u + (p - v)) % p
            view[:, :t] = (u + v) % p
            m *= 2
        return x

    def inverse(self, a: np.ndarray) -> np.ndarray:
        """Evaluations (bit-reversed order) -> coefficients."""
        p = np.uint64(self.p)
        x = a.astype(np.uint64).copy()
        n = self.n
        t, m = 1, n
        while m > 1:
            h = m // 2
            view = x.reshape(h, 2 * t)
            s = self.inv_psi_brv[h:2 * h].reshape(h, 1)
            u = view[:, :t].copy()
            v = view[:, t:]
            view[:, :t] = (u + v) % p
            view[:, t:] = (u + (p - v)) % p * s % p
            t *= 2
            m = h
        return x * self.n_inv % p


def schoolbook_negacyclic(a, b, p: int) -> list[int]:
    """O(N^2) reference product in Z_p[X]/(X^N + 1); exact, test oracle."""
    n = len(a)
    out = [0] * n
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            k = i + j
            term = int(ai) * int(bj)
            if k < n:
                out[k] = (out[k] + term) % p
            else:
                out[k - n] = (out[k - n] - term) % p
    return [v % p for v in out]
