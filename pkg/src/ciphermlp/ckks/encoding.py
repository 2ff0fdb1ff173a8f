"""Slot encoding via the canonical embedding, in the rotation-friendly order.

Slot i corresponds to evaluation at the primitive 2N-th root raised to
5^i mod 2N, so the automorphism X -> X^(5^k) shifts slots left by exactly k.
"""

from __future__ import annotations

import numpy as np

from ..errors import EncodingOverflow
from .ring import ChainContext, RingElement, lift_centered, make_element

MAX_SAFE_COEFF = float(2**52)


class SlotEncoder:
    def __init__(self, ctx: ChainContext):
        self.ctx = ctx
        n = ctx.params.poly_degree
        self.n = n
        slots = n // 2
        exps = np.empty(slots, dtype=np.int64)
        e = 1
        for i in range(slots):
            exps[i] = e
            e = (e * 5) % (2 * n)
        self.bins = (exps - 1) // 2
        self.conj_bins = (2 * n - exps - 1) // 2
        j = np.arange(n)
        self.psi_pow = np.exp(1j * np.pi * j / n)      # zeta^j for the odd-index twist
        self.psi_inv_pow = np.conj(self.psi_pow)

    def embed(self, values: np.ndarray, scale: float) -> np.ndarray:
        """Real slot values -> signed integer coefficients at the given scale."""
        slots = self.n // 2
        v = np.zeros(slots, dtype=np.float64)
        vals = np.asarray(values, dtype=np.float64)
        v[: vals.shape[0]] = vals
        spectrum = np.zeros(self.n, dtype=np.complex128)
        scaled = v * scale
        spectrum[self.bins] = scaled
        spectrum[self.conj_bins] = scaled  # conjugate of a real value
        w = np.fft.fft(spectrum) / self.n
        coeffs = np.rint(np.real(w * self.psi_inv_pow))
        if np.max(np.abs(coeffs)) >= MAX_SAFE_COEFF:
            raise EncodingOverflow(
                "scaled values exceed the exactly-representable coefficient range")
        return coeffs.astype(np.int64)

    def unembed(self, coeffs: np.ndarray, scale: float) -> np.ndarray:
        """Centered integer coefficients -> real slot values."""
        w = coeffs.astype(np.float64) * self.psi_pow
        spectrum = np.fft.ifft(w) * self.n
        return np.real(spectrum[self.bins]) / scale

    def encode(self, values: np.ndarray, scale: float, primes: list[int],
               headroom_modulus: int) -> RingElement:
        coeffs = self.embed(values, scale)
        bound = float(np.max(np.abs(coeffs)))
        if 4.0 * bound >= float(headroom_modulus):
            raise EncodingOverflow(
                f"encoded coefficients (~2^{np.log2(bound + 1):.1f}) do not fit the "
                f"current modulus with headroom")
        return make_element(self.ctx, primes, coeffs)

    def decode(self, elem: RingElement, scale: float) -> np.ndarray:
        coeffs = lift_centered(elem)
        return self.unembed(coeffs.astype(np.float64), scale)

    def constant_poly(self, value: float, scale: float,
                      primes: list[int]) -> RingElement:
        """Exact encoding of an all-slots constant: a degree-zero polynomial."""
        coeffs = np.zeros(self.n, dtype=np.int64)
        coeffs[0] = int(np.rint(value * scale))
        return make_element(self.ctx, primes, coeffs)
