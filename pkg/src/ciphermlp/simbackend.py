"""Exact plaintext realization of the homomorphic contract.

Slot values are plain float64 arrays, so with the noise model disabled every
program is an exact homomorphism over raw array arithmetic.  Level and depth
bookkeeping is fully emulated, which makes this backend the correctness
oracle for the CKKS backend and the fast path for desk-scale training.
"""

from __future__ import annotations

import dataclasses
import struct

import numpy as np

from .api import Backend, CipherVector, PlainVector
from .errors import HeError, SerializationError, SnapshotDisabled
from .params import SchemeParams

STATE_MAGIC = b"RBSM"
STATE_VERSION = 1


@dataclasses.dataclass(frozen=True)
class NoiseModel:
    """Stochastic perturbation applied after multiplies and bootstraps.

    Magnitudes are a modeling choice, not a calibrated CKKS noise analysis;
    the default multiply sigma tracks the encoding precision left after the
    slot-count amplification.
    """

    enabled: bool = False
    per_op_sigma: float | None = None
    bootstrap_sigma: float = 0.0
    rng_seed: int = 0

    def resolved_sigma(self, params: SchemeParams) -> float:
        if self.per_op_sigma is not None:
            return self.per_op_sigma
        effective_bits = params.scale_bits - params.poly_degree.bit_length()
        return 2.0 ** (-effective_bits)


class SimCipher:
    """Payload of a simulated ciphertext: raw slots plus a coarse error bound.

    Takes ownership of ``values``: callers hand in a fresh float64 array,
    which is frozen in place rather than copied (this sits on the hot path).
    Finiteness is enforced where divergence can appear (multiplies, encrypt,
    bootstrap); additive overflow surfaces at the next multiply.
    """

    __slots__ = ("values", "noise_accumulator")

    def __init__(self, values: np.ndarray, noise_accumulator: float = 0.0,
                 check: bool = True):
        if check and not np.isfinite(values).all():
            raise HeError("simulated ciphertext holds non-finite slot values")
        values.setflags(write=False)
        self.values = values
        self.noise_accumulator = noise_accumulator


_SIM_BACKENDS: dict[str, "SimBackend"] = {}


class SimBackend(Backend):
    backend_id = "sim"

    _instances = 0

    def __init__(self, params: SchemeParams, noise_model: NoiseModel | None = None,
                 test_mode: bool = True, keyset_id: str | None = None):
        if keyset_id is None:
            SimBackend._instances += 1
            keyset_id = f"sim-keyset-{SimBackend._instances}"
        super().__init__(params, keyset_id)
        self.noise_model = noise_model or NoiseModel()
        self._sigma = self.noise_model.resolved_sigma(params) if self.noise_model.enabled else 0.0
        self.test_mode = test_mode
        _SIM_BACKENDS[keyset_id] = self

    # Counter-based generator: the perturbation of a value depends only on
    # the seed and the value's serial, so results are schedule-independent.
    def _noise(self, serial: int, sigma: float, n: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(key=self.noise_model.rng_seed + serial))
        return rng.normal(0.0, sigma, size=n)

    def _maybe_perturb(self, values: np.ndarray, serial: int, sigma: float) -> np.ndarray:
        if not self.noise_model.enabled or sigma <= 0.0:
            return values
        return values + self._noise(serial, sigma, values.shape[0])

    def _payload_elementwise(self, kind: str, a: CipherVector, b, out_level: int):
        av = a.payload.values
        acc = a.payload.noise_accumulator
        if isinstance(b, CipherVector):
            bv = b.payload.values
            acc = max(acc, b.payload.noise_accumulator)
        else:
            bv = b.values
        op = kind[:3]
        if op == "add":
            return SimCipher(av + bv, acc, check=False)
        if op == "sub":
            return SimCipher(av - bv, acc, check=False)
        out = av * bv
        if self.noise_model.enabled:
            out = self._maybe_perturb(out, next(self._serials), self._sigma)
            acc += self._sigma
        return SimCipher(out, acc)

    def _payload_rotate(self, a: CipherVector, k: int):
        v = a.payload.values
        v = np.concatenate((v[k:], v[:k])) if k else v.copy()
        return SimCipher(v, a.payload.noise_accumulator, check=False)

    def _payload_encrypt(self, pv: PlainVector, level: int, serial: int):
        return SimCipher(values=pv.values.copy())

    def _payload_decrypt(self, cv: CipherVector) -> np.ndarray:
        return cv.payload.values.copy()

    def _payload_bootstrap(self, cv: CipherVector, serial: int):
        sigma = self.noise_model.bootstrap_sigma
        values = self._maybe_perturb(cv.payload.values, serial, sigma)
        acc = cv.payload.noise_accumulator
        if self.noise_model.enabled and sigma > 0.0:
            acc += sigma
        return SimCipher(values=values, noise_accumulator=acc)

    # -- ciphertext blobs (model containers) -------------------------------

    def serialize_cipher(self, cv: CipherVector) -> bytes:
        tail = struct.pack("<IdI", cv.level_remaining, cv.scale_bits, cv.depth)
        return dump_state(cv) + tail

    def deserialize_cipher(self, blob: bytes) -> CipherVector:
        tail_len = struct.calcsize("<IdI")
        values = load_state(blob[:-tail_len])
        level, scale_bits, depth = struct.unpack("<IdI", blob[-tail_len:])
        return CipherVector(
            payload=SimCipher(values=values),
            level_remaining=level,
            scale_bits=scale_bits,
            depth=depth,
            backend_id=self.backend_id,
            keyset_id=self.keyset_id,
            serial=next(self._serials),
        )


def snapshot(cv: CipherVector) -> PlainVector:
    """Inspection hook for test builds: read slots without key ceremony."""
    backend = _backend_of(cv)
    if not backend.test_mode:
        raise SnapshotDisabled("snapshot is disabled in release configuration")
    return PlainVector(values=cv.payload.values.copy(), scale_bits=cv.scale_bits)


def _backend_of(cv: CipherVector) -> SimBackend:
    if cv.backend_id != "sim" or not isinstance(cv.payload, SimCipher):
        raise HeError("snapshot only applies to simulator ciphertexts")
    backend = _SIM_BACKENDS.get(cv.keyset_id)
    if backend is None:
        raise HeError(f"no live simulator backend for keyset {cv.keyset_id}")
    return backend


def dump_state(cv: CipherVector) -> bytes:
    """Raw little-endian state dump with a 16-byte header (magic, version, N)."""
    values = cv.payload.values
    head = struct.pack("<4sIQ", STATE_MAGIC, STATE_VERSION, values.shape[0] * 2)
    return head + values.astype("<f8").tobytes()


def load_state(blob: bytes) -> np.ndarray:
    if len(blob) < 16:
        raise SerializationError("state dump shorter than its header")
    magic, version, n = struct.unpack("<4sIQ", blob[:16])
    if magic != STATE_MAGIC:
        raise SerializationError(f"bad state magic {magic!r}")
    if version != STATE_VERSION:
        raise SerializationError(f"unsupported state version {version}")
    slots = n // 2
    body = blob[16:]
    if len(body) != slots * 8:
        raise SerializationError("state dump body length mismatch")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
