"""Backend-neutral homomorphic SIMD-vector contract.

Every backend exposes the same small surface: slot-wise add/sub/mul against
ciphertexts or plaintext vectors, cyclic slot rotation, and a
custodian-mediated refresh.  Level bookkeeping and the multiplicative-depth
ledger live here so both backends account identically by construction.
"""

from __future__ import annotations

import dataclasses
import itertools
import threading
from typing import Any, Iterable

import numpy as np

from .errors import HeError, IncompatibleOperands, LevelExhausted, MissingRotationKey
from .params import SchemeParams

CT_KINDS = frozenset({"add_ct", "sub_ct", "mul_ct"})
PT_KINDS = frozenset({"add_pt", "sub_pt", "mul_pt"})
MUL_KINDS = frozenset({"mul_ct", "mul_pt"})
ALL_KINDS = CT_KINDS | PT_KINDS


@dataclasses.dataclass(frozen=True)
class PlainVector:
    """Unencrypted slot vector, always exactly N/2 long (zero-padded)."""

    values: np.ndarray
    scale_bits: float

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


def make_plain(values: Iterable[float], slot_count: int, scale_bits: float) -> PlainVector:
    arr = np.zeros(slot_count, dtype=np.float64)
    vals = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                      dtype=np.float64)
    if vals.size > slot_count:
        raise IncompatibleOperands(f"vector of length {vals.size} exceeds {slot_count} slots")
    arr[: vals.size] = vals
    return PlainVector(values=arr, scale_bits=scale_bits)


@dataclasses.dataclass(frozen=True)
class CipherVector:
    """Immutable handle to N/2 encrypted slots plus its ledger metadata.

    ``depth`` counts ciphertext multiplications (ct-ct or pt-ct) along the
    deepest path since the value was freshly encrypted or bootstrapped.
    """

    payload: Any
    level_remaining: int
    scale_bits: float
    depth: int
    backend_id: str
    keyset_id: str
    serial: int


class DepthLedger:
    """Tracks consumed depth per iteration plus bootstrap counts.

    Per-value consumed depth travels on the :class:`CipherVector` itself;
    the ledger aggregates the maximum observed inside iteration scopes.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.bootstrap_count = 0
        self.max_depth_seen = 0
        self._iteration_open = False
        self._iteration_max = 0
        self.iteration_depths: list[int] = []

    def observe(self, depth: int) -> None:
        # lock-free fast path: reads are racy but benign, updates take the lock
        if depth <= self.max_depth_seen and not (
                self._iteration_open and depth > self._iteration_max):
            return
        with self._lock:
            if depth > self.max_depth_seen:
                self.max_depth_seen = depth
            if self._iteration_open and depth > self._iteration_max:
                self._iteration_max = depth

    def count_bootstrap(self) -> None:
        with self._lock:
            self.bootstrap_count += 1

    def begin_iteration(self) -> None:
        with self._lock:
            if self._iteration_open:
                raise HeError("iteration scope already open")
            self._iteration_open = True
            self._iteration_max = 0

    def end_iteration(self) -> int:
        with self._lock:
            if not self._iteration_open:
                raise HeError("no iteration scope open")
            self._iteration_open = False
            self.iteration_depths.append(self._iteration_max)
            return self._iteration_max

    class _Scope:
        def __init__(self, ledger):
            self.ledger = ledger

        def __enter__(self):
            self.ledger.begin_iteration()
            return self.ledger

        def __exit__(self, *exc):
            self.ledger.end_iteration()
            return False

    def iteration(self) -> "DepthLedger._Scope":
        return DepthLedger._Scope(self)


class Backend:
    """Common machinery shared by the simulator and the CKKS backend.

    Subclasses implement the ``_payload_*`` hooks on their own payload type;
    level, scale and depth bookkeeping is identical across backends.
    """

    backend_id = "abstract"

    def __init__(self, params: SchemeParams, keyset_id: str):
        self.params = params
        self.keyset_id = keyset_id
        self.ledger = DepthLedger()
        self._serials = itertools.count()

    # -- hooks ------------------------------------------------------------

    def _payload_elementwise(self, kind: str, a: CipherVector, b, out_level: int):
        raise NotImplementedError

    def _payload_rotate(self, a: CipherVector, k: int):
        raise NotImplementedError

    def _payload_encrypt(self, pv: PlainVector, level: int, serial: int):
        raise NotImplementedError

    def _payload_decrypt(self, cv: CipherVector) -> np.ndarray:
        raise NotImplementedError

    def _payload_bootstrap(self, cv: CipherVector, serial: int):
        raise NotImplementedError

    # -- shared bookkeeping -------------------------------------------------

    def _wrap(self, payload, level: int, depth: int) -> CipherVector:
        cv = CipherVector(
            payload=payload,
            level_remaining=level,
            scale_bits=float(self.params.scale_bits),
            depth=depth,
            backend_id=self.backend_id,
            keyset_id=self.keyset_id,
            serial=next(self._serials),
        )
        self.ledger.observe(depth)
        return cv

    def _check_cipher(self, cv: CipherVector) -> None:
        if cv.backend_id != self.backend_id or cv.keyset_id != self.keyset_id:
            raise IncompatibleOperands(
                f"operand belongs to backend/keyset {cv.backend_id}/{cv.keyset_id}, "
                f"expected {self.backend_id}/{self.keyset_id}"
            )

    def elementwise(self, kind: str, a: CipherVector, b) -> CipherVector:
        if kind not in ALL_KINDS:
            raise HeError(f"unknown elementwise kind {kind!r}")
        self._check_cipher(a)
        if kind in CT_KINDS:
            if not isinstance(b, CipherVector):
                raise IncompatibleOperands(f"{kind} needs a ciphertext right operand")
            self._check_cipher(b)
            level = min(a.level_remaining, b.level_remaining)
            depth = max(a.depth, b.depth)
        else:
            if not isinstance(b, PlainVector):
                raise IncompatibleOperands(f"{kind} needs a plaintext right operand")
            if b.values.shape[0] != self.params.slot_count:
                raise IncompatibleOperands(
                    f"plaintext has {b.values.shape[0]} slots, expected {self.params.slot_count}"
                )
            level = a.level_remaining
            depth = a.depth
        if kind in MUL_KINDS:
            if level <= 0:
                raise LevelExhausted(f"{kind} at level {level}: modulus chain exhausted")
            level -= 1
            depth += 1
        payload = self._payload_elementwise(kind, a, b, level)
        return self._wrap(payload, level, depth)

    def rotate(self, a: CipherVector, k: int, allowed: frozenset[int]) -> CipherVector:
        self._check_cipher(a)
        norm = k % self.params.slot_count
        if norm == 0:
            return self._wrap(self._payload_rotate(a, 0), a.level_remaining, a.depth)
        if norm not in allowed:
            raise MissingRotationKey(f"no rotation key for index {k} (normalized {norm})")
        payload = self._payload_rotate(a, norm)
        return self._wrap(payload, a.level_remaining, a.depth)

    def encrypt(self, pv: PlainVector) -> CipherVector:
        if pv.values.shape[0] != self.params.slot_count:
            raise IncompatibleOperands(
                f"plaintext has {pv.values.shape[0]} slots, expected {self.params.slot_count}"
            )
        serial = next(self._serials)
        payload = self._payload_encrypt(pv, self.params.level, serial)
        cv = CipherVector(
            payload=payload,
            level_remaining=self.params.level,
            scale_bits=float(self.params.scale_bits),
            depth=0,
            backend_id=self.backend_id,
            keyset_id=self.keyset_id,
            serial=serial,
        )
        self.ledger.observe(0)
        return cv

    def decrypt(self, cv: CipherVector) -> PlainVector:
        self._check_cipher(cv)
        values = self._payload_decrypt(cv)
        return PlainVector(values=values, scale_bits=float(self.params.scale_bits))

    def bootstrap(self, cv: CipherVector) -> CipherVector:
        self._check_cipher(cv)
        serial = next(self._serials)
        payload = self._payload_bootstrap(cv, serial)
        out = CipherVector(
            payload=payload,
            level_remaining=self.params.refresh_level,
            scale_bits=float(self.params.scale_bits),
            depth=0,
            backend_id=self.backend_id,
            keyset_id=self.keyset_id,
            serial=serial,
        )
        self.ledger.count_bootstrap()
        self.ledger.observe(0)
        return out


class Evaluator:
    """Evaluation-only view of a keyset: no secret material, no decrypt."""

    def __init__(self, backend: Backend, rotation_indices: frozenset[int]):
        self.backend = backend
        self.params = backend.params
        self.rotation_indices = rotation_indices
        self._normalized = (
            frozenset(k % backend.params.slot_count for k in rotation_indices) - {0}
        )

    @property
    def ledger(self) -> DepthLedger:
        return self.backend.ledger

    def elementwise(self, kind: str, a: CipherVector, b) -> CipherVector:
        return self.backend.elementwise(kind, a, b)

    def add(self, a: CipherVector, b) -> CipherVector:
        kind = "add_ct" if isinstance(b, CipherVector) else "add_pt"
        return self.backend.elementwise(kind, a, b)

    def sub(self, a: CipherVector, b) -> CipherVector:
        kind = "sub_ct" if isinstance(b, CipherVector) else "sub_pt"
        return self.backend.elementwise(kind, a, b)

    def mul(self, a: CipherVector, b) -> CipherVector:
        kind = "mul_ct" if isinstance(b, CipherVector) else "mul_pt"
        return self.backend.elementwise(kind, a, b)

    def rotate(self, a: CipherVector, k: int) -> CipherVector:
        """Cyclic left shift by k slots; negative k shifts right."""
        return self.backend.rotate(a, k, self._normalized)

    def plain(self, values, scale_bits: float | None = None) -> PlainVector:
        bits = float(self.params.scale_bits) if scale_bits is None else scale_bits
        return make_plain(values, self.params.slot_count, bits)


class KeyCustodian:
    """Owner of the secret material; the only component allowed to decrypt.

    Training code receives only :class:`Evaluator` views, plus the custodian
    itself where the contract is explicitly custodian-mediated: encrypting
    inputs, decrypting the output head, and the debug bootstrap.
    """

    def __init__(self, backend: Backend, rotation_indices: Iterable[int]):
        self.backend = backend
        self.params = backend.params
        self.rotation_indices = frozenset(int(k) for k in rotation_indices)
        self.evaluator = Evaluator(backend, self.rotation_indices)
        self._decrypt_lock = threading.Lock()

    @property
    def ledger(self) -> DepthLedger:
        return self.backend.ledger

    def encrypt(self, pv: PlainVector) -> CipherVector:
        return self.backend.encrypt(pv)

    def decrypt(self, cv: CipherVector) -> PlainVector:
        with self._decrypt_lock:
            return self.backend.decrypt(cv)

    def bootstrap(self, cv: CipherVector) -> CipherVector:
        return self.backend.bootstrap(cv)

    def allows_rotation(self, k: int) -> bool:
        norm = k % self.params.slot_count
        return norm == 0 or norm in self.evaluator._normalized


def keygen(params: SchemeParams, rotation_indices: Iterable[int], backend: str = "sim",
           **backend_options) -> KeyCustodian:
    """Create key material plus rotation keys for exactly the given indices."""
    indices = frozenset(int(k) for k in rotation_indices)
    if backend == "sim":
        from .simbackend import SimBackend

        be = SimBackend(params, **backend_options)
    elif backend == "ckks":
        from .ckks.backend import CkksBackend

        be = CkksBackend(params, rotation_indices=indices, **backend_options)
    else:
        raise HeError(f"unknown backend {backend!r}")
    return KeyCustodian(be, indices)


# -- free-function surface mirroring the contract's operation names ----------


def elementwise(kind: str, a: CipherVector, b, ev: Evaluator) -> CipherVector:
    return ev.elementwise(kind, a, b)


def rotate(a: CipherVector, k: int, ev: Evaluator) -> CipherVector:
    return ev.rotate(a, k)


def bootstrap(custodian: KeyCustodian, a: CipherVector) -> CipherVector:
    return custodian.bootstrap(a)
