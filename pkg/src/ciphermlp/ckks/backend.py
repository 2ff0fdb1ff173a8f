"""Leveled CKKS realization of the homomorphic contract at desk scale.

Ciphertexts rest in the coefficient domain; multiplies tensor in NTT form,
relinearize through the per-limb switching keys and rescale one chain entry.
Scales follow the level-indexed schedule exactly, so operands at one level
always share one scale; cross-level additions re-scale the fresher operand
on its way down (a representation change, not an algorithmic multiply, so
the depth ledger never sees it).
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from typing import Iterable

import numpy as np

from ..api import Backend, CipherVector, KeyCustodian, PlainVector
from ..errors import HeError, IncompatibleOperands, SerializationError
from ..params import SchemeParams
from .encoding import SlotEncoder
from .keys import EvalKeys, SecretKey, generate_eval_keys, key_switch
from .ring import (
    ChainContext,
    RingElement,
    apply_automorphism,
    divide_round_by_primes,
    make_element,
    sample_gaussian_coeffs,
    sample_uniform,
)

CT_MAGIC = b"RBCT"
KEY_MAGIC = b"RBKY"
SERIAL_VERSION = 1


@dataclasses.dataclass
class CkksCiphertext:
    """Component pair at one chain level; both parts share that modulus."""

    c0: RingElement
    c1: RingElement
    level: int


class CkksBackend(Backend):
    backend_id = "ckks"

    _instances = 0

    def __init__(self, params: SchemeParams, rotation_indices: Iterable[int] = (),
                 rng_seed: int = 0, bootstrap_eps: float = 0.0,
                 keyset_id: str | None = None, _secret: np.ndarray | None = None):
        if keyset_id is None:
            CkksBackend._instances += 1
            keyset_id = f"ckks-keyset-{CkksBackend._instances}"
        super().__init__(params, keyset_id)
        self.ctx = ChainContext(params)
        self.encoder = SlotEncoder(self.ctx)
        self.rng_seed = rng_seed
        self.bootstrap_eps = bootstrap_eps
        self.rotation_indices = frozenset(int(k) for k in rotation_indices)
        rng = np.random.default_rng(rng_seed)
        self.sk = SecretKey(self.ctx, rng)
        if _secret is not None:
            self.sk.coeffs = _secret.astype(np.int64)
            self.sk.s_full = make_element(self.ctx, self.ctx.all_primes,
                                          self.sk.coeffs).to_ntt()
        steps = {k % params.slot_count for k in self.rotation_indices} - {0}
        self.eval_keys: EvalKeys = generate_eval_keys(self.ctx, self.sk, steps, rng)
        self._bs_rng = np.random.default_rng(rng_seed + 0x5eed)

    # -- helpers ---------------------------------------------------------------

    def _scale(self, level: int) -> float:
        return self.ctx.scale_at[level]

    def _restrict_pair(self, ct: CkksCiphertext, level: int) -> CkksCiphertext:
        primes = tuple(self.ctx.limbs_at(level))
        return CkksCiphertext(ct.c0.restrict(primes), ct.c1.restrict(primes), level)

    def _rescale_pair(self, ct: CkksCiphertext) -> CkksCiphertext:
        drops = list(reversed(self.ctx.entry_primes[ct.level]))
        return CkksCiphertext(
            divide_round_by_primes(ct.c0.to_coeff(), drops),
            divide_round_by_primes(ct.c1.to_coeff(), drops),
            ct.level - 1,
        )

    def _adjust_to_level(self, ct: CkksCiphertext, target: int) -> CkksCiphertext:
        """Bring a fresher ciphertext down while landing on the target scale.

        Dropping limbs keeps the scale, so the last entry is consumed by a
        scalar multiply that retargets the scale schedule exactly.
        """
        if ct.level == target:
            return ct
        if ct.level < target:
            raise IncompatibleOperands("cannot raise a ciphertext's level")
        origin_scale = self._scale(ct.level)  # limb drops keep the value's scale
        staging = target + 1
        ct = self._restrict_pair(ct, staging)
        s_star = self._scale(target) * self.ctx.entry_products[staging] / origin_scale
        factor = int(np.rint(s_star))
        scalars = {p: factor for p in ct.c0.primes}
        adjusted = CkksCiphertext(ct.c0.scalar_mul(scalars), ct.c1.scalar_mul(scalars),
                                  staging)
        return self._rescale_pair(adjusted)

    def _encode_at(self, values: np.ndarray, level: int) -> RingElement:
        return self.encoder.encode(values, self._scale(level),
                                   self.ctx.limbs_at(level),
                                   self.ctx.modulus_at(level))

    def _relinearize(self, d2: RingElement) -> tuple[RingElement, RingElement]:
        return key_switch(self.ctx, d2, self.eval_keys.relin)

    # -- contract hooks ----------------------------------------------------------

    def _payload_elementwise(self, kind: str, a: CipherVector, b, out_level: int):
        ct_a: CkksCiphertext = a.payload
        op = kind[:3]
        if isinstance(b, CipherVector):
            ct_b: CkksCiphertext = b.payload
            in_level = out_level + 1 if op == "mul" else out_level
            ct_a = self._adjust_to_level(ct_a, in_level)
            ct_b = self._adjust_to_level(ct_b, in_level)
            if op == "add":
                return CkksCiphertext(ct_a.c0.add(ct_b.c0), ct_a.c1.add(ct_b.c1), in_level)
            if op == "sub":
                return CkksCiphertext(ct_a.c0.sub(ct_b.c0), ct_a.c1.sub(ct_b.c1), in_level)
            a0, a1 = ct_a.c0.to_ntt(), ct_a.c1.to_ntt()
            b0, b1 = ct_b.c0.to_ntt(), ct_b.c1.to_ntt()
            d0 = a0.mul(b0)
            d1 = a0.mul(b1).add(a1.mul(b0))
            d2 = a1.mul(b1)
            r0, r1 = self._relinearize(d2)
            full = CkksCiphertext(d0.to_coeff().add(r0), d1.to_coeff().add(r1), in_level)
            return self._rescale_pair(full)
        # plaintext operand
        in_level = ct_a.level
        values = b.values
        if op == "mul":
            pt = self._encode_at(values, in_level).to_ntt()
            prod = CkksCiphertext(ct_a.c0.to_ntt().mul(pt).to_coeff(),
                                  ct_a.c1.to_ntt().mul(pt).to_coeff(), in_level)
            return self._rescale_pair(prod)
        pt = self._encode_at(values if op == "add" else -values, in_level)
        return CkksCiphertext(ct_a.c0.add(pt), ct_a.c1.copy(), in_level)

    def _payload_rotate(self, a: CipherVector, k: int):
        ct: CkksCiphertext = a.payload
        if k == 0:
            return CkksCiphertext(ct.c0.copy(), ct.c1.copy(), ct.level)
        galois = self.eval_keys.galois_for_step.get(k)
        if galois is None:
            galois = pow(5, k, 2 * self.params.poly_degree)
        tables = self.eval_keys.automorphisms.get(galois)
        if tables is None:
            from .ring import automorphism_tables

            tables = automorphism_tables(self.params.poly_degree, galois)
        ksk = self.eval_keys.rotation_key(galois)
        c0r = apply_automorphism(ct.c0.to_coeff(), *tables)
        c1r = apply_automorphism(ct.c1.to_coeff(), *tables)
        r0, r1 = key_switch(self.ctx, c1r, ksk)
        return CkksCiphertext(c0r.add(r0), r1, ct.level)

    def _encrypt_values(self, values: np.ndarray, level: int) -> CkksCiphertext:
        rng = np.random.default_rng((self.rng_seed, next(self._serials)))
        primes = self.ctx.limbs_at(level)
        m = self._encode_at(values, level)
        a = sample_uniform(self.ctx, primes, rng, ntt=True)
        e = make_element(self.ctx, primes,
                         sample_gaussian_coeffs(self.ctx, rng, 3.2))
        s = self.sk.restricted(tuple(primes))
        c0 = a.mul(s).neg().to_coeff().add(m).add(e)
        return CkksCiphertext(c0, a.to_coeff(), level)

    def _payload_encrypt(self, pv: PlainVector, level: int, serial: int):
        return self._encrypt_values(pv.values, level)

    def _decrypt_values(self, ct: CkksCiphertext) -> np.ndarray:
        s = self.sk.restricted(ct.c0.primes)
        phase = ct.c0.add(ct.c1.mul(s).to_coeff())
        return self.encoder.decode(phase, self._scale(ct.level))

    def _payload_decrypt(self, cv: CipherVector) -> np.ndarray:
        return self._decrypt_values(cv.payload)

    def _payload_bootstrap(self, cv: CipherVector, serial: int):
        """Custodian-mediated refresh: decrypt, optionally perturb, re-encrypt.

        The decrypted values carry whatever error the slots already embed;
        re-encoding keeps it, matching the contract that a refresh does not
        clean accumulated value error.
        """
        values = self._decrypt_values(cv.payload)
        if self.bootstrap_eps > 0.0:
            values = values + self._bs_rng.uniform(-self.bootstrap_eps,
                                                   self.bootstrap_eps, values.shape[0])
        return self._encrypt_values(values, self.params.refresh_level)

    # -- serialization ------------------------------------------------------------

    def serialize_cipher(self, cv: CipherVector) -> bytes:
        ct: CkksCiphertext = cv.payload
        out = io.BytesIO()
        out.write(struct.pack("<4sIQId", CT_MAGIC, SERIAL_VERSION,
                              self.params.poly_degree, ct.level, cv.scale_bits))
        for comp in (ct.c0, ct.c1):
            coeff = comp.to_coeff()
            out.write(coeff.planes.astype("<u8").tobytes())
        return out.getvalue()

    def deserialize_cipher(self, blob: bytes) -> CipherVector:
        head_fmt = "<4sIQId"
        head = blob[: struct.calcsize(head_fmt)]
        magic, version, degree, level, scale_bits = struct.unpack(head_fmt, head)
        if magic != CT_MAGIC:
            raise SerializationError(f"bad ciphertext magic {magic!r}")
        if version != SERIAL_VERSION:
            raise SerializationError(f"unsupported ciphertext version {version}")
        if degree != self.params.poly_degree:
            raise SerializationError("ciphertext degree does not match parameters")
        primes = tuple(self.ctx.limbs_at(level))
        plane_bytes = len(primes) * degree * 8
        body = blob[struct.calcsize(head_fmt):]
        if len(body) != 2 * plane_bytes:
            raise SerializationError("ciphertext body length mismatch")
        comps = []
        for i in range(2):
            raw = np.frombuffer(body[i * plane_bytes:(i + 1) * plane_bytes], dtype="<u8")
            comps.append(RingElement(self.ctx, primes,
                                     raw.reshape(len(primes), degree).astype(np.uint64),
                                     ntt=False))
        ct = CkksCiphertext(comps[0], comps[1], level)
        return CipherVector(
            payload=ct, level_remaining=level, scale_bits=scale_bits,
            depth=self.params.refresh_level - level if level < self.params.refresh_level else 0,
            backend_id=self.backend_id, keyset_id=self.keyset_id,
            serial=next(self._serials),
        )


def save_custodian(custodian: KeyCustodian) -> bytes:
    """Key container: parameters, rotation indices and the secret coefficients.

    Evaluation keys are regenerated on load from the stored secret and seed;
    at desk scale that trades a few seconds of load time for a small file.
    """
    backend = custodian.backend
    if not isinstance(backend, CkksBackend):
        raise SerializationError("key files apply to the CKKS backend")
    out = io.BytesIO()
    out.write(struct.pack("<4sIQ", KEY_MAGIC, SERIAL_VERSION, backend.params.poly_degree))
    out.write(backend.params.digest())
    params_blob = json.dumps(dataclasses.asdict(backend.params), sort_keys=True).encode()
    out.write(struct.pack("<I", len(params_blob)))
    out.write(params_blob)
    rots = sorted(backend.rotation_indices)
    out.write(struct.pack("<I", len(rots)))
    out.write(struct.pack(f"<{len(rots)}q", *rots))
    out.write(struct.pack("<qd", backend.rng_seed, backend.bootstrap_eps))
    out.write(backend.sk.coeffs.astype("<i1").tobytes())
    return out.getvalue()


def load_custodian(blob: bytes) -> KeyCustodian:
    buf = io.BytesIO(blob)
    magic, version, degree = struct.unpack("<4sIQ", buf.read(16))
    if magic != KEY_MAGIC:
        raise SerializationError(f"bad key magic {magic!r}")
    if version != SERIAL_VERSION:
        raise SerializationError(f"unsupported key version {version}")
    digest = buf.read(32)
    (n_params,) = struct.unpack("<I", buf.read(4))
    raw = json.loads(buf.read(n_params).decode())
    raw["modulus_chain"] = tuple(raw["modulus_chain"])
    params = SchemeParams(**raw)
    if params.digest() != digest:
        raise SerializationError("key file parameter digest mismatch")
    (n_rots,) = struct.unpack("<I", buf.read(4))
    rots = struct.unpack(f"<{n_rots}q", buf.read(8 * n_rots))
    rng_seed, eps = struct.unpack("<qd", buf.read(16))
    secret = np.frombuffer(buf.read(degree), dtype="<i1").astype(np.int64)
    backend = CkksBackend(params, rotation_indices=rots, rng_seed=rng_seed,
                          bootstrap_eps=eps, _secret=secret)
    return KeyCustodian(backend, rots)
