"""Trained-model container: grid shape, parameter digest, per-block blobs."""

from __future__ import annotations

import dataclasses
import io
import json
import struct

from .api import KeyCustodian
from .errors import SerializationError
from .nn import BlockKind, EncryptedMLP, Hyperparams, LocalLossBlock
from .packing import Architecture, Format, GridShape, PackedMatrix

MODEL_MAGIC = b"RBOT"
MODEL_VERSION = 1

_KIND_CODES = {BlockKind.RE: 1, BlockKind.CE: 2}
_KIND_FROM_CODE = {v: k for k, v in _KIND_CODES.items()}


def _write_blob(out: io.BytesIO, blob: bytes) -> None:
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)


def _read_blob(buf: io.BytesIO) -> bytes:
    raw = buf.read(4)
    if len(raw) != 4:
        raise SerializationError("truncated container")
    (n,) = struct.unpack("<I", raw)
    blob = buf.read(n)
    if len(blob) != n:
        raise SerializationError("truncated blob")
    return blob


def save_model(model: EncryptedMLP, custodian: KeyCustodian) -> bytes:
    backend = custodian.backend
    out = io.BytesIO()
    out.write(struct.pack("<4sIII", MODEL_MAGIC, MODEL_VERSION,
                          model.shape.r, model.shape.c))
    out.write(model.params.digest())
    meta = {
        "hyper": dataclasses.asdict(model.hyper),
        "arch": {"input_dim": model.arch.input_dim,
                 "hidden": list(model.arch.hidden),
                 "classes": model.arch.classes},
        "chain_rule": model.chain_rule,
        "delayed_classifier_grad": model.delayed_classifier_grad,
    }
    _write_blob(out, json.dumps(meta, sort_keys=True).encode())
    out.write(struct.pack("<I", len(model.blocks)))
    for block in model.blocks:
        out.write(struct.pack("<BIIII", _KIND_CODES[block.kind], block.index,
                              block.in_dim, block.hidden_dim, block.out_dim))
        for pm in (block.layer_weights, block.classifier_weights,
                   block.layer_velocity, block.classifier_velocity):
            _write_blob(out, backend.serialize_cipher(pm.payload))
    return out.getvalue()


def load_model(blob: bytes, custodian: KeyCustodian) -> EncryptedMLP:
    buf = io.BytesIO(blob)
    head = buf.read(struct.calcsize("<4sIII"))
    if len(head) != struct.calcsize("<4sIII"):
        raise SerializationError("truncated model header")
    magic, version, r, c = struct.unpack("<4sIII", head)
    if magic != MODEL_MAGIC:
        raise SerializationError(f"bad model magic {magic!r}")
    if version != MODEL_VERSION:
        raise SerializationError(f"unsupported model version {version}")
    digest = buf.read(32)
    if digest != custodian.params.digest():
        raise SerializationError("model was trained under different scheme parameters")
    meta = json.loads(_read_blob(buf).decode())
    shape = GridShape(r=r, c=c)
    arch = Architecture(input_dim=meta["arch"]["input_dim"],
                        hidden=tuple(meta["arch"]["hidden"]),
                        classes=meta["arch"]["classes"])
    hyper = Hyperparams(**meta["hyper"])
    (n_blocks,) = struct.unpack("<I", buf.read(4))
    backend = custodian.backend
    blocks = []
    for _ in range(n_blocks):
        raw = buf.read(struct.calcsize("<BIIII"))
        code, index, in_dim, hidden_dim, out_dim = struct.unpack("<BIIII", raw)
        kind = _KIND_FROM_CODE.get(code)
        if kind is None:
            raise SerializationError(f"unknown block kind code {code}")
        layer_fmt = Format.ROW_WISE if kind is BlockKind.RE else Format.COL_WISE
        clf_fmt = Format.COL_WISE if kind is BlockKind.RE else Format.ROW_WISE
        payloads = [backend.deserialize_cipher(_read_blob(buf)) for _ in range(4)]
        mk = lambda payload, fmt, dims: PackedMatrix(
            shape=shape, format=fmt, logical_dims=dims, payload=payload)
        blocks.append(LocalLossBlock(
            kind=kind, index=index, in_dim=in_dim, hidden_dim=hidden_dim,
            out_dim=out_dim,
            layer_weights=mk(payloads[0], layer_fmt, (in_dim, hidden_dim)),
            classifier_weights=mk(payloads[1], clf_fmt, (hidden_dim, out_dim)),
            layer_velocity=mk(payloads[2], layer_fmt, (in_dim, hidden_dim)),
            classifier_velocity=mk(payloads[3], clf_fmt, (hidden_dim, out_dim)),
        ))
    return EncryptedMLP(blocks=blocks, shape=shape, params=custodian.params,
                        hyper=hyper, arch=arch,
                        chain_rule=meta["chain_rule"],
                        delayed_classifier_grad=meta["delayed_classifier_grad"])
