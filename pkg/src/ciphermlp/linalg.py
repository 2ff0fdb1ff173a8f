"""Rotation-based aggregate sums and the two packed vector-matrix products.

All four operations run on either encrypted or plaintext grids; the
plaintext path mirrors the exact same schedules with raw arrays and is used
by pack/unpack round-trip tests.
"""

from __future__ import annotations

import numpy as np

from .api import CipherVector, Evaluator, PlainVector
from .errors import IncompatibleOperands
from .packing import (
    Format,
    PackedMatrix,
    col_replicate_schedule,
    col_sum_schedule,
    first_column_mask,
    row_sum_schedule,
)

Slots = CipherVector | PlainVector


def _add(x: Slots, y: Slots, ev: Evaluator | None) -> Slots:
    if isinstance(x, CipherVector):
        return ev.add(x, y)
    if isinstance(y, CipherVector):
        return ev.add(y, x)
    return PlainVector(values=x.values + y.values, scale_bits=x.scale_bits)


def _mul(x: Slots, y: Slots, ev: Evaluator | None) -> Slots:
    if isinstance(x, CipherVector):
        return ev.mul(x, y)
    if isinstance(y, CipherVector):
        return ev.mul(y, x)
    return PlainVector(values=x.values * y.values, scale_bits=x.scale_bits)


def _rotate(x: Slots, k: int, ev: Evaluator | None) -> Slots:
    if isinstance(x, CipherVector):
        return ev.rotate(x, k)
    return PlainVector(values=np.roll(x.values, -k), scale_bits=x.scale_bits)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise IncompatibleOperands(msg)


def sum_rows(w: PackedMatrix, ev: Evaluator | None = None) -> PackedMatrix:
    """Replicate the column-wise sums of the grid into every row.

    Consumes no depth; log2(r) rotations.  Correct only because the grid
    fills the ciphertext exactly, so row shifts wrap within the grid.
    """
    s = w.payload
    for shift in row_sum_schedule(w.shape):
        s = _add(s, _rotate(s, shift, ev), ev)
    return PackedMatrix(shape=w.shape, format=Format.REPEATED,
                        logical_dims=(w.shape.c,), payload=s)


def sum_cols(w: PackedMatrix, mask: PlainVector | None = None,
             ev: Evaluator | None = None) -> PackedMatrix:
    """Replicate the row-wise sums of the grid into every column.

    Three steps in contract order: accumulate (leaves corrupted tail slots),
    mask the first column (the single depth unit), replicate rightwards.
    """
    if mask is None:
        mask = first_column_mask(w.shape)
    _require(mask.values.shape[0] == w.shape.slots, "mask length does not match grid")
    u = w.payload
    for shift in col_sum_schedule(w.shape):
        u = _add(u, _rotate(u, shift, ev), ev)
    u = _mul(u, mask, ev)
    s = u
    for shift in col_replicate_schedule(w.shape):
        s = _add(s, _rotate(s, shift, ev), ev)
    return PackedMatrix(shape=w.shape, format=Format.EXPANDED,
                        logical_dims=(w.shape.r,), payload=s)


def re_matmul(a: PackedMatrix, w: PackedMatrix, ev: Evaluator | None = None) -> PackedMatrix:
    """Vector-matrix product via summation across rows: expanded in, repeated out.

    Depth 1 (the element-wise multiply), log2(r) rotations.
    """
    _require(a.format is Format.EXPANDED, f"left operand must be expanded, got {a.format.value}")
    _require(w.format in (Format.ROW_WISE, Format.COL_WISE),
             f"right operand must be a packed matrix, got {w.format.value}")
    _require(a.shape == w.shape, "operands must share one grid shape")
    d, k = _oriented_dims(w)
    _require(a.logical_dims[0] == d,
             f"vector length {a.logical_dims[0]} does not match matrix input dim {d}")
    prod = _mul(a.payload, w.payload, ev)
    out = sum_rows(PackedMatrix(a.shape, Format.ROW_WISE, (d, k), prod), ev)
    return out.with_payload(out.payload, logical_dims=(k,))


def ce_matmul(a: PackedMatrix, w: PackedMatrix, ev: Evaluator | None = None) -> PackedMatrix:
    """Vector-matrix product via summation across columns: repeated in, expanded out.

    Depth 2 (element-wise multiply plus the masking step), 2*log2(c) rotations.
    """
    _require(a.format is Format.REPEATED, f"left operand must be repeated, got {a.format.value}")
    _require(w.format in (Format.COL_WISE, Format.ROW_WISE),
             f"right operand must be a packed matrix, got {w.format.value}")
    _require(a.shape == w.shape, "operands must share one grid shape")
    d, k = _oriented_dims_colwise(w)
    _require(a.logical_dims[0] == d,
             f"vector length {a.logical_dims[0]} does not match matrix input dim {d}")
    prod = _mul(a.payload, w.payload, ev)
    out = sum_cols(PackedMatrix(a.shape, Format.COL_WISE, (d, k), prod), None, ev)
    return out.with_payload(out.payload, logical_dims=(k,))


def _oriented_dims(w: PackedMatrix) -> tuple[int, int]:
    """(input dim along rows, output dim along cols) of a packed matrix grid."""
    d, k = w.logical_dims
    if w.format is Format.ROW_WISE:
        return d, k
    return k, d  # column-wise stores the transpose


def _oriented_dims_colwise(w: PackedMatrix) -> tuple[int, int]:
    """(input dim along cols, output dim along rows) of a packed matrix grid."""
    d, k = w.logical_dims
    if w.format is Format.COL_WISE:
        return d, k
    return k, d
