"""Slot-grid packing: four layout formats plus grid-dimension planning.

A logical vector or matrix is embedded into an r x c grid flattened row-major
into the N/2 ciphertext slots.  The grid always fills the ciphertext exactly
(r*c = N/2); rotation-based summation relies on that to wrap cyclically
within the grid.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import math
from typing import Union

import numpy as np

from .api import CipherVector, KeyCustodian, PlainVector
from .errors import CapacityError, IncompatibleOperands


class Format(enum.Enum):
    REPEATED = "repeated"
    EXPANDED = "expanded"
    ROW_WISE = "row_wise"
    COL_WISE = "col_wise"


@dataclasses.dataclass(frozen=True)
class GridShape:
    """Power-of-two grid dimensions; r*c must equal the slot count in use."""

    r: int
    c: int

    def __post_init__(self):
        for name, v in (("r", self.r), ("c", self.c)):
            if v < 1 or (v & (v - 1)) != 0:
                raise IncompatibleOperands(f"{name} must be a power of two, got {v}")

    @property
    def slots(self) -> int:
        return self.r * self.c


Payload = Union[CipherVector, PlainVector]


@dataclasses.dataclass(frozen=True)
class PackedMatrix:
    """A logical value grid bound to one ciphertext or plaintext vector."""

    shape: GridShape
    format: Format
    logical_dims: tuple[int, ...]
    payload: Payload

    def __post_init__(self):
        n = _payload_slots(self.payload)
        if n is not None and n != self.shape.slots:
            raise IncompatibleOperands(
                f"payload holds {n} slots but grid {self.shape.r}x{self.shape.c} "
                f"needs {self.shape.slots}"
            )

    @property
    def encrypted(self) -> bool:
        return isinstance(self.payload, CipherVector)

    def with_payload(self, payload: Payload, format: Format | None = None,
                     logical_dims: tuple[int, ...] | None = None) -> "PackedMatrix":
        return PackedMatrix(
            shape=self.shape,
            format=self.format if format is None else format,
            logical_dims=self.logical_dims if logical_dims is None else logical_dims,
            payload=payload,
        )


def _payload_slots(payload: Payload) -> int | None:
    if isinstance(payload, PlainVector):
        return payload.values.shape[0]
    return None  # ciphertext slot count is checked by the backend


# -- grid builders ------------------------------------------------------------


def _check_fits(format: Format, dims: tuple[int, ...], shape: GridShape) -> None:
    r, c = shape.r, shape.c
    if format is Format.REPEATED:
        (d,) = dims
        ok = d <= c
    elif format is Format.EXPANDED:
        (d,) = dims
        ok = d <= r
    elif format is Format.ROW_WISE:
        d, k = dims
        ok = d <= r and k <= c
    else:
        d, k = dims
        ok = k <= r and d <= c
    if not ok:
        raise IncompatibleOperands(
            f"{format.value} object of dims {dims} does not fit grid {r}x{c}"
        )


def grid_array(x, format: Format, shape: GridShape) -> np.ndarray:
    """Lay out a vector or matrix as the flattened r*c slot array."""
    arr = np.asarray(x, dtype=np.float64)
    grid = np.zeros((shape.r, shape.c), dtype=np.float64)
    if format in (Format.REPEATED, Format.EXPANDED):
        if arr.ndim != 1:
            raise IncompatibleOperands(f"{format.value} format packs vectors, got shape {arr.shape}")
        _check_fits(format, (arr.shape[0],), shape)
        if format is Format.REPEATED:
            grid[:, : arr.shape[0]] = arr[np.newaxis, :]
        else:
            grid[: arr.shape[0], :] = arr[:, np.newaxis]
    else:
        if arr.ndim != 2:
            raise IncompatibleOperands(f"{format.value} format packs matrices, got shape {arr.shape}")
        d, k = arr.shape
        _check_fits(format, (d, k), shape)
        if format is Format.ROW_WISE:
            grid[:d, :k] = arr
        else:
            grid[:k, :d] = arr.T
    return grid.reshape(-1)


def pack(x, format: Format, shape: GridShape, scale_bits: float = 0.0) -> PackedMatrix:
    """Pack a logical object into a plaintext grid; encrypt separately."""
    arr = np.asarray(x, dtype=np.float64)
    dims = tuple(arr.shape)
    flat = grid_array(arr, format, shape)
    return PackedMatrix(shape=shape, format=format, logical_dims=dims,
                        payload=PlainVector(values=flat, scale_bits=scale_bits))


def unpack(pm: PackedMatrix) -> np.ndarray:
    """Read the logical vector or matrix back out of a plaintext grid."""
    if not isinstance(pm.payload, PlainVector):
        raise IncompatibleOperands("unpack needs a plaintext payload; decrypt first")
    grid = pm.payload.values.reshape(pm.shape.r, pm.shape.c)
    if pm.format is Format.REPEATED:
        (d,) = pm.logical_dims
        return grid[0, :d].copy()
    if pm.format is Format.EXPANDED:
        (d,) = pm.logical_dims
        return grid[:d, 0].copy()
    d, k = pm.logical_dims
    if pm.format is Format.ROW_WISE:
        return grid[:d, :k].copy()
    return grid[:k, :d].T.copy()


def encrypt_packed(custodian: KeyCustodian, pm: PackedMatrix) -> PackedMatrix:
    if pm.encrypted:
        raise IncompatibleOperands("payload is already encrypted")
    return pm.with_payload(custodian.encrypt(pm.payload))


def decrypt_packed(custodian: KeyCustodian, pm: PackedMatrix) -> PackedMatrix:
    if not pm.encrypted:
        raise IncompatibleOperands("payload is not encrypted")
    return pm.with_payload(custodian.decrypt(pm.payload))


# -- masks and rotation schedules ---------------------------------------------


@functools.lru_cache(maxsize=None)
def first_column_mask(shape: GridShape, scale_bits: float = 0.0) -> PlainVector:
    """Binary mask selecting the first slot of each grid row."""
    mask = np.zeros(shape.slots, dtype=np.float64)
    mask[:: shape.c] = 1.0
    return PlainVector(values=mask, scale_bits=scale_bits)


def required_rotations(shape: GridShape) -> frozenset[int]:
    """Every rotation index the aggregate-sum schedules need on this grid."""
    log_r = shape.r.bit_length() - 1
    log_c = shape.c.bit_length() - 1
    rows = {shape.c * 2**t for t in range(log_r)}
    cols = {2**t for t in range(log_c)}
    backs = {-(2**t) for t in range(log_c)}
    return frozenset(rows | cols | backs)


def row_sum_schedule(shape: GridShape) -> list[int]:
    """Shift sequence accumulating column-wise sums, in contract order."""
    log_r = shape.r.bit_length() - 1
    return [shape.c * 2 ** (log_r - 1 - t) for t in range(log_r)]


def col_sum_schedule(shape: GridShape) -> list[int]:
    """Shift sequence accumulating row-wise sums, in contract order."""
    log_c = shape.c.bit_length() - 1
    return [2 ** (log_c - 1 - t) for t in range(log_c)]


def col_replicate_schedule(shape: GridShape) -> list[int]:
    """Negative shifts replicating the masked first column across each row."""
    log_c = shape.c.bit_length() - 1
    return [-(2**t) for t in range(log_c)]


# -- grid dimension planning ----------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Architecture:
    """MLP layout: input width, hidden widths k_1..k_H, class count."""

    input_dim: int
    hidden: tuple[int, ...]
    classes: int

    def __post_init__(self):
        if self.input_dim < 1 or self.classes < 1 or len(self.hidden) < 1:
            raise CapacityError("architecture needs positive dims and at least one layer")
        if any(k < 1 for k in self.hidden):
            raise CapacityError("layer widths must be positive")
        object.__setattr__(self, "hidden", tuple(int(k) for k in self.hidden))

    @property
    def depth(self) -> int:
        return len(self.hidden)

    def width(self, h: int) -> int:
        """k_h with k_0 = input width."""
        return self.input_dim if h == 0 else self.hidden[h - 1]


def packed_object_constraints(arch: Architecture) -> list[tuple[str, Format, tuple[int, ...]]]:
    """Every packed object a training run materializes, with its format.

    Blocks alternate: odd layers consume expanded activations against
    row-wise weights, even layers consume repeated activations against
    column-wise weights, and each classifier takes the opposite orientation.
    Gradients reuse these same layouts, so they add no new constraints.
    """
    objs: list[tuple[str, Format, tuple[int, ...]]] = []
    o = arch.classes
    for h in range(1, arch.depth + 1):
        k_in, k_h = arch.width(h - 1), arch.width(h)
        if h % 2 == 1:
            objs.append((f"activation_in[{h}]", Format.EXPANDED, (k_in,)))
            objs.append((f"layer_weights[{h}]", Format.ROW_WISE, (k_in, k_h)))
            objs.append((f"activation_out[{h}]", Format.REPEATED, (k_h,)))
            objs.append((f"classifier_weights[{h}]", Format.COL_WISE, (k_h, o)))
            objs.append((f"local_output[{h}]", Format.EXPANDED, (o,)))
        else:
            objs.append((f"activation_in[{h}]", Format.REPEATED, (k_in,)))
            objs.append((f"layer_weights[{h}]", Format.COL_WISE, (k_in, k_h)))
            objs.append((f"activation_out[{h}]", Format.EXPANDED, (k_h,)))
            objs.append((f"classifier_weights[{h}]", Format.ROW_WISE, (k_h, o)))
            objs.append((f"local_output[{h}]", Format.REPEATED, (o,)))
    return objs


def _format_fits(format: Format, dims: tuple[int, ...], r: int, c: int) -> bool:
    if format is Format.REPEATED:
        return dims[0] <= c
    if format is Format.EXPANDED:
        return dims[0] <= r
    if format is Format.ROW_WISE:
        return dims[0] <= r and dims[1] <= c
    return dims[1] <= r and dims[0] <= c


def minimal_grid(arch: Architecture) -> tuple[int, int]:
    """Smallest power-of-two (r, c) satisfying every packed-object constraint."""
    r_min, c_min = 1, 1
    for _, fmt, dims in packed_object_constraints(arch):
        if fmt is Format.REPEATED:
            c_min = max(c_min, dims[0])
        elif fmt is Format.EXPANDED:
            r_min = max(r_min, dims[0])
        elif fmt is Format.ROW_WISE:
            r_min = max(r_min, dims[0])
            c_min = max(c_min, dims[1])
        else:
            r_min = max(r_min, dims[1])
            c_min = max(c_min, dims[0])
    up = lambda v: 2 ** math.ceil(math.log2(v))
    return up(r_min), up(c_min)


def compute_dims(arch: Architecture, slot_count: int) -> GridShape:
    """Plan the grid: minimal constraint-satisfying dims, rows inflated to
    fill the ciphertext exactly (the row-sum wraparound requires r*c = N/2)."""
    r_min, c_min = minimal_grid(arch)
    if r_min * c_min > slot_count:
        raise CapacityError(
            f"architecture needs at least a {r_min}x{c_min} grid "
            f"({r_min * c_min} slots) but only {slot_count} slots are available"
        )
    c = c_min
    r = slot_count // c
    shape = GridShape(r=r, c=c)
    for name, fmt, dims in packed_object_constraints(arch):
        if not _format_fits(fmt, dims, shape.r, shape.c):
            raise CapacityError(f"planned grid {r}x{c} cannot hold {name}")
    return shape
