"""Encrypted local-loss blocks, the per-iteration training procedure, and
inference.

Each hidden layer is paired with its own private classifier; gradients never
cross block boundaries, which caps the multiplicative depth per iteration at
the deepest block's local computation.  Weight updates follow the
momentum-with-decay recurrence built from plaintext-constant multiplies only.
"""

from __future__ import annotations

import dataclasses
import enum
import functools

import numpy as np

from .api import Evaluator, KeyCustodian, PlainVector
from .errors import IncompatibleOperands
from .linalg import ce_matmul, re_matmul
from .packing import (
    Architecture,
    Format,
    GridShape,
    PackedMatrix,
    compute_dims,
    encrypt_packed,
    grid_array,
    pack,
    unpack,
)
from .params import SchemeParams


class BlockKind(enum.Enum):
    RE = "RE"
    CE = "CE"


@dataclasses.dataclass(frozen=True)
class Hyperparams:
    learning_rate: float
    decay_rate: float = 0.0
    momentum: float = 0.9
    iterations: int = 100
    batch_size: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise IncompatibleOperands("learning rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise IncompatibleOperands("momentum must lie in [0, 1)")
        if self.decay_rate < 0:
            raise IncompatibleOperands("decay rate must be >= 0")
        if self.batch_size < 1 or self.iterations < 1:
            raise IncompatibleOperands("batch size and iterations must be >= 1")


@dataclasses.dataclass
class LocalLossBlock:
    """One hidden layer, its activation, private classifier and velocities."""

    kind: BlockKind
    index: int
    in_dim: int
    hidden_dim: int
    out_dim: int
    layer_weights: PackedMatrix
    classifier_weights: PackedMatrix
    layer_velocity: PackedMatrix
    classifier_velocity: PackedMatrix
    prev_classifier_grad: PackedMatrix | None = None

    @property
    def grid(self) -> GridShape:
        return self.layer_weights.shape


@dataclasses.dataclass
class EncryptedMLP:
    """Alternating blocks sharing one grid shape and one keyset."""

    blocks: list[LocalLossBlock]
    shape: GridShape
    params: SchemeParams
    hyper: Hyperparams
    arch: Architecture
    chain_rule: bool = False
    delayed_classifier_grad: bool = False

    @property
    def depth(self) -> int:
        return len(self.blocks)


def block_kind(h: int) -> BlockKind:
    return BlockKind.RE if h % 2 == 1 else BlockKind.CE


def layer_format(kind: BlockKind) -> Format:
    return Format.ROW_WISE if kind is BlockKind.RE else Format.COL_WISE


def classifier_format(kind: BlockKind) -> Format:
    return Format.COL_WISE if kind is BlockKind.RE else Format.ROW_WISE


def activation_format(kind: BlockKind) -> Format:
    """Format of the block's input activations."""
    return Format.EXPANDED if kind is BlockKind.RE else Format.REPEATED


def init_weights(arch: Architecture, seed: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Seeded uniform(+-sqrt(1/fan_in)) init for every layer and classifier."""
    rng = np.random.default_rng(seed)
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for h in range(1, arch.depth + 1):
        k_in, k_h = arch.width(h - 1), arch.width(h)
        bound = np.sqrt(1.0 / k_in)
        w_layer = rng.uniform(-bound, bound, size=(k_in, k_h))
        bound_c = np.sqrt(1.0 / k_h)
        w_clf = rng.uniform(-bound_c, bound_c, size=(k_h, arch.classes))
        out[h] = (w_layer, w_clf)
    return out


def build_model(arch: Architecture, params: SchemeParams, hyper: Hyperparams,
                custodian: KeyCustodian, chain_rule: bool = False,
                delayed_classifier_grad: bool = False) -> EncryptedMLP:
    shape = compute_dims(arch, params.slot_count)
    weights = init_weights(arch, hyper.rng_seed)
    blocks = []
    for h in range(1, arch.depth + 1):
        kind = block_kind(h)
        w_layer, w_clf = weights[h]
        lw = encrypt_packed(custodian, pack(w_layer, layer_format(kind), shape))
        cw = encrypt_packed(custodian, pack(w_clf, classifier_format(kind), shape))
        lv = encrypt_packed(custodian, pack(np.zeros_like(w_layer), layer_format(kind), shape))
        cv = encrypt_packed(custodian, pack(np.zeros_like(w_clf), classifier_format(kind), shape))
        blocks.append(LocalLossBlock(
            kind=kind, index=h,
            in_dim=arch.width(h - 1), hidden_dim=arch.width(h), out_dim=arch.classes,
            layer_weights=lw, classifier_weights=cw,
            layer_velocity=lv, classifier_velocity=cv,
        ))
    return EncryptedMLP(blocks=blocks, shape=shape, params=params, hyper=hyper,
                        arch=arch, chain_rule=chain_rule,
                        delayed_classifier_grad=delayed_classifier_grad)


def pack_sample(x: np.ndarray, shape: GridShape, custodian: KeyCustodian) -> PackedMatrix:
    """First block consumes expanded activations: the raw input sample."""
    return encrypt_packed(custodian, pack(np.asarray(x, dtype=np.float64),
                                          Format.EXPANDED, shape))


def pack_labels(y_onehot: np.ndarray, shape: GridShape,
                custodian: KeyCustodian) -> tuple[PackedMatrix, PackedMatrix]:
    """Both label layouts, precomputed once per sample.

    Odd blocks emit expanded local outputs, even blocks repeated ones, so the
    loss needs the one-hot label in each format.
    """
    y = np.asarray(y_onehot, dtype=np.float64)
    y_exp = encrypt_packed(custodian, pack(y, Format.EXPANDED, shape))
    y_rep = encrypt_packed(custodian, pack(y, Format.REPEATED, shape))
    return y_exp, y_rep


# -- activation and loss --------------------------------------------------------


def poly_relu(z: PackedMatrix, ev: Evaluator) -> PackedMatrix:
    """Quadratic activation z*z + z; one depth unit, format preserved."""
    squared = ev.mul(z.payload, z.payload)
    return z.with_payload(ev.add(squared, z.payload))


@functools.lru_cache(maxsize=None)
def _ones_grid(format: Format, d: int, shape) -> PlainVector:
    flat = grid_array(np.ones(d), format, shape)
    return PlainVector(values=flat, scale_bits=0.0)


def _format_ones(pm: PackedMatrix) -> PlainVector:
    """All-ones vector packed in the operand's own layout.

    Padding slots stay zero; a full-grid constant would leak ones into the
    padding, and those slots would corrupt the weight grids after an update.
    """
    (d,) = pm.logical_dims
    return _ones_grid(pm.format, d, pm.shape)


def poly_relu_prime(da: PackedMatrix, ev: Evaluator) -> PackedMatrix:
    """Activation-derivative map 1 + 2*da, evaluated at the activation gradient.

    The doubling is a ciphertext self-addition, so the op consumes no depth;
    this is what keeps the per-iteration depth at the advertised totals.
    """
    doubled = ev.add(da.payload, da.payload)
    return da.with_payload(ev.add(doubled, _format_ones(da)))


def loss_gradient(y_hat: PackedMatrix, y: PackedMatrix, ev: Evaluator) -> PackedMatrix:
    """Gradient of the squared local loss w.r.t. predictions: Y_hat - Y."""
    if y_hat.format is not y.format or y_hat.shape != y.shape:
        raise IncompatibleOperands("prediction and label layouts must match")
    return y_hat.with_payload(ev.sub(y_hat.payload, y.payload))


def rss_loss(y_hat: PackedMatrix, y: PackedMatrix, ev: Evaluator) -> PackedMatrix:
    """Slot-wise squared residuals; diagnostic only, costs one depth unit."""
    diff = loss_gradient(y_hat, y, ev)
    return diff.with_payload(ev.mul(diff.payload, diff.payload))


# -- block forward / backward ---------------------------------------------------


def _layer_matmul(kind: BlockKind, a: PackedMatrix, w: PackedMatrix,
                  ev: Evaluator) -> PackedMatrix:
    return re_matmul(a, w, ev) if kind is BlockKind.RE else ce_matmul(a, w, ev)


def _classifier_matmul(kind: BlockKind, a: PackedMatrix, w: PackedMatrix,
                       ev: Evaluator) -> PackedMatrix:
    return ce_matmul(a, w, ev) if kind is BlockKind.RE else re_matmul(a, w, ev)


def forward_hidden(block: LocalLossBlock, a_in: PackedMatrix,
                   ev: Evaluator) -> tuple[PackedMatrix, PackedMatrix]:
    """Layer matmul plus activation; returns (pre-activations, activations)."""
    if a_in.format is not activation_format(block.kind):
        raise IncompatibleOperands(
            f"{block.kind.value} block expects {activation_format(block.kind).value} "
            f"input, got {a_in.format.value}"
        )
    z = _layer_matmul(block.kind, a_in, block.layer_weights, ev)
    return z, poly_relu(z, ev)


def block_forward(block: LocalLossBlock, a_in: PackedMatrix,
                  ev: Evaluator) -> tuple[PackedMatrix, PackedMatrix]:
    """Returns (activations for the next block, local classifier output)."""
    _, a_out = forward_hidden(block, a_in, ev)
    y_hat = _classifier_matmul(block.kind, a_out, block.classifier_weights, ev)
    return a_out, y_hat


def block_backward(block: LocalLossBlock, a_in: PackedMatrix, a_out: PackedMatrix,
                   grad_l: PackedMatrix, ev: Evaluator, *,
                   z: PackedMatrix | None = None,
                   chain_rule: bool = False) -> tuple[PackedMatrix, PackedMatrix]:
    """Local gradients (layer, classifier); nothing leaves the block.

    The classifier gradient is the outer product activation x loss-gradient,
    which the opposing packing formats realize as one element-wise multiply.
    """
    clf_fmt = classifier_format(block.kind)
    dw_clf = PackedMatrix(
        shape=block.grid, format=clf_fmt,
        logical_dims=(block.hidden_dim, block.out_dim),
        payload=ev.mul(a_out.payload, grad_l.payload),
    )
    da = _layer_matmul(block.kind, grad_l, block.classifier_weights, ev)
    if chain_rule:
        if z is None:
            raise IncompatibleOperands("chain-rule variant needs the pre-activations")
        slope = ev.add(ev.add(z.payload, z.payload), _format_ones(z))
        dz = da.with_payload(ev.mul(da.payload, slope))
    else:
        dz = poly_relu_prime(da, ev)
    dw_layer = PackedMatrix(
        shape=block.grid, format=layer_format(block.kind),
        logical_dims=(block.in_dim, block.hidden_dim),
        payload=ev.mul(a_in.payload, dz.payload),
    )
    return dw_layer, dw_clf


# -- weight update ----------------------------------------------------------------


@functools.lru_cache(maxsize=4096)
def _const_cached(slot_count: int, value: float) -> PlainVector:
    return PlainVector(values=np.full(slot_count, value, dtype=np.float64),
                       scale_bits=0.0)


def _const_grid(ev: Evaluator, value: float) -> PlainVector:
    return _const_cached(ev.params.slot_count, value)


def update_weights(w: PackedMatrix, v: PackedMatrix, dw: PackedMatrix,
                   learning_rate: float, decay_rate: float, momentum: float,
                   t: int, ev: Evaluator) -> tuple[PackedMatrix, PackedMatrix]:
    """Decay-regularized momentum update; exactly two depth units.

    One plaintext-constant tier applies the decay, the second applies the
    learning-rate constants; the velocity multiply runs parallel to the
    second tier.
    """
    if t < 1:
        raise IncompatibleOperands("iteration counter starts at 1")
    if not (w.format is v.format is dw.format) or not (w.shape == v.shape == dw.shape):
        raise IncompatibleOperands("weights, velocity and gradient layouts must match")
    g, gm, gm2 = learning_rate, learning_rate * momentum, learning_rate * momentum**2
    decayed = ev.add(dw.payload, ev.mul(dw.payload, _const_grid(ev, decay_rate)))
    if t == 1:
        v_new = decayed
        delta = ev.add(ev.mul(decayed, _const_grid(ev, g)),
                       ev.mul(decayed, _const_grid(ev, gm)))
    else:
        v_new = ev.add(ev.mul(v.payload, _const_grid(ev, momentum)), decayed)
        delta = ev.add(
            ev.add(ev.mul(decayed, _const_grid(ev, g)),
                   ev.mul(decayed, _const_grid(ev, gm))),
            ev.mul(v.payload, _const_grid(ev, gm2)),
        )
    w_new = ev.sub(w.payload, delta)
    return w.with_payload(w_new), v.with_payload(v_new)


# -- training and inference ---------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Sample:
    """One packed training sample: expanded input plus both label layouts."""

    x: PackedMatrix
    y_expanded: PackedMatrix
    y_repeated: PackedMatrix


def prepare_sample(x: np.ndarray, y_onehot: np.ndarray, shape: GridShape,
                   custodian: KeyCustodian) -> Sample:
    y_exp, y_rep = pack_labels(y_onehot, shape, custodian)
    return Sample(x=pack_sample(x, shape, custodian), y_expanded=y_exp, y_repeated=y_rep)


def train_iteration(model: EncryptedMLP, batch: list[Sample], custodian: KeyCustodian,
                    t: int, *, zero_loss_blocks: frozenset[int] = frozenset()) -> EncryptedMLP:
    """One full training iteration over an accumulated mini-batch.

    Gradients are summed homomorphically over the batch (depth-free) and the
    batch size is folded into the learning rate.  Afterwards every block's
    weights and velocities are refreshed back to the scheme's refresh level;
    the iteration's ledger records the per-iteration maximum depth.

    ``zero_loss_blocks`` replaces the named blocks' loss gradients with
    encrypted zeros of identical depth; it exists to demonstrate block
    independence and has no production use.
    """
    ev = custodian.evaluator
    hyper = model.hyper
    ledger = custodian.ledger
    ledger.begin_iteration()
    try:
        acc: dict[int, tuple[PackedMatrix, PackedMatrix]] = {}
        for sample in batch:
            a_in = sample.x
            for block in model.blocks:
                z, a_out = forward_hidden(block, a_in, ev)
                y_hat = _classifier_matmul(block.kind, a_out, block.classifier_weights, ev)
                y_ref = sample.y_expanded if block.kind is BlockKind.RE else sample.y_repeated
                grad = loss_gradient(y_hat, y_ref, ev)
                if block.index in zero_loss_blocks:
                    grad = grad.with_payload(ev.sub(y_hat.payload, y_hat.payload))
                dw_layer, dw_clf = block_backward(
                    block, a_in, a_out, grad, ev, z=z, chain_rule=model.chain_rule)
                if block.index in acc:
                    prev_l, prev_c = acc[block.index]
                    acc[block.index] = (
                        prev_l.with_payload(ev.add(prev_l.payload, dw_layer.payload)),
                        prev_c.with_payload(ev.add(prev_c.payload, dw_clf.payload)),
                    )
                else:
                    acc[block.index] = (dw_layer, dw_clf)
                a_in = a_out
        lr_eff = hyper.learning_rate / len(batch)
        for block in model.blocks:
            dw_layer, dw_clf = acc[block.index]
            if model.delayed_classifier_grad:
                # literal one-step delay; the first update has no predecessor
                stashed = block.prev_classifier_grad
                dw_clf_used = dw_clf if stashed is None else stashed
                block.prev_classifier_grad = dw_clf
            else:
                dw_clf_used = dw_clf
            w_l, v_l = update_weights(block.layer_weights, block.layer_velocity, dw_layer,
                                      lr_eff, hyper.decay_rate, hyper.momentum, t, ev)
            w_c, v_c = update_weights(block.classifier_weights, block.classifier_velocity,
                                      dw_clf_used, lr_eff, hyper.decay_rate,
                                      hyper.momentum, t, ev)
            block.layer_weights = w_l.with_payload(custodian.bootstrap(w_l.payload))
            block.layer_velocity = v_l.with_payload(custodian.bootstrap(v_l.payload))
            block.classifier_weights = w_c.with_payload(custodian.bootstrap(w_c.payload))
            block.classifier_velocity = v_c.with_payload(custodian.bootstrap(v_c.payload))
    finally:
        ledger.end_iteration()
    return model


def forward_scores(model: EncryptedMLP, x: PackedMatrix,
                   custodian: KeyCustodian) -> np.ndarray:
    """Decrypt only the output head of the final block."""
    ev = custodian.evaluator
    a = x
    for block in model.blocks[:-1]:
        _, a = forward_hidden(block, a, ev)
    last = model.blocks[-1]
    _, a = forward_hidden(last, a, ev)
    y_hat = _classifier_matmul(last.kind, a, last.classifier_weights, ev)
    plain = custodian.decrypt(y_hat.payload)
    return unpack(y_hat.with_payload(plain))


def predict(model: EncryptedMLP, x: PackedMatrix, custodian: KeyCustodian) -> int:
    """Class of the decrypted output head; ties break to the lowest index."""
    return int(np.argmax(forward_scores(model, x, custodian)))
