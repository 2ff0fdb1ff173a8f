"""Plain double-precision mirror of the encrypted training procedure.

Runs the identical algorithm on raw float64 grids with the same operation
order and the same slot layouts, but no encryption, levels or noise.  With
the simulator backend and noise disabled, encrypted training must reproduce
this trajectory bit for bit; the mirror is therefore the parity baseline and
the reference for weight-precision traces.

The grid and schedule code here is deliberately written out again instead of
importing the packed-operand implementations, so the two sides stay
independent at the implementation level.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .nn import Hyperparams, init_weights
from .packing import Architecture, GridShape


def _pack_repeated(v: np.ndarray, r: int, c: int) -> np.ndarray:
    g = np.zeros((r, c))
    g[:, : v.shape[0]] = v[np.newaxis, :]
    return g.reshape(-1)


def _pack_expanded(v: np.ndarray, r: int, c: int) -> np.ndarray:
    g = np.zeros((r, c))
    g[: v.shape[0], :] = v[:, np.newaxis]
    return g.reshape(-1)


def _pack_row_wise(w: np.ndarray, r: int, c: int) -> np.ndarray:
    g = np.zeros((r, c))
    g[: w.shape[0], : w.shape[1]] = w
    return g.reshape(-1)


def _pack_col_wise(w: np.ndarray, r: int, c: int) -> np.ndarray:
    g = np.zeros((r, c))
    g[: w.shape[1], : w.shape[0]] = w.T
    return g.reshape(-1)


def _sum_rows(x: np.ndarray, r: int, c: int) -> np.ndarray:
    s = x
    for t in range(r.bit_length() - 1):
        shift = c * 2 ** (r.bit_length() - 2 - t)
        s = s + np.roll(s, -shift)
    return s


def _sum_cols(x: np.ndarray, r: int, c: int) -> np.ndarray:
    log_c = c.bit_length() - 1
    u = x
    for t in range(log_c):
        u = u + np.roll(u, -(2 ** (log_c - 1 - t)))
    mask = np.zeros(r * c)
    mask[::c] = 1.0
    u = u * mask
    s = u
    for t in range(log_c):
        s = s + np.roll(s, 2**t)
    return s


@dataclasses.dataclass
class ShadowBlock:
    h: int
    is_odd: bool
    in_dim: int
    hidden_dim: int
    out_dim: int
    w_layer: np.ndarray
    w_clf: np.ndarray
    v_layer: np.ndarray
    v_clf: np.ndarray
    prev_clf_grad: np.ndarray | None = None


class ShadowMLP:
    """Mirror trainer over flattened r x c grids."""

    def __init__(self, arch: Architecture, shape: GridShape, hyper: Hyperparams,
                 chain_rule: bool = False, delayed_classifier_grad: bool = False):
        self.arch = arch
        self.r, self.c = shape.r, shape.c
        self.hyper = hyper
        self.chain_rule = chain_rule
        self.delayed_classifier_grad = delayed_classifier_grad
        self.blocks: list[ShadowBlock] = []
        weights = init_weights(arch, hyper.rng_seed)
        for h in range(1, arch.depth + 1):
            w_layer, w_clf = weights[h]
            odd = h % 2 == 1
            pack_layer = _pack_row_wise if odd else _pack_col_wise
            pack_clf = _pack_col_wise if odd else _pack_row_wise
            self.blocks.append(ShadowBlock(
                h=h, is_odd=odd,
                in_dim=arch.width(h - 1), hidden_dim=arch.width(h), out_dim=arch.classes,
                w_layer=pack_layer(w_layer, self.r, self.c),
                w_clf=pack_clf(w_clf, self.r, self.c),
                v_layer=np.zeros(self.r * self.c),
                v_clf=np.zeros(self.r * self.c),
            ))

    # -- packed helpers ------------------------------------------------------

    def pack_input(self, x: np.ndarray) -> np.ndarray:
        return _pack_expanded(np.asarray(x, dtype=np.float64), self.r, self.c)

    def _ones_repeated(self, d: int) -> np.ndarray:
        return _pack_repeated(np.ones(d), self.r, self.c)

    def _ones_expanded(self, d: int) -> np.ndarray:
        return _pack_expanded(np.ones(d), self.r, self.c)

    def _re_matmul(self, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        return _sum_rows(a * w, self.r, self.c)

    def _ce_matmul(self, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        return _sum_cols(a * w, self.r, self.c)

    # -- training ---------------------------------------------------------------

    def _block_pass(self, block: ShadowBlock, a_in: np.ndarray,
                    y_exp: np.ndarray, y_rep: np.ndarray):
        if block.is_odd:
            z = self._re_matmul(a_in, block.w_layer)
            a_out = (z * z) + z
            y_hat = self._ce_matmul(a_out, block.w_clf)
            grad = y_hat - y_exp
            dw_clf = a_out * grad
            da = self._re_matmul(grad, block.w_clf)
        else:
            z = self._ce_matmul(a_in, block.w_layer)
            a_out = (z * z) + z
            y_hat = self._re_matmul(a_out, block.w_clf)
            grad = y_hat - y_rep
            dw_clf = a_out * grad
            da = self._ce_matmul(grad, block.w_clf)
        ones = (self._ones_repeated(block.hidden_dim) if block.is_odd
                else self._ones_expanded(block.hidden_dim))
        if self.chain_rule:
            dz = da * ((z + z) + ones)
        else:
            dz = (da + da) + ones
        dw_layer = a_in * dz
        return a_out, dw_layer, dw_clf

    def _update(self, w: np.ndarray, v: np.ndarray, dw: np.ndarray,
                lr: float, t: int) -> tuple[np.ndarray, np.ndarray]:
        mu, eta = self.hyper.momentum, self.hyper.decay_rate
        decayed = dw + dw * eta
        if t == 1:
            v_new = decayed
            delta = decayed * lr + decayed * (lr * mu)
        else:
            v_new = v * mu + decayed
            delta = (decayed * lr + decayed * (lr * mu)) + v * (lr * mu**2)
        return w - delta, v_new

    def train_iteration(self, batch: list[tuple[np.ndarray, np.ndarray]], t: int) -> None:
        acc: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for x, y_onehot in batch:
            y = np.asarray(y_onehot, dtype=np.float64)
            y_exp = _pack_expanded(y, self.r, self.c)
            y_rep = _pack_repeated(y, self.r, self.c)
            a_in = self.pack_input(x)
            for block in self.blocks:
                a_out, dw_layer, dw_clf = self._block_pass(block, a_in, y_exp, y_rep)
                if block.h in acc:
                    prev_l, prev_c = acc[block.h]
                    acc[block.h] = (prev_l + dw_layer, prev_c + dw_clf)
                else:
                    acc[block.h] = (dw_layer, dw_clf)
                a_in = a_out
        lr_eff = self.hyper.learning_rate / len(batch)
        for block in self.blocks:
            dw_layer, dw_clf = acc[block.h]
            if self.delayed_classifier_grad:
                stashed = block.prev_clf_grad
                dw_clf_used = dw_clf if stashed is None else stashed
                block.prev_clf_grad = dw_clf
            else:
                dw_clf_used = dw_clf
            block.w_layer, block.v_layer = self._update(
                block.w_layer, block.v_layer, dw_layer, lr_eff, t)
            block.w_clf, block.v_clf = self._update(
                block.w_clf, block.v_clf, dw_clf_used, lr_eff, t)

    # -- inference and introspection ----------------------------------------------

    def forward_scores(self, x: np.ndarray) -> np.ndarray:
        a = self.pack_input(x)
        for block in self.blocks:
            if block.is_odd:
                z = self._re_matmul(a, block.w_layer)
            else:
                z = self._ce_matmul(a, block.w_layer)
            a = (z * z) + z
        last = self.blocks[-1]
        if last.is_odd:
            y_hat = self._ce_matmul(a, last.w_clf)
            grid = y_hat.reshape(self.r, self.c)
            return grid[: last.out_dim, 0].copy()
        y_hat = self._re_matmul(a, last.w_clf)
        return y_hat.reshape(self.r, self.c)[0, : last.out_dim].copy()

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.forward_scores(x)))

    def grids(self) -> list[dict[str, np.ndarray]]:
        """Flat weight/velocity grids per block, for parity comparison."""
        return [
            {"w_layer": b.w_layer, "w_clf": b.w_clf,
             "v_layer": b.v_layer, "v_clf": b.v_clf}
            for b in self.blocks
        ]
