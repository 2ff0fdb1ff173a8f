"""Closed-form multiplicative-depth accounting plus a measuring dry run.

The per-iteration depth of the training procedure is reached on the deepest
block's layer-weight update path.  The closed forms below reproduce that
path: forward through the block's activation, through its local classifier,
then the backward chain and the two update tiers.
"""

from __future__ import annotations

import dataclasses
import math

from .errors import HeError
from .packing import Architecture, compute_dims
from .params import make_params


def tau_forward_layers(h: int) -> int:
    """Cumulative forward depth through the activation of layer h."""
    return math.floor(2.5 * h)


def tau_forward(h: int) -> int:
    """Forward depth through layer h's local classifier output."""
    return tau_forward_layers(h) + math.floor(1.5 + (h % 2))


def tau_backward(h: int) -> int:
    return math.floor(4.5 + 1 - (h % 2))


def tau_total(h_layers: int) -> int:
    """Per-iteration maximum depth for an MLP with the given hidden depth."""
    return tau_forward(h_layers) + tau_backward(h_layers)


def tau_backprop(h_layers: int) -> int:
    """Depth a standard end-to-end backward pass would need (never executed)."""
    return tau_forward(h_layers) + math.floor(2.5 * h_layers) + 2


def depth_saving(h_layers: int) -> int:
    return math.floor(2.5 * h_layers) - 3 - (h_layers % 2)


@dataclasses.dataclass(frozen=True)
class DepthReport:
    hidden_layers: int
    per_layer_fw: tuple[int, ...]
    per_layer_bw: tuple[int, ...]
    tau_reboot: int
    tau_bp: int
    delta_tau: int
    measured: int | None = None

    def lines(self) -> list[str]:
        rows = [f"H = {self.hidden_layers}"]
        for h in range(1, self.hidden_layers + 1):
            rows.append(f"  layer {h}: fw = {self.per_layer_fw[h - 1]}, "
                        f"bw = {self.per_layer_bw[h - 1]}")
        rows.append(f"  local-loss total   : {self.tau_reboot}")
        rows.append(f"  end-to-end total   : {self.tau_bp}")
        rows.append(f"  depth saving       : {self.delta_tau}")
        if self.measured is not None:
            rows.append(f"  measured (dry run) : {self.measured}")
        return rows


def closed_form_report(h_layers: int) -> DepthReport:
    if h_layers < 1:
        raise HeError("need at least one hidden layer")
    return DepthReport(
        hidden_layers=h_layers,
        per_layer_fw=tuple(tau_forward(h) for h in range(1, h_layers + 1)),
        per_layer_bw=tuple(tau_backward(h) for h in range(1, h_layers + 1)),
        tau_reboot=tau_total(h_layers),
        tau_bp=tau_backprop(h_layers),
        delta_tau=depth_saving(h_layers),
    )


def measure_depth(h_layers: int, iterations: int = 2) -> int:
    """Ledger depth of a real dry run on a minimal architecture."""
    from .api import keygen
    from .nn import Hyperparams, build_model, prepare_sample, train_iteration
    from .packing import required_rotations

    arch = Architecture(input_dim=2, hidden=(2,) * h_layers, classes=2)
    params = make_params(level=tau_total(h_layers), scale_bits=40, poly_degree=8)
    shape = compute_dims(arch, params.slot_count)
    custodian = keygen(params, required_rotations(shape), backend="sim")
    hyper = Hyperparams(learning_rate=0.05, decay_rate=0.01, momentum=0.9,
                        iterations=iterations, batch_size=1)
    model = build_model(arch, params, hyper, custodian)
    sample = prepare_sample([0.3, 0.7], [1.0, 0.0], shape, custodian)
    for t in range(1, iterations + 1):
        train_iteration(model, [sample], custodian, t)
    depths = custodian.ledger.iteration_depths
    if len(set(depths)) != 1:
        raise HeError(f"per-iteration depth is not flat: {depths}")
    return depths[-1]


def depth_audit(h_layers: int, measure: bool = True) -> DepthReport:
    """Closed forms plus a measured dry run; raises if they disagree."""
    report = closed_form_report(h_layers)
    if not measure:
        return report
    measured = measure_depth(h_layers)
    if measured != report.tau_reboot:
        raise HeError(
            f"measured per-iteration depth {measured} disagrees with the "
            f"closed form {report.tau_reboot} for H = {h_layers}"
        )
    return dataclasses.replace(report, measured=measured)
