"""End-to-end run orchestration: data, keys, training loop, metrics, model."""

from __future__ import annotations

import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from .api import KeyCustodian, keygen
from .config import RunConfig
from .data import Dataset, batch_indices, load_csv, load_idx, split_dataset
from .depth import tau_total
from .errors import InvalidParameters, SecurityError
from .metrics import MetricsRow, write_metrics
from .nn import EncryptedMLP, Hyperparams, build_model, forward_scores, pack_sample, \
    prepare_sample, train_iteration
from .packing import Architecture, compute_dims, minimal_grid, required_rotations
from .params import INSECURE, SchemeParams, make_params, minimum_degree_for_slots
from .serialize import save_model
from .shadow import ShadowMLP
from .simbackend import NoiseModel

INSECURE_BANNER = (
    "WARNING: parameters are flagged insecure-test; this run provides NO "
    "cryptographic security and exists for correctness work only."
)


@dataclasses.dataclass
class RunResult:
    config: RunConfig
    params: SchemeParams
    arch: Architecture
    rows: list[MetricsRow]
    metrics_csv: str
    final_train_accuracy: float
    final_test_accuracy: float
    iteration_depths: list[int]
    shadow_max_diffs: list[float]
    precision_trace: list[dict]
    model_path: Path | None


def _append_bias(ds: Dataset) -> Dataset:
    ones = np.ones((ds.x.shape[0], 1))
    return Dataset(x=np.hstack([ds.x, ones]), y=ds.y, classes=ds.classes)


def load_dataset(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    ds_cfg = cfg.dataset
    if ds_cfg.format == "csv":
        full = load_csv(ds_cfg.path, ds_cfg.label_col)
        if ds_cfg.train_size is None or ds_cfg.test_size is None:
            raise InvalidParameters("csv datasets need explicit train/test sizes")
        train, test = split_dataset(full, ds_cfg.train_size, ds_cfg.test_size,
                                    ds_cfg.split_seed)
    else:
        train = load_idx(ds_cfg.images, ds_cfg.labels, ds_cfg.pool)
        if ds_cfg.test_images and ds_cfg.test_labels:
            test = load_idx(ds_cfg.test_images, ds_cfg.test_labels, ds_cfg.pool)
            classes = max(train.classes, test.classes)
            test = Dataset(x=test.x, y=test.y, classes=classes)
            train = Dataset(x=train.x, y=train.y, classes=classes)
        else:
            if ds_cfg.train_size is None or ds_cfg.test_size is None:
                raise InvalidParameters("idx datasets without a test pair need split sizes")
            train, test = split_dataset(train, ds_cfg.train_size, ds_cfg.test_size,
                                        ds_cfg.split_seed)
    if ds_cfg.add_bias:
        # the packed layers carry no bias term; a constant feature stands in
        train, test = _append_bias(train), _append_bias(test)
    return train, test


def plan_params(cfg: RunConfig, arch: Architecture) -> SchemeParams:
    r_min, c_min = minimal_grid(arch)
    degree = cfg.poly_degree or minimum_degree_for_slots(r_min * c_min)
    if cfg.level is not None:
        level = cfg.level
    else:
        # the true-derivative variant multiplies by the activation slope,
        # which costs one extra level on the layer-gradient path
        level = tau_total(arch.depth) + int(cfg.chain_rule) + cfg.bootstrap_depth
    return make_params(level=level, scale_bits=cfg.scale_bits, poly_degree=degree,
                       bootstrap_depth=cfg.bootstrap_depth, security_claim=cfg.security)


def build_run(cfg: RunConfig, arch: Architecture, *, out=sys.stdout):
    """Params, keys and model for a configured run; applies the security gate."""
    params = plan_params(cfg, arch)
    if cfg.backend == "ckks" and params.security_claim != 128:
        if not cfg.insecure_ok:
            raise SecurityError(
                "CKKS run below the 128-bit parameter table requires --insecure-ok")
        print(INSECURE_BANNER, file=out)
    shape = compute_dims(arch, params.slot_count)
    backend_options = {}
    if cfg.backend == "sim":
        backend_options["noise_model"] = NoiseModel(
            enabled=cfg.noise_enabled,
            per_op_sigma=cfg.per_op_sigma,
            bootstrap_sigma=cfg.bootstrap_sigma,
            rng_seed=cfg.seed + 2,
        )
    else:
        backend_options["rng_seed"] = cfg.seed + 3
        backend_options["bootstrap_eps"] = cfg.bootstrap_eps
    custodian = keygen(params, required_rotations(shape), backend=cfg.backend,
                       **backend_options)
    hyper = Hyperparams(
        learning_rate=cfg.learning_rate, decay_rate=cfg.decay_rate,
        momentum=cfg.momentum, iterations=cfg.iterations,
        batch_size=cfg.batch_size, rng_seed=cfg.seed,
    )
    model = build_model(arch, params, hyper, custodian, chain_rule=cfg.chain_rule,
                        delayed_classifier_grad=cfg.delayed_classifier_grad)
    return params, shape, custodian, model, hyper


def evaluate(model: EncryptedMLP, ds: Dataset, custodian: KeyCustodian,
             cap: int | None = None) -> float:
    """Accuracy via the encrypted forward path, decrypting only the head."""
    n = ds.x.shape[0] if cap is None else min(cap, ds.x.shape[0])
    correct = 0
    for i in range(n):
        x = pack_sample(ds.x[i], model.shape, custodian)
        scores = forward_scores(model, x, custodian)
        if int(np.argmax(scores)) == int(ds.y[i]):
            correct += 1
    return correct / n if n else 0.0


def weight_precision_bits(model: EncryptedMLP, shadow: ShadowMLP,
                          custodian: KeyCustodian) -> list[float]:
    """Per-block agreement (bits) between decrypted and mirror layer weights."""
    out = []
    for block, ref in zip(model.blocks, shadow.grids()):
        dec = custodian.decrypt(block.layer_weights.payload).values
        err = float(np.max(np.abs(dec - ref["w_layer"])))
        if err == 0.0:
            out.append(52.0)
        else:
            out.append(float(np.clip(-np.log2(err), 0.0, 52.0)))
    return out


def run_training(cfg: RunConfig, *, out=sys.stdout) -> RunResult:
    cfg.validate()
    train_ds, test_ds = load_dataset(cfg)
    arch = Architecture(input_dim=train_ds.feature_dim, hidden=cfg.hidden,
                        classes=train_ds.classes)
    params, shape, custodian, model, hyper = build_run(cfg, arch, out=out)
    shadow = ShadowMLP(arch, shape, hyper, chain_rule=cfg.chain_rule,
                       delayed_classifier_grad=cfg.delayed_classifier_grad) \
        if cfg.shadow else None

    rows: list[MetricsRow] = []
    shadow_diffs: list[float] = []
    precision_trace: list[dict] = []
    start = time.perf_counter()
    if shadow is not None:
        precision_trace.append({
            "iteration": 0, "phase": "initial",
            "bits": weight_precision_bits(model, shadow, custodian),
        })

    def emit(t: int) -> None:
        train_acc = evaluate(model, train_ds, custodian, cap=cfg.eval_train_cap)
        test_acc = evaluate(model, test_ds, custodian)
        wall = time.perf_counter() - start
        epoch = (t * cfg.batch_size) // max(1, train_ds.x.shape[0])
        depth = custodian.ledger.iteration_depths[-1] if custodian.ledger.iteration_depths else 0
        bits = weight_precision_bits(model, shadow, custodian) if shadow else None
        for b, block in enumerate(model.blocks):
            rows.append(MetricsRow(
                iteration=t, epoch=epoch, block_id=block.index,
                train_accuracy=train_acc, test_accuracy=test_acc,
                max_depth=depth, bootstrap_count=custodian.ledger.bootstrap_count,
                precision_bits=None if bits is None else bits[b],
                wall_time_s=wall,
            ))

    # Encrypt the training set once up front when it fits comfortably in
    # memory; large image sets stream and re-encrypt per batch instead.
    n_train = train_ds.x.shape[0]
    cache_bytes = n_train * 3 * params.slot_count * 8
    prepared = None
    if cache_bytes <= 512 * 2**20:
        prepared = [prepare_sample(train_ds.x[i], train_ds.one_hot(i), shape, custodian)
                    for i in range(n_train)]

    t = 0
    for idx in batch_indices(n_train, cfg.batch_size, cfg.iterations, cfg.seed + 1):
        t += 1
        raw_batch = [(train_ds.x[i], train_ds.one_hot(i)) for i in idx]
        if prepared is not None:
            batch = [prepared[i] for i in idx]
        else:
            batch = [prepare_sample(x, y, shape, custodian) for x, y in raw_batch]
        train_iteration(model, batch, custodian, t)
        if shadow is not None:
            shadow.train_iteration(raw_batch, t)
            diff = 0.0
            for block, ref in zip(model.blocks, shadow.grids()):
                for pm, key in ((block.layer_weights, "w_layer"),
                                (block.classifier_weights, "w_clf"),
                                (block.layer_velocity, "v_layer"),
                                (block.classifier_velocity, "v_clf")):
                    dec = custodian.decrypt(pm.payload).values
                    diff = max(diff, float(np.max(np.abs(dec - ref[key]))))
            shadow_diffs.append(diff)
            precision_trace.append({
                "iteration": t, "phase": "post-bootstrap",
                "bits": weight_precision_bits(model, shadow, custodian),
            })
        if cfg.eval_interval and t % cfg.eval_interval == 0:
            emit(t)
    if not rows or rows[-1].iteration != t:
        emit(t)

    csv_text = write_metrics(rows)
    model_path = None
    if cfg.out_dir:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(csv_text, encoding="utf-8")
        model_path = out_dir / "model.rbot"
        model_path.write_bytes(save_model(model, custodian))
    return RunResult(
        config=cfg, params=params, arch=arch, rows=rows, metrics_csv=csv_text,
        final_train_accuracy=rows[-1].train_accuracy,
        final_test_accuracy=rows[-1].test_accuracy,
        iteration_depths=list(custodian.ledger.iteration_depths),
        shadow_max_diffs=shadow_diffs,
        precision_trace=precision_trace,
        model_path=model_path,
    )
