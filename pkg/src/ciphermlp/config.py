"""Run configuration: a single JSON document plus flag overrides."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .errors import InvalidParameters
from .params import INSECURE


@dataclasses.dataclass
class DatasetConfig:
    format: str = "csv"                # csv | idx
    path: str | None = None            # csv file
    label_col: str | int = -1
    images: str | None = None          # idx training pair
    labels: str | None = None
    test_images: str | None = None     # idx canonical test pair
    test_labels: str | None = None
    pool: int = 1
    train_size: int | None = None      # seeded-shuffle split sizes
    test_size: int | None = None
    split_seed: int = 0
    add_bias: bool = False             # append a constant-1 feature after scaling

    def validate(self) -> None:
        if self.format not in ("csv", "idx"):
            raise InvalidParameters(f"unknown dataset format {self.format!r}")
        if self.pool < 1:
            raise InvalidParameters("pooling factor must be a positive integer")
        if self.format == "csv" and not self.path:
            raise InvalidParameters("csv dataset needs a path")
        if self.format == "idx" and not (self.images and self.labels):
            raise InvalidParameters("idx dataset needs an images/labels pair")


@dataclasses.dataclass
class RunConfig:
    dataset: DatasetConfig
    hidden: tuple[int, ...]
    backend: str = "sim"
    learning_rate: float = 0.005
    decay_rate: float = 0.0
    momentum: float = 0.9
    iterations: int = 100
    batch_size: int = 8
    seed: int = 0
    scale_bits: int = 49
    poly_degree: int | None = None     # None: minimal degree for the grid
    level: int | None = None           # None: depth audit + bootstrap depth
    bootstrap_depth: int = 0
    security: int | str = INSECURE
    noise_enabled: bool = False
    per_op_sigma: float | None = None
    bootstrap_sigma: float = 0.0
    bootstrap_eps: float = 0.0         # debug-bootstrap perturbation (ckks)
    chain_rule: bool = False           # true activation derivative; costs one level
    delayed_classifier_grad: bool = False
    shadow: bool = True
    eval_interval: int = 0             # 0: evaluate only at the end
    eval_train_cap: int = 2048
    out_dir: str | None = None
    insecure_ok: bool = False

    def validate(self) -> None:
        self.dataset.validate()
        if not self.hidden or any(int(k) < 1 for k in self.hidden):
            raise InvalidParameters("architecture widths must be positive")
        if self.backend not in ("sim", "ckks"):
            raise InvalidParameters(f"unknown backend {self.backend!r}")
        self.hidden = tuple(int(k) for k in self.hidden)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        ds_raw = raw.pop("dataset", {})
        known_ds = {f.name for f in dataclasses.fields(DatasetConfig)}
        bad = set(ds_raw) - known_ds
        if bad:
            raise InvalidParameters(f"unknown dataset config keys: {sorted(bad)}")
        known = {f.name for f in dataclasses.fields(cls)} - {"dataset"}
        bad = set(raw) - known
        if bad:
            raise InvalidParameters(f"unknown config keys: {sorted(bad)}")
        if "hidden" in raw:
            raw["hidden"] = tuple(raw["hidden"])
        cfg = cls(dataset=DatasetConfig(**ds_raw), **raw)
        cfg.validate()
        return cfg

    def apply_overrides(self, backend: str | None = None, seed: int | None = None,
                        out_dir: str | None = None,
                        insecure_ok: bool | None = None) -> "RunConfig":
        if backend is not None:
            self.backend = backend
        if seed is not None:
            self.seed = seed
        if out_dir is not None:
            self.out_dir = out_dir
        if insecure_ok is not None:
            self.insecure_ok = insecure_ok
        self.validate()
        return self
