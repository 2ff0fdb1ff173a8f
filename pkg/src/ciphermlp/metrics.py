"""Run metrics: one row per evaluation point per block, CSV on disk."""

from __future__ import annotations

import csv
import dataclasses
import io

COLUMNS = [
    "iteration",
    "epoch",
    "block_id",
    "train_accuracy",
    "test_accuracy",
    "max_depth",
    "bootstrap_count",
    "precision_bits",
    "wall_time_s",
]


@dataclasses.dataclass(frozen=True)
class MetricsRow:
    iteration: int
    epoch: int
    block_id: int
    train_accuracy: float
    test_accuracy: float
    max_depth: int
    bootstrap_count: int
    precision_bits: float | None
    wall_time_s: float

    def as_record(self) -> list[str]:
        fmt = lambda v: f"{v:.12g}"
        precision = "" if self.precision_bits is None else fmt(self.precision_bits)
        return [
            str(self.iteration),
            str(self.epoch),
            str(self.block_id),
            fmt(self.train_accuracy),
            fmt(self.test_accuracy),
            str(self.max_depth),
            str(self.bootstrap_count),
            precision,
            fmt(self.wall_time_s),
        ]


def write_metrics(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(row.as_record())
    return buf.getvalue()


def strip_wall_time(csv_text: str) -> str:
    """Metrics with the timing column removed; used by determinism checks."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for record in csv.reader(io.StringIO(csv_text)):
        writer.writerow(record[:-1])
    return out.getvalue()
