"""Metric and summary file formats (JSONL + CSV)."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

from .experiment import MetricRecord, SummaryStat


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_records_jsonl(path: Path, records: Iterable[MetricRecord]):
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def read_records_jsonl(path: Path) -> list[MetricRecord]:
    with open(path) as fh:
        return [MetricRecord(**json.loads(line)) for line in fh if line.strip()]


def write_records_csv(path: Path, records: Iterable[MetricRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MetricRecord.FIELDS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, k)) for k in MetricRecord.FIELDS])


def write_summary_csv(path: Path, rows: Sequence[SummaryStat], key: str = "iteration"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([key, "mean", "ci_lo", "ci_hi"])
        for row in rows:
            k = int(row.key) if key == "iteration" else row.key
            writer.writerow([_fmt(k), _fmt(row.mean), _fmt(row.ci_lo), _fmt(row.ci_hi)])


def write_robustness_csv(path: Path, rows: Sequence[SummaryStat]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sigma", "auc_mean", "auc_ci_lo", "auc_ci_hi"])
        for row in rows:
            writer.writerow([_fmt(float(row.key)), _fmt(row.mean), _fmt(row.ci_lo), _fmt(row.ci_hi)])


def read_csv_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
