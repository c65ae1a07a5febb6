"""Workforce rows: CSV ingestion, validation, and round-trip output.

A worker row carries three categorical factors (geo, GJS, job), a
gender flag, three covariates, and an annualized USD salary. The
natural log of salary is the modeling target and is computed at load
time, never read from the file.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyDatasetError, SchemaError

REQUIRED_COLUMNS = (
    "worker_id",
    "geo",
    "gjs",
    "job",
    "female",
    "recent_perf",
    "past_perf",
    "time_in_job",
    "salary",
)

# Exclusion reason codes, in the order the checks run.
MISSING_FIELD = "MISSING_FIELD"
INVALID_NUMBER = "INVALID_NUMBER"
INVALID_FEMALE = "INVALID_FEMALE"
NONPOSITIVE_SALARY = "NONPOSITIVE_SALARY"
NEGATIVE_TIME_IN_JOB = "NEGATIVE_TIME_IN_JOB"

_FEMALE_VALUES = {"1": True, "true": True, "0": False, "false": False}


@dataclass(frozen=True)
class WorkerRecord:
    worker_id: str
    geo: str
    gjs: str
    job: str
    female: bool
    recent_perf: float
    past_perf: float
    time_in_job: float
    salary: float
    log_salary: float


@dataclass(frozen=True)
class Exclusion:
    row_number: int  # 1-based position among data rows
    worker_id: str
    reason: str


class ExclusionLog:
    """Itemized record of dropped rows."""

    def __init__(self) -> None:
        self.rows: list[Exclusion] = []

    def add(self, row_number: int, worker_id: str, reason: str) -> None:
        self.rows.append(Exclusion(row_number, worker_id, reason))

    def __len__(self) -> int:
        return len(self.rows)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_number", "worker_id", "reason_code"])
            for row in self.rows:
                writer.writerow([row.row_number, row.worker_id, row.reason])


def _validate_row(row: dict[str, str]) -> tuple[WorkerRecord | None, str | None]:
    """Return (record, None) for a clean row or (None, reason_code)."""
    values = {}
    for col in REQUIRED_COLUMNS:
        raw = row.get(col)
        raw = raw.strip() if raw is not None else ""
        if not raw:
            return None, MISSING_FIELD
        values[col] = raw

    numeric = {}
    for col in ("recent_perf", "past_perf", "time_in_job", "salary"):
        try:
            x = float(values[col])
        except ValueError:
            return None, INVALID_NUMBER
        if not math.isfinite(x):
            return None, INVALID_NUMBER
        numeric[col] = x

    female = _FEMALE_VALUES.get(values["female"].lower())
    if female is None:
        return None, INVALID_FEMALE
    if numeric["salary"] <= 0.0:
        return None, NONPOSITIVE_SALARY
    if numeric["time_in_job"] < 0.0:
        return None, NEGATIVE_TIME_IN_JOB

    return (
        WorkerRecord(
            worker_id=values["worker_id"],
            geo=values["geo"],
            gjs=values["gjs"],
            job=values["job"],
            female=female,
            recent_perf=numeric["recent_perf"],
            past_perf=numeric["past_perf"],
            time_in_job=numeric["time_in_job"],
            salary=numeric["salary"],
            log_salary=math.log(numeric["salary"]),
        ),
        None,
    )


def load_csv(path: str | Path) -> tuple[list[WorkerRecord], ExclusionLog]:
    """Load and validate a workforce CSV.

    Rows violating any field constraint are dropped and itemized in the
    returned ExclusionLog with a reason code.  Raises SchemaError when a
    required column is absent and EmptyDatasetError when nothing
    survives validation.  I/O failures propagate as OSError.
    """
    records: list[WorkerRecord] = []
    excluded = ExclusionLog()
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing required column: {col}")
        for row_number, row in enumerate(reader, start=1):
            record, reason = _validate_row(row)
            if record is None:
                excluded.add(row_number, (row.get("worker_id") or "").strip(), reason)
            else:
                records.append(record)
    if not records:
        raise EmptyDatasetError(f"no valid rows in {path}")
    return records, excluded


def write_csv(records: list[WorkerRecord], path: str | Path) -> None:
    """Write records so that load_csv reproduces them field for field.

    Floats are written with repr (shortest exact round-trip form).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.worker_id,
                    r.geo,
                    r.gjs,
                    r.job,
                    "1" if r.female else "0",
                    repr(r.recent_perf),
                    repr(r.past_perf),
                    repr(r.time_in_job),
                    repr(r.salary),
                ]
            )
