"""Report records and their CSV / JSON-lines serializations."""
from __future__ import annotations

import csv
import io
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import RandcltError

SCHEMA_VERSION = 1
CSV_COLUMNS = ("experiment", "n", "k_n", "replicate", "component", "value")


class IoError(RandcltError, OSError):
    pass


def metric(value, se: Optional[float] = None) -> dict:
    """A numeric report field: ``{"value", "se"}``, or ``{"value", "exact": True}``
    when the number is a deterministic function of the recorded values."""
    v = float(value) if not isinstance(value, (list, tuple)) else [float(x) for x in value]
    if se is None:
        return {"value": v, "exact": True}
    return {"value": v, "se": float(se)}


@dataclass
class Verdict:
    name: str
    passed: bool
    value: dict
    threshold: float
    relation: str          # "<", "<=", ">", ">=", "=="
    note: str = ""


@dataclass
class ReportRecord:
    experiment: str
    command: str
    statistic: str
    environment: dict
    results: list = field(default_factory=list)     # per (n, k_n) point
    verdicts: list = field(default_factory=list)
    complete: bool = True
    error: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return self.complete and self.error is None and all(v.passed for v in self.verdicts)

    def add_verdict(self, name: str, value: dict, threshold: float, relation: str,
                    note: str = "") -> Verdict:
        x = value["value"]
        ok = {"<": x < threshold, "<=": x <= threshold, ">": x > threshold,
              ">=": x >= threshold, "==": x == threshold}[relation]
        v = Verdict(name, bool(ok), value, float(threshold), relation, note)
        self.verdicts.append(v)
        return v

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReportRecord":
        d = dict(d)
        d.pop("passed", None)
        d["verdicts"] = [Verdict(**v) for v in d.get("verdicts", [])]
        return cls(**d)

    def summary_lines(self) -> list:
        lines = [f"{self.experiment} [{self.command}/{self.statistic}] "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for v in self.verdicts:
            val = v.value["value"]
            err = f" +/- {v.value['se']:.3g}" if "se" in v.value else ""
            lines.append(f"  {'ok  ' if v.passed else 'FAIL'} {v.name}: {val:.6g}{err} "
                         f"{v.relation} {v.threshold:g}" + (f"  ({v.note})" if v.note else ""))
        if self.error:
            lines.append(f"  error: {self.error}")
        if not self.complete:
            lines.append("  (incomplete: partial results)")
        return lines


def environment(seed: int) -> dict:
    from . import __version__

    return {"package": "randclt", "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "master_seed": int(seed)}


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def value_rows_csv(rows) -> str:
    """CSV text with the fixed column order; ``rows`` are 6-tuples."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for exp, n, k, rep, comp, val in rows:
        wr.writerow([exp, _fmt(n), _fmt(k), int(rep), int(comp), _fmt(val)])
    return buf.getvalue()


def emit(record: ReportRecord, out_dir, rows=(), formats=("csv", "jsonl")) -> dict:
    """Write ``<experiment>.csv`` (value rows) and ``<experiment>.report.jsonl``."""
    out = Path(out_dir)
    paths = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            p = out / f"{record.experiment}.csv"
            p.write_text(value_rows_csv(rows))
            paths["csv"] = p
        if "jsonl" in formats:
            p = out / f"{record.experiment}.report.jsonl"
            p.write_text(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            paths["jsonl"] = p
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from None
    return paths


def read_reports(path) -> list:
    """All records in a JSON-lines report file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read report {path}: {exc}") from None
    return [ReportRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def read_value_rows(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != CSV_COLUMNS:
            raise IoError(f"unexpected CSV header {header}")
        return [(r[0], float(r[1]), int(r[2]), int(r[3]), int(r[4]), float(r[5])) for r in rd]
