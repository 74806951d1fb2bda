"""Bias report rows and their CSV / JSON serialisation."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, fields
from importlib import resources

from .errors import ParseError

REPORT_HEADER = ("sdoh_category", "initial_bias", "current_bias", "bias_reduction",
                 "mrr_before", "mrr_after", "mrr_difference", "seed")
_NUMERIC = REPORT_HEADER[1:7]
SKIPPED = "skipped"


@dataclass
class ReportRow:
    """One category audit.

    ``bias_reduction = initial_bias - current_bias`` and
    ``mrr_difference = mrr_before - mrr_after``.  Skipped rows carry ``None``
    in every numeric column.
    """

    sdoh_category: str
    initial_bias: float | None
    current_bias: float | None
    bias_reduction: float | None
    mrr_before: float | None
    mrr_after: float | None
    mrr_difference: float | None
    seed: int | None
    status: str = "ok"
    reason: str | None = None

    @classmethod
    def skipped(cls, category: str, seed: int | None, reason: str) -> "ReportRow":
        return cls(category, None, None, None, None, None, None, seed, SKIPPED, reason)

    @property
    def is_skipped(self) -> bool:
        return self.status == SKIPPED

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def csv_fields(self) -> list[str]:
        out = [self.sdoh_category]
        for name in _NUMERIC:
            v = getattr(self, name)
            out.append(SKIPPED if v is None else repr(float(v)))
        out.append("" if self.seed is None else str(int(self.seed)))
        return out


@dataclass
class BiasReport:
    rows: list[ReportRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in self.rows:
            w.writerow(row.csv_fields())
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())

    def to_json(self, details: list[dict] | None = None, meta: dict | None = None) -> str:
        doc = {"header": list(REPORT_HEADER), "rows": [r.as_dict() for r in self.rows]}
        if details is not None:
            doc["details"] = details
        if meta:
            doc["meta"] = meta
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def __getitem__(self, category: str) -> list[ReportRow]:
        return [r for r in self.rows if r.sdoh_category == category]


def parse_report_csv(text: str) -> BiasReport:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty report", 1) from None
    if tuple(header) != REPORT_HEADER:
        raise ParseError(f"report header must be {','.join(REPORT_HEADER)}", 1)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(REPORT_HEADER):
            raise ParseError(f"expected {len(REPORT_HEADER)} fields, got {len(rec)}", lineno)
        values = []
        for name, cell in zip(_NUMERIC, rec[1:7]):
            if cell == SKIPPED:
                values.append(None)
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(f"{name}: not a number: {cell!r}", lineno) from None
        skipped = all(v is None for v in values)
        if not skipped and any(v is None for v in values):
            raise ParseError("partially skipped row", lineno)
        try:
            seed = int(rec[7]) if rec[7] else None
        except ValueError:
            raise ParseError(f"seed: not an integer: {rec[7]!r}", lineno) from None
        rows.append(ReportRow(rec[0], *values, seed, SKIPPED if skipped else "ok"))
    return BiasReport(rows)


def read_report_csv(path: str | os.PathLike) -> BiasReport:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_report_csv(f.read())


def reference_table_text() -> str:
    """Published reference rows, shipped for format checks only."""
    return resources.files("kgfair").joinpath("data/table3_reference.csv").read_text(encoding="utf-8")
