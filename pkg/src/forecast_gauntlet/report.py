"""Report serialization: JSON document and flat CSV, both re-readable."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from typing import IO, Mapping, Sequence

from .metrics import MetricRow, Report

CSV_COLUMNS = (
    "scope", "class", "bin_lo", "bin_hi", "map_f", "min_ade", "min_fde", "mr",
    "mota", "motp", "fp", "fn", "ids", "eligible_gt", "matched",
)
_INT_FIELDS = {"fp", "fn", "ids", "eligible_gt", "matched", "missed_gt", "false_tracks", "gt_total", "match_count"}


def _bound(x: float) -> float | str:
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _unbound(x) -> float:
    return float(x)


def report_to_dict(report: Report) -> dict:
    return {
        "overall": asdict(report.overall),
        "per_class": {c: asdict(row) for c, row in report.per_class.items()},
        "per_distance_bin": [
            {"bin_lo": _bound(lo), "bin_hi": _bound(hi), **asdict(row)}
            for (lo, hi), row in report.per_distance_bin.items()
        ],
        "counts": report.counts,
    }


def _row(d: Mapping) -> MetricRow:
    return MetricRow(**{k: d[k] for k in MetricRow.field_names()})


def report_from_dict(data: Mapping) -> Report:
    return Report(
        overall=_row(data["overall"]),
        per_class={c: _row(r) for c, r in data["per_class"].items()},
        per_distance_bin={(_unbound(r["bin_lo"]), _unbound(r["bin_hi"])): _row(r) for r in data["per_distance_bin"]},
    )


def dumps_report(report: Report) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=False) + "\n"


def write_report_json(report: Report, fp: IO[str]) -> None:
    fp.write(dumps_report(report))


def read_report_json(fp: IO[str]) -> Report:
    return report_from_dict(json.load(fp))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ("inf" if value > 0 else "-inf")
    return str(value)


def report_rows(report: Report) -> list[dict[str, str]]:
    def row(scope: str, cls: str, lo, hi, r: MetricRow) -> dict[str, str]:
        out = {"scope": scope, "class": cls, "bin_lo": _fmt(lo), "bin_hi": _fmt(hi)}
        for col in CSV_COLUMNS[4:]:
            out[col] = _fmt(getattr(r, col))
        return out

    rows = [row("overall", "all", None, None, report.overall)]
    rows += [row("class", c, None, None, r) for c, r in report.per_class.items()]
    rows += [row("bin", "all", lo, hi, r) for (lo, hi), r in report.per_distance_bin.items()]
    return rows


def write_report_csv(report: Report, fp: IO[str]) -> None:
    writer = csv.DictWriter(fp, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(report))


def dumps_report_csv(report: Report) -> str:
    buf = io.StringIO()
    write_report_csv(report, buf)
    return buf.getvalue()


def read_report_csv(fp: IO[str]) -> list[dict[str, object]]:
    """Parse a report CSV back into typed rows (empty cells become ``None``)."""
    reader = csv.DictReader(fp)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
    out = []
    for raw in reader:
        row: dict[str, object] = {}
        for k, v in raw.items():
            if k in ("scope", "class"):
                row[k] = v
            elif v == "":
                row[k] = None
            elif k in _INT_FIELDS:
                row[k] = int(v)
            else:
                row[k] = float(v)
        out.append(row)
    return out


WEIGHTED_METRICS = ("map_f", "min_ade", "min_fde", "mr", "mota", "motp")


def inverse_distance_weights(bins: Sequence[tuple[float, float]]) -> dict[tuple[float, float], float]:
    """Weight proportional to 1 / bin center; open-ended bins use their finite edge."""
    raw = {}
    for lo, hi in bins:
        if math.isfinite(lo) and math.isfinite(hi):
            center = (lo + hi) / 2
        else:
            center = lo if math.isfinite(lo) else hi
        raw[(lo, hi)] = 1.0 / max(center, 1e-9)
    return raw


def weighted_aggregate(
    per_bin: Mapping[tuple[float, float], MetricRow],
    weights: Mapping[tuple[float, float], float] | None = None,
) -> dict[str, float | None]:
    """Distance-weighted mean of each metric over bins where it is defined; weights renormalized."""
    weights = dict(weights) if weights is not None else inverse_distance_weights(list(per_bin))
    out: dict[str, float | None] = {}
    for metric in WEIGHTED_METRICS:
        terms = [(weights.get(b, 0.0), getattr(row, metric)) for b, row in per_bin.items()]
        terms = [(w, v) for w, v in terms if v is not None and w > 0]
        total = math.fsum(w for w, _ in terms)
        out[metric] = math.fsum(w * v for w, v in terms) / total if total > 0 else None
    return out
