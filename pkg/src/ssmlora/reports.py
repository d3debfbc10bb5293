"""Machine-readable reports (CSV / JSON / line-delimited JSON).

Every file carries ``schema_version``: CSV files as a column, JSON files as a
top-level key, JSONL files in every record. Floats are written with ``repr``
so CSV and JSON renderings of one report hold identical values.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

SCHEMA_VERSION = "1.0"
FORMATS = ("csv", "json")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version", *columns])
    for row in rows:
        w.writerow([SCHEMA_VERSION, *(_cell(row.get(c)) for c in columns)])
    return buf.getvalue()


def render_json(report: str, rows: Sequence[dict], meta: dict | None = None) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "report": report, "meta": meta or {}, "rows": list(rows)}
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def write_report(out_dir: str | Path, stem: str, report: str, rows: Sequence[dict],
                 meta: dict | None = None, formats: Iterable[str] = FORMATS,
                 columns: Sequence[str] | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        text = render_csv(rows, columns) if fmt == "csv" else render_json(report, rows, meta)
        path.write_text(text)
        written.append(path)
    return written


def write_jsonl(path: str | Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps({"schema_version": SCHEMA_VERSION, **rec}) + "\n")
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# row builders -------------------------------------------------------------------

BUDGET_COLUMNS = ("pattern", "method", "r", "params", "baseline_params", "ratio", "ratio_exact")


def budget_rows(report) -> list[dict]:
    rows = []
    for row in report.rows:
        ratio = row.ratio
        rows.append({
            "pattern": row.pattern,
            "method": row.method,
            "r": row.r,
            "params": row.params,
            "baseline_params": row.baseline_params,
            "ratio": float(ratio) if ratio is not None else None,
            "ratio_exact": f"{ratio.numerator}/{ratio.denominator}" if ratio is not None else None,
        })
    return rows
