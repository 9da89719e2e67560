# reports.py
"""
Report files: the solve/sweep table as CSV and JSON, wall-clock timings,
and the plot-ready mode spectrum of the diagnose run.
"""

import csv
import io
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from exceptions import SerializationException
from logging_config import get_logger
from pydantic_models import REPORT_COLUMNS, ReportRow

logger = get_logger(__name__)

INT_COLUMNS = {"J", "m", "classical_iters", "deeponet_iters"}
FLOAT_COLUMNS = {"h", "alpha", "relres", "seconds", "conv_rate"}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(column: str, text: str):
    if text == "":
        return None
    if column == "best":
        return text == "true"
    if column in INT_COLUMNS:
        return int(text)
    if column in FLOAT_COLUMNS:
        return float(text)
    return text


def total_iterations(row: ReportRow) -> int:
    return row.classical_iters + row.deeponet_iters


def mark_best(rows: List[ReportRow]) -> List[ReportRow]:
    """
    Flag, per (geometry, h, method, model), the converged row with the fewest
    total iterations. Only groups that vary J or m get a flag.
    """
    groups: Dict[Tuple, List[ReportRow]] = {}
    for row in rows:
        row.best = False
        groups.setdefault((row.geometry, row.h, row.method, row.model), []).append(row)
    for members in groups.values():
        if len(members) < 2:
            continue
        converged = [row for row in members if row.outcome == "converged"]
        if converged:
            min(converged, key=total_iterations).best = True
    return rows


# ============== CSV ==============

def rows_to_csv(rows: Iterable[ReportRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        values = row.model_dump()
        writer.writerow([_cell(values[column]) for column in REPORT_COLUMNS])
    return buffer.getvalue()


def rows_from_csv(text: str) -> List[ReportRow]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SerializationException("Report CSV is empty") from None
    if header != REPORT_COLUMNS:
        raise SerializationException("Unexpected report columns", details={"header": header})
    rows = []
    for record in reader:
        values = {column: _parse_cell(column, cell) for column, cell in zip(header, record)}
        rows.append(ReportRow(**{key: value for key, value in values.items() if value is not None}))
    return rows


# ============== JSON ==============

def rows_to_json(rows: Iterable[ReportRow], config: Optional[dict] = None) -> str:
    document = {
        "columns": REPORT_COLUMNS,
        "rows": [row.model_dump() for row in rows],
        "config": config or {},
    }
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def rows_from_json(text: str) -> Tuple[List[ReportRow], dict]:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise SerializationException("Report JSON is malformed", original_exception=e) from e
    return [ReportRow(**row) for row in document.get("rows", [])], document.get("config", {})


def write_report(rows: List[ReportRow], out_dir, config: Optional[dict] = None,
                 stem: str = "report") -> Tuple[Path, Path]:
    """Write `<stem>.csv` and `<stem>.json` into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(rows_to_csv(rows))
    json_path.write_text(rows_to_json(rows, config))
    logger.info(f"Wrote {len(rows)} report rows to {csv_path}", extra={"rows": len(rows)})
    return csv_path, json_path


def read_report(path) -> List[ReportRow]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return rows_from_json(text)[0]
    return rows_from_csv(text)


# ============== Timings and diagnostics ==============

def write_timings(entries: List[Tuple[str, float]], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["run", "seconds"])
        for name, seconds in entries:
            writer.writerow([name, f"{seconds:.6f}"])
    return path


def write_spectrum_csv(records: List[dict], path) -> Path:
    """Per-step band energies followed by the full mode spectrum after the step."""
    path = Path(path)
    n_modes = len(records[0]["spectrum"]) if records else 0
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["step", "phase", "low_before", "low_after", "high_before", "high_after"]
            + [f"mode_{j}" for j in range(1, n_modes + 1)]
        )
        for record in records:
            writer.writerow(
                [record["step"], record["phase"]]
                + [repr(float(record[key])) for key in ("low_before", "low_after", "high_before", "high_after")]
                + [repr(float(value)) for value in record["spectrum"]]
            )
    return path


def write_json(document: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(document, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(value):
    if hasattr(value, "model_dump"):
        return value.model_dump()
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")

