"""
Report output: JSON report, CSV tables and the jinja2 markdown summary.
"""
import csv
import logging
import math
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Tuple, Union

from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel

from .models import Report

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"

_environment = Environment(loader=FileSystemLoader(str(TEMPLATES_DIR)), keep_trailing_newline=True)


def format_float(value: float) -> str:
    """IEEE double with 17 significant digits; -inf is written as the "-inf" sentinel."""
    value = float(value)
    if math.isinf(value):
        return "-inf" if value < 0 else "inf"
    if math.isnan(value):
        return "nan"
    return format(value, ".17g")


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    try:
        return format_float(float(value))
    except (TypeError, ValueError):
        return str(value)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a header row plus data rows, formatting floats losslessly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([_cell(v) for v in row])
            count += 1
    logger.info(f"wrote {count} rows to {path}")
    return path


def read_csv_floats(path: Union[str, Path]) -> Tuple[List[str], List[List[float]]]:
    """Read a numeric CSV written by `write_csv` back into floats."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, [[float(cell) for cell in row] for row in reader]


def write_report(report: Report, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n", encoding="utf-8")
    logger.info(f"report written to {path}")
    return path


def _summarize(value: Any) -> Union[str, None]:
    data = value.model_dump() if isinstance(value, BaseModel) else value
    if isinstance(data, bool):
        return str(data).lower()
    if isinstance(data, (int, float)):
        return format(float(data), ".6g")
    if not isinstance(data, dict):
        return None
    if "value" in data:
        text = format(float(data["value"]), ".6g")
        if data.get("ci_half_width") is not None:
            text += f" ± {float(data['ci_half_width']):.3g}"
        return text
    if "exponents" in data:
        return ", ".join(format(float(v), ".6g") for v in data["exponents"])
    if "residual" in data:
        return f"residual {float(data['residual']):.4g} ± {float(data['residual_ci']):.3g}"
    if "status" in data:
        return str(data["status"])
    if "certified" in data:
        return str(data["certified"]).lower()
    return None


def render_summary(report: Report) -> str:
    """Markdown summary of the report's headline numbers."""
    rows = []
    for name, value in report.results.items():
        text = _summarize(value)
        if text is not None:
            rows.append((name, text))
    return _environment.get_template("summary.md.j2").render(report=report, rows=rows)
