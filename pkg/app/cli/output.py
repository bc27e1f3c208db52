"""CSV / JSON / gnuplot emission for the command surface."""
import csv
import io
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

CDF_COLUMNS = ["x", "cdf", "abs_err", "method", "wall_ms"]
OUTAGE_COLUMNS = ["gamma_b_db", "x", "outage", "abs_err"]
HKN_COLUMNS = ["k", "n", "x", "lambda", "value", "method", "terms_or_steps", "rel_err", "wall_ms"]
VALIDATE_COLUMNS = ["x", "analytic", "abs_err", "mc", "std_err", "z"]
BENCH_COLUMNS = ["suite", "n_t", "n_r", "method", "x", "cdf", "rel_dev", "wall_ms", "status"]


def format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.9e}"
    return str(value)


def to_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def to_json(rows: Sequence[Dict[str, Any]], columns: Sequence[str], meta: Optional[Dict[str, Any]] = None) -> str:
    records = [{c: row.get(c) for c in columns} for row in rows]
    return json.dumps({"meta": meta or {}, "rows": records}, indent=2, sort_keys=True) + "\n"


def emit(rows: Sequence[Dict[str, Any]], columns: Sequence[str], fmt: str = "csv", path: Optional[str] = None,
         meta: Optional[Dict[str, Any]] = None) -> None:
    text = to_csv(rows, columns) if fmt == "csv" else to_json(rows, columns, meta)
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.info(f"wrote {len(rows)} rows to {path}")


def plot_script(csv_path: str, x_column: str, y_column: str, columns: List[str], x_label: str, y_label: str,
                log_y: bool = False) -> str:
    """A gnuplot script plotting one column of a CSV written by emit()."""
    xi = columns.index(x_column) + 1
    yi = columns.index(y_column) + 1
    out_png = os.path.splitext(os.path.basename(csv_path))[0] + ".png"
    lines = [
        "set datafile separator ','",
        "set key off",
        "set grid",
        f"set xlabel '{x_label}'",
        f"set ylabel '{y_label}'",
    ]
    if log_y:
        lines.append("set logscale y")
    lines += [
        "set terminal pngcairo size 800,600",
        f"set output '{out_png}'",
        f"plot '{csv_path}' every ::1 using {xi}:{yi} with linespoints",
    ]
    return "\n".join(lines) + "\n"


def write_plot_script(path: str, csv_path: str, x_column: str, y_column: str, columns: List[str],
                      x_label: str, y_label: str, log_y: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(plot_script(csv_path, x_column, y_column, columns, x_label, y_label, log_y))
    logger.info(f"wrote plot script {path}")


def format_scaled(sign: int, log10_mag: float) -> str:
    """Scientific notation for values whose exponent exceeds double range."""
    if sign == 0:
        return f"{0.0:.9e}"
    exponent = int(log10_mag // 1)
    mantissa = 10.0 ** (log10_mag - exponent)
    if mantissa >= 9.9999999995:
        mantissa, exponent = 1.0, exponent + 1
    return f"{'-' if sign < 0 else ''}{mantissa:.9f}e{exponent:+d}"
