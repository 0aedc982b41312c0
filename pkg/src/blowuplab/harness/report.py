"""Report files: JSON summary, CSV series, mask CSVs and gnuplot scripts."""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

REPORT_NAME = "report.json"


class ReportIOError(OSError):
    pass


def load_schema() -> dict:
    return json.loads((resources.files("blowuplab.harness") / "report_schema.json").read_text())


def sanitize(obj):
    """JSON-safe copy: numpy scalars to Python, NaN to null, infinities to strings."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_csv(path: Path, header: list[str], data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.atleast_2d(data):
            w.writerow([repr(float(v)) for v in row])


def _gp(title: str, body: list[str], logscale: str = "", output: str = "") -> str:
    lines = ["set datafile separator ','", "set key autotitle columnhead", f"set title '{title}'"]
    if logscale:
        lines.append(f"set logscale {logscale}")
    if output:
        lines += ["set terminal pngcairo size 900,600", f"set output '{output}'"]
    return "\n".join(lines + body) + "\n"


def _plot_scripts(rep) -> dict[str, str]:
    out = {}
    if "rate_fit" in rep.series:
        d = rep.summary["diagnostics"]["rate"]
        out["rate_fit.gp"] = _gp("max u against T_hat - t", [
            "set xlabel 'T_hat - t'", "set ylabel 'max u'",
            f"A = {d['amplitude_hat']!r}; a = {d['exponent_hat']!r}",
            "plot 'rate_fit.csv' using 2:3 with points, A * x**(-a) with lines title 'fit'",
        ], "xy", "rate_fit.png")
    if "deviation" in rep.series:
        out["deviation.gp"] = _gp("ODE deviation ratio", [
            "set xlabel 'max u'", "set ylabel 'ratio'",
            "plot 'deviation.csv' using 2:3 with linespoints, '' using 2:4 with lines",
        ], "xy", "deviation.png")
    cols = rep.series["profiles"][0]
    body = ["set xlabel 'x'", "set ylabel 'u'",
            "plot " + ", ".join(f"'profiles.csv' using 1:{k + 2} with lines" for k in range(len(cols) - 1))]
    out["profiles.gp"] = _gp("profiles", body, "y", "profiles.png")
    if "omega0" in rep.masks:
        out["omega0.gp"] = _gp("isolating subdomain and final profile", [
            "set xlabel 'x'", "set ylabel 'u (final)'", "set y2label 'mask'", "set y2range [0:1.2]",
            "set ytics nomirror", "set y2tics",
            f"plot 'profiles.csv' using 1:{len(cols)} with lines axes x1y1, "
            "'omega0.csv' using 1:2 with steps axes x1y2 title 'omega0'",
        ], "", "omega0.png")
    return out


def emit_report(rep, out_dir, formats=("json", "csv", "gnuplot")) -> list[str]:
    """Write the report files and return their names relative to ``out_dir``.

    The returned list, plus ``trajectory/`` when persisted, is exactly the
    directory content; it is also recorded in the JSON summary.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files: list[str] = []
        if "csv" in formats:
            for name, (header, data) in rep.series.items():
                write_csv(out / f"{name}.csv", header, data)
                files.append(f"{name}.csv")
            for name, mask in rep.masks.items():
                write_csv(out / f"{name}.csv", ["x", "in_mask"], np.column_stack([rep.spec.x, mask.astype(float)]))
                files.append(f"{name}.csv")
        if "gnuplot" in formats:
            for name, text in _plot_scripts(rep).items():
                (out / name).write_text(text)
                files.append(name)
        if "json" in formats:
            files.append(REPORT_NAME)
        files.sort()
        if (out / "trajectory").is_dir():
            files.append("trajectory/")
        rep.summary["files"] = files
        doc = sanitize(rep.summary)
        jsonschema.validate(doc, load_schema())
        if "json" in formats:
            (out / REPORT_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise ReportIOError(f"writing report to {out}: {exc}") from exc
    rep.out_dir, rep.files = out, files
    return files


def read_report(directory) -> dict:
    """Load and schema-check a report JSON."""
    path = Path(directory) / REPORT_NAME
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ReportIOError(f"reading {path}: {exc}") from exc
    jsonschema.validate(doc, load_schema())
    return doc
