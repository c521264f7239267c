"""
Report files of a lab run.

    report.json        the Report, floats rounded to 10 significant digits
    spectra.csv        subspace, index, eigenvalue, residual
    summary.md         human summary of checks and verdict
    eigentensors.npz   chart components of the computed eigen-tensors
    timing.json        wall-clock seconds per analysis (kept out of report.json)
"""
import csv
import datetime
import json
import math
import sys
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from loguru import logger

sys.path.append(str(Path(__file__).parent))
from helper import PROJECT_NAME
from run_config import Report

SIGNIFICANT_DIGITS = 10
SPECTRUM_ANALYSES = ("spectrum-imdiv", "spectrum-ker0", "scalar-spectrum")
CSV_COLUMNS = ("subspace", "index", "eigenvalue", "residual")


def round_floats(value: Any) -> Any:
    """Round every float in a nested structure; non-finite values become None."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {str(k): round_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_floats(v) for v in value]
    return value


def report_json(report: Report) -> str:
    """Deterministic JSON text of a report."""
    payload = round_floats(report.model_dump(mode="python", by_alias=True))
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"


def spectrum_blocks(report: Report) -> List[dict]:
    """Spectral data blocks of a report, in analysis order."""
    blocks = []
    for result in report.analyses:
        if result.name in SPECTRUM_ANALYSES and "eigenvalues" in result.data:
            blocks.append(result.data)
        elif result.name == "verdict" and "spectrum" in result.data:
            blocks.append(result.data["spectrum"])
    return blocks


def spectrum_rows(report: Report) -> List[Dict[str, Any]]:
    rows = []
    for block in spectrum_blocks(report):
        for row in block["eigenvalues"]:
            rows.append({"subspace": block["subspace"], "index": row["index"],
                         "eigenvalue": round_floats(row["eigenvalue"]), "residual": round_floats(row["residual"])})
    return rows


def generate_summary_string(report: Report) -> str:
    """
    Markdown summary of a report: soliton diagnostics, one section per
    analysis with its checks, and the verdict when present.
    """
    lines = []
    date = f"{datetime.datetime.now():%B %-d, %Y at %-H:%M}"
    manifold = report.config.get("manifold", "?")

    lines.append(f"# Soliton stability run for {manifold}\n")
    lines.append(f"**Date:** {date}\n")
    lines.append(f"**Status:** {report.status} (exit code {report.exit_code})\n")

    if report.soliton:
        lines.append("## Soliton\n")
        for key in ("resolution", "points", "total_weight", "volume", "soliton_residual", "normalization_defect",
                    "normalization_shift", "potential_min", "potential_max"):
            if key in report.soliton:
                lines.append(f"- {key.replace('_', ' ')}: `{round_floats(report.soliton[key])}`")
        lines.append("")

    for result in report.analyses:
        lines.append(f"## {result.name}: {result.status}\n")
        if result.error:
            lines.append(f"> {result.category} error: {result.error}\n")
        if result.checks:
            lines.append("| check | value | tolerance | passed |")
            lines.append("|---|---|---|---|")
            for check in result.checks:
                bound = (f"{check.comparison} {check.tolerance:.3g}" if check.expected is None
                         else f"|x - {check.expected:.6g}| <= {check.tolerance:.3g}")
                value = "n/a" if check.value is None else f"{check.value:.6g}"
                mark = "yes" if check.passed else "**no**"
                lines.append(f"| {check.name} | {value} | {bound} | {mark} |")
            lines.append("")
        if result.name == "verdict" and "status" in result.data:
            note = f" ({result.data['note']})" if result.data.get("note") else ""
            lines.append(f"**Verdict:** {result.data['status']}{note}\n")

    lines.append("---\n")
    lines.append(f"*Generated by {PROJECT_NAME} {report.version}*")
    return "\n".join(lines)


def write_spectra_csv(report: Report, path: Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f_csv:
        writer = csv.DictWriter(f_csv, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(spectrum_rows(report))
    return path


def write_report(outcome, out_dir: Path, plots: bool = True) -> List[Path]:
    """
    Write every report file of a run outcome into out_dir.

    Returns:
        Paths written, in a fixed order.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    report = outcome.report
    paths = []

    json_path = out_dir / "report.json"
    json_path.write_text(report_json(report), encoding="utf-8")
    paths.append(json_path)
    paths.append(write_spectra_csv(report, out_dir / "spectra.csv"))

    summary_path = out_dir / "summary.md"
    summary_path.write_text(generate_summary_string(report) + "\n", encoding="utf-8")
    paths.append(summary_path)

    if outcome.artifacts:
        npz_path = out_dir / "eigentensors.npz"
        np.savez(npz_path, **{name.replace("-", "_"): array for name, array in sorted(outcome.artifacts.items())})
        paths.append(npz_path)

    timing_path = out_dir / "timing.json"
    timing_path.write_text(json.dumps({k: round(v, 3) for k, v in outcome.timing.items()}, indent=2) + "\n",
                           encoding="utf-8")
    paths.append(timing_path)

    if plots:
        from plots import available_plots, emit_plot

        for kind in available_plots(report):
            paths.append(emit_plot(report, kind, out_dir))

    for path in paths:
        logger.info(f"Wrote {path}")
    return paths


def read_report(path: Path) -> Report:
    """Load a written report.json back into a Report."""
    return Report.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
