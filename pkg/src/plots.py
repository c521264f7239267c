"""
SVG plots of a report.

Both kinds are deterministic: fixed hash salt, no creation date, no
randomness in layout.
"""
import sys
from pathlib import Path
from typing import List

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

sys.path.append(str(Path(__file__).parent))
from errors import ConfigurationError
from run_config import Report
from report_writer import spectrum_blocks

PLOT_KINDS = ("spectrum", "residual-convergence")
UPPER_BOUND = 0.25
REFERENCE_ORDER = 2.0
PLOT_FILES = {"spectrum": "spectrum.svg", "residual-convergence": "residual_convergence.svg"}


def setup_style() -> None:
    plt.rcParams.update({
        "svg.hashsalt": "soliton-lab",
        "svg.fonttype": "none",
        "font.size": 10,
        "axes.grid": True,
        "grid.alpha": 0.3,
    })


def available_plots(report: Report) -> List[str]:
    kinds = []
    if spectrum_blocks(report):
        kinds.append("spectrum")
    convergence = report.analysis("convergence")
    if convergence is not None and convergence.data.get("rows"):
        kinds.append("residual-convergence")
    return kinds


def _save(fig, out_path: Path) -> Path:
    fig.savefig(out_path, format="svg", metadata={"Date": None}, bbox_inches="tight", facecolor="white")
    plt.close(fig)
    return out_path


def plot_spectrum(report: Report, out_path: Path) -> Path:
    """Eigenvalues per subspace as dots, with the 1/4 line; trivial subspaces are annotated."""
    blocks = spectrum_blocks(report)
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = []
    for column, block in enumerate(blocks):
        values = [row["eigenvalue"] for row in block["eigenvalues"] if row["eigenvalue"] is not None]
        labels.append(block["subspace"])
        if values:
            ax.plot(np.full(len(values), column), values, "o", color="tab:blue")
        else:
            ax.annotate("trivial subspace\n(no eigenvalues)", (column, UPPER_BOUND / 2), ha="center", va="center",
                        fontsize=9, color="tab:gray")
    ax.axhline(UPPER_BOUND, color="tab:red", linestyle="--", label="1/4")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_xlim(-0.5, max(len(labels) - 0.5, 0.5))
    ax.set_ylabel("eigenvalue of L_f")
    ax.set_title(f"Spectrum, {report.config.get('manifold', '')}")
    ax.legend(loc="lower right")
    return _save(fig, out_path)


def plot_residual_convergence(report: Report, out_path: Path) -> Path:
    """Identity residuals against grid spacing on log-log axes with a slope-2 reference."""
    rows = report.analysis("convergence").data["rows"]
    spacing = np.array([row["spacing"] for row in rows])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    anchor = None
    for name in rows[0]["residuals"]:
        values = np.array([row["residuals"][name] for row in rows], dtype=float)
        if np.all(values > 0):
            ax.loglog(spacing, values, "o-", label=name.replace("_", " "), markersize=4)
            anchor = values[0] if anchor is None else max(anchor, values[0])
    if anchor is not None:
        reference = anchor * (spacing / spacing[0]) ** REFERENCE_ORDER
        ax.loglog(spacing, reference, "k--", label="slope 2")
    ax.set_xlabel("grid spacing h")
    ax.set_ylabel("relative residual")
    ax.set_title(f"Residual convergence, {report.config.get('manifold', '')}")
    ax.legend(fontsize=7, loc="best")
    return _save(fig, out_path)


def emit_plot(report: Report, kind: str, out_dir: Path) -> Path:
    """
    Write one SVG plot of a report.

    Raises:
        ConfigurationError: unknown kind or the report lacks the data section.
    """
    if kind not in PLOT_KINDS:
        raise ConfigurationError(f"unknown plot kind '{kind}'")
    if kind not in available_plots(report):
        raise ConfigurationError(f"report has no data for a {kind} plot")
    setup_style()
    out_path = Path(out_dir) / PLOT_FILES[kind]
    if kind == "spectrum":
        return plot_spectrum(report, out_path)
    return plot_residual_convergence(report, out_path)
