import sys
from pathlib import Path

import pytest

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from errors import ConfigurationError
from plots import available_plots, emit_plot
from report_writer import CSV_COLUMNS, generate_summary_string, round_floats, spectrum_rows, write_spectra_csv
from run_config import AnalysisResult, Check, Report


def spectrum_result(name, subspace, values):
    rows = [{"index": i, "eigenvalue": v, "residual": 1e-4, "converged": True, "tolerance": 1e-2}
            for i, v in enumerate(values)]
    return AnalysisResult(name=name, data={"subspace": subspace, "trivial": not values, "eigenvalues": rows})


def make_report(analyses):
    return Report(version="0.1.0", config={"manifold": "sphere(0.5)"}, analyses=analyses)


@pytest.fixture
def spectra_report():
    trivial = spectrum_result("verdict", "ker-div0", []).data
    return make_report([
        spectrum_result("spectrum-imdiv", "im-div-dagger", [0.0, 0.0, 0.0, -1.0]),
        AnalysisResult(name="verdict", data={"status": "stable", "note": "trivial subspace", "spectrum": trivial},
                       checks=[Check(name="kernel_probe_norm", value=1e-9, tolerance=1e-3, passed=True)]),
    ])


@pytest.fixture
def convergence_report():
    rows = [{"resolution": n, "spacing": 1.0 / n, "residuals": {"weighted_divergence": 4.0 / n ** 2,
                                                              "exact_zero": 0.0}}
            for n in (16, 24, 32)]
    return make_report([AnalysisResult(name="convergence", data={"rows": rows})])


def test_available_plots(spectra_report, convergence_report):
    assert available_plots(spectra_report) == ["spectrum"]
    assert available_plots(convergence_report) == ["residual-convergence"]
    assert available_plots(make_report([])) == []


def test_spectrum_plot_is_deterministic(tmp_path, spectra_report):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = emit_plot(spectra_report, "spectrum", tmp_path / "a")
    second = emit_plot(spectra_report, "spectrum", tmp_path / "b")
    assert first.name == "spectrum.svg"
    assert first.read_bytes() == second.read_bytes()


def test_trivial_subspace_is_annotated(tmp_path, spectra_report):
    text = emit_plot(spectra_report, "spectrum", tmp_path).read_text()
    assert "trivial subspace" in text
    assert "1/4" in text


def test_convergence_plot_has_reference_slope(tmp_path, convergence_report):
    text = emit_plot(convergence_report, "residual-convergence", tmp_path).read_text()
    assert "slope 2" in text
    assert "weighted divergence" in text
    assert "exact zero" not in text


def test_emit_plot_errors(tmp_path, spectra_report):
    with pytest.raises(ConfigurationError):
        emit_plot(spectra_report, "histogram", tmp_path)
    with pytest.raises(ConfigurationError):
        emit_plot(spectra_report, "residual-convergence", tmp_path)


def test_round_floats():
    assert round_floats(1.0 / 3.0) == 0.3333333333
    assert round_floats({"a": [float("nan"), float("inf"), 2]}) == {"a": [None, None, 2]}
    assert round_floats(True) is True


def test_spectra_csv(tmp_path, spectra_report):
    path = write_spectra_csv(spectra_report, tmp_path / "spectra.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    # the trivial kernel contributes no rows
    assert len(lines) == 1 + 4
    assert {row["subspace"] for row in spectrum_rows(spectra_report)} == {"im-div-dagger"}


def test_summary_lists_checks_and_verdict(spectra_report):
    summary = generate_summary_string(spectra_report)
    assert summary.startswith("# Soliton stability run for sphere(0.5)")
    assert "| kernel_probe_norm | 1e-09 | <= 0.001 | yes |" in summary
    assert "**Verdict:** stable (trivial subspace)" in summary
    assert summary.endswith("*Generated by soliton-stability-lab 0.1.0*")
