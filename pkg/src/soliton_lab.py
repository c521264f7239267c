#!/usr/bin/env python3
"""
Command-line entry point of the soliton stability lab.
Usage: python src/soliton_lab.py VERB [--config FILE] [--resolution N] [--seed S] [--out DIR]

Verbs:
    verify-identities   weighted-operator identities, Ricci relations, eigen-relations, invariance
    spectrum            L_f on Im(div_f^dagger) and Ker(div_f)_0, Delta_f on functions
    stability           linear-stability verdict
    second-variation    second variation of named tensors
    w                   W-functional at the soliton
    run                 the analyses listed in the config file
    plot                plots of an already written report
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv
from loguru import logger

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent))
from errors import EXIT_CONFIG_ERROR, EXIT_OK, SolitonLabError, exit_code_for
from helper import PROJECT_ROOT, PROJECT_VERSION
from run_config import COMPACT_ONLY, RunConfig, load_config

load_dotenv()

(PROJECT_ROOT / "logs").mkdir(exist_ok=True)
logger.add(
    PROJECT_ROOT / "logs/soliton_lab.log",
    rotation="1 day",
    retention="7 days",
    level="INFO",
    format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}"
)

VERB_ANALYSES: Dict[str, List[str]] = {
    "verify-identities": ["identities", "ricci-relations", "eigen-relations", "invariance"],
    "spectrum": ["spectrum-imdiv", "spectrum-ker0", "scalar-spectrum"],
    "stability": ["verdict"],
    "second-variation": ["second-variation"],
    "w": ["w-functional"],
}
VERBS = list(VERB_ANALYSES) + ["run", "plot"]


def configure(verb: str, config_path: Optional[Path], overrides: dict) -> RunConfig:
    """
    Load the config file, apply flag overrides and the verb's analyses.

    verify-identities drops its compact-only parts on the flat-box fixture;
    every other verb keeps its analyses, so a compact-only verb on the fixture
    is rejected as a configuration error.
    """
    config = load_config(config_path, overrides)
    if verb not in VERB_ANALYSES:
        return config
    analyses = VERB_ANALYSES[verb]
    if verb == "verify-identities" and config.descriptor.name == "flat-box":
        analyses = [a for a in analyses if a not in COMPACT_ONLY]
    return load_config(config_path, {**overrides, "analyses": analyses})


def plot_existing(out_dir: Path) -> int:
    from plots import available_plots, emit_plot
    from report_writer import read_report

    report_path = out_dir / "report.json"
    if not report_path.exists():
        raise FileNotFoundError(f"no report at {report_path}; run an analysis verb first")
    report = read_report(report_path)
    kinds = available_plots(report)
    if not kinds:
        print(f"Report {report_path} has no spectrum or convergence data to plot", file=sys.stderr)
        return EXIT_OK
    for kind in kinds:
        path = emit_plot(report, kind, out_dir)
        print(f"Wrote {path}")
    return EXIT_OK


def main():
    parser = argparse.ArgumentParser(
        description="Numerical stability lab for compact gradient shrinking Ricci solitons"
    )
    parser.add_argument("verb", choices=VERBS, help="What to compute")
    parser.add_argument("--config", type=Path, help="JSON run configuration (default: built-in defaults)")
    parser.add_argument("--resolution", type=int, help="Cells per panel or box edge (8..64)")
    parser.add_argument("--seed", type=int, help="Seed of the random test fields")
    parser.add_argument("--out", type=Path, help="Output directory for report files")
    parser.add_argument("--manifold", type=str, help="Manifold descriptor, e.g. 'sphere(0.5)'")
    parser.add_argument("--version", action="version", version=f"%(prog)s {PROJECT_VERSION}")

    args = parser.parse_args()

    try:
        if args.verb == "plot":
            out_dir = args.out
            if out_dir is None:
                out_dir = Path(load_config(args.config).output_dir)
            sys.exit(plot_existing(out_dir))

        from lab_runner import run

        overrides = {
            "resolution": args.resolution,
            "seed": args.seed,
            "output_dir": str(args.out) if args.out is not None else None,
            "manifold": args.manifold,
        }
        config = configure(args.verb, args.config, overrides)
        logger.info(f"{args.verb}: {config.manifold} at N={config.resolution}, analyses {config.ordered_analyses()}")
        outcome = run(config)

        print("\n" + "=" * 80)
        print(f"{args.verb.upper()} on {config.manifold} (N={config.resolution}): {outcome.report.status.upper()}")
        print("=" * 80)
        for result in outcome.report.analyses:
            failed = [c.name for c in result.checks if not c.passed]
            detail = f" - {result.error}" if result.error else (f" - failed: {', '.join(failed)}" if failed else "")
            print(f"  {result.name:<18} {result.status}{detail}")
            if result.name == "verdict" and "status" in result.data:
                print(f"  {'':<18} verdict: {result.data['status']} {result.data.get('note', '')}".rstrip())
        if outcome.paths:
            print(f"\nReport written to {outcome.paths[0].parent}")
        sys.exit(outcome.exit_code)

    except (SolitonLabError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        logger.error(f"{args.verb} aborted: {e}")
        sys.exit(exit_code_for(e) if isinstance(e, SolitonLabError) else EXIT_CONFIG_ERROR)


if __name__ == "__main__":
    main()
