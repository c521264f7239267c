"""
Run configuration and report schema.

Config files are JSON objects validated into RunConfig; unknown keys are
rejected. The Report model is what `report.json` serializes, under the
versioned field `schema`.
"""
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, get_args

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

sys.path.append(str(Path(__file__).parent))
from errors import ConfigurationError
from grid_geometry import ManifoldDescriptor
from variation_analysis import SolverSettings
from zoo import parse_descriptor

REPORT_SCHEMA_VERSION = 1
MIN_RESOLUTION = 8
MAX_RESOLUTION = 64

Analysis = Literal[
    "identities", "ricci-relations", "eigen-relations", "invariance", "convergence",
    "spectrum-imdiv", "spectrum-ker0", "scalar-spectrum", "verdict",
    "second-variation", "w-functional",
]
NamedTensor = Literal["ricci", "factor-difference", "lie-derivative", "metric", "random"]

# analyses that need a closed manifold; the flat-box fixture is identity-only
COMPACT_ONLY = frozenset({
    "eigen-relations", "invariance", "spectrum-imdiv", "spectrum-ker0", "scalar-spectrum",
    "verdict", "second-variation", "w-functional",
})


class Tolerances(BaseModel):
    """Thresholds the acceptance checks are tested against."""

    model_config = ConfigDict(extra="forbid")

    soliton: float = Field(1e-6, gt=0)
    solver: float = Field(1e-10, gt=0)
    projection: float = Field(1e-2, gt=0)
    eigen: float = Field(1e-2, gt=0)
    identity: float = Field(5e-3, gt=0)
    ricci_relation: float = Field(1e-3, gt=0)
    normalization: float = Field(1e-10, gt=0)
    energy_ratio: float = Field(1e-4, gt=0)
    w_functional: float = Field(1e-4, gt=0)
    invariance: float = Field(5e-3, gt=0)
    eigen_relation: float = Field(1e-2, gt=0)
    bound: float = Field(1e-3, gt=0)
    alignment: float = Field(0.99, gt=0, le=1)
    convergence_order: float = Field(0.4, gt=0)


class SolverLimits(BaseModel):
    model_config = ConfigDict(extra="forbid")

    solver_max_iter: int = Field(10000, ge=1)
    krylov_dim: int = Field(48, ge=4)
    krylov_restarts: int = Field(20, ge=0)
    probe_count: int = Field(20, ge=1)


class RunConfig(BaseModel):
    """
    One run of the lab.

    Attributes:
        manifold: Descriptor such as ``sphere(0.5)``, ``product(sphere(0.5), sphere(0.5))``
            or ``flat-box(n=2, side=8)``.
        resolution: Cells per panel edge (sphere factors) or per box edge.
        seed: Seed for every random test field; fixed seed gives a byte-identical report.
        analyses: Requested analyses, run in dependency order.
        second_variation_tensors: Named tensors whose second variation is reported.
        samples: Random fields per sampled check (Jacobi kernel, invariance).
        spectrum_count: Eigenpairs per spectrum.
        convergence_resolutions: Resolutions of the refinement study.
        band_degree: Polynomial degree of the identity test fields.
        verdict_band: Inconclusive band; derived from identity residuals when omitted.
        output_dir: Directory receiving report files.
        plots: Emit SVG plots next to the report.
    """

    model_config = ConfigDict(extra="forbid")

    manifold: str = "sphere(0.5)"
    resolution: int = Field(24, ge=MIN_RESOLUTION, le=MAX_RESOLUTION)
    seed: int = Field(0, ge=0)
    analyses: List[Analysis] = Field(default_factory=lambda: ["identities"])
    second_variation_tensors: List[NamedTensor] = Field(default_factory=lambda: ["ricci", "lie-derivative"])
    samples: int = Field(3, ge=1)
    spectrum_count: int = Field(5, ge=1)
    convergence_resolutions: List[int] = Field(default_factory=lambda: [16, 24, 32])
    band_degree: int = Field(3, ge=0, le=6)
    verdict_band: Optional[float] = Field(None, gt=0)
    output_dir: str = "output"
    plots: bool = True
    tolerances: Tolerances = Field(default_factory=Tolerances)
    limits: SolverLimits = Field(default_factory=SolverLimits)

    @field_validator("manifold")
    @classmethod
    def _known_manifold(cls, value: str) -> str:
        try:
            parse_descriptor(value)
        except ConfigurationError as e:
            raise ValueError(str(e)) from e
        return value.strip()

    @field_validator("convergence_resolutions")
    @classmethod
    def _resolutions_in_range(cls, values: List[int]) -> List[int]:
        for n in values:
            if not MIN_RESOLUTION <= n <= MAX_RESOLUTION:
                raise ValueError(f"resolution {n} outside {MIN_RESOLUTION}..{MAX_RESOLUTION}")
        return values

    @model_validator(mode="after")
    def _fixture_is_identity_only(self) -> "RunConfig":
        if self.descriptor.name == "flat-box":
            rejected = sorted(set(self.analyses) & COMPACT_ONLY)
            if rejected:
                raise ValueError(f"the flat-box fixture cannot run compact-only analyses: {', '.join(rejected)}")
        if "convergence" in self.analyses and len(set(self.convergence_resolutions)) < 2:
            raise ValueError("convergence needs at least two distinct resolutions")
        return self

    @property
    def descriptor(self) -> ManifoldDescriptor:
        return parse_descriptor(self.manifold)

    def ordered_analyses(self) -> List[str]:
        """Requested analyses without duplicates, in dependency order."""
        order = list(get_args(Analysis))
        return sorted(set(self.analyses), key=order.index)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(
            tol=self.tolerances.solver,
            mean_tol=self.tolerances.projection,
            max_iter=self.limits.solver_max_iter,
            eigen_tol=self.tolerances.eigen,
            krylov_dim=self.limits.krylov_dim,
            krylov_restarts=self.limits.krylov_restarts,
            probe_count=self.limits.probe_count,
            band_degree=self.band_degree,
            seed=self.seed,
        )


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Read a JSON config file and apply command-line overrides.

    Args:
        path: Config file; defaults apply when None.
        overrides: Values replacing file entries; None values are ignored.

    Raises:
        ConfigurationError: unreadable file, invalid JSON or a failed validation.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


# report schema

class Check(BaseModel):
    """One acceptance check: value compared with the tolerance it was tested against."""

    name: str
    value: Optional[float]
    tolerance: float
    comparison: Literal["<=", ">=", "<", ">", "abs-diff<="] = "<="
    expected: Optional[float] = None
    passed: bool


class AnalysisResult(BaseModel):
    name: str
    status: Literal["ok", "failed", "error"] = "ok"
    checks: List[Check] = Field(default_factory=list)
    data: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None
    category: Optional[str] = None
    exit_code: int = 0


class Report(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(REPORT_SCHEMA_VERSION, alias="schema")
    version: str
    config: Dict[str, Any]
    soliton: Dict[str, Any] = Field(default_factory=dict)
    analyses: List[AnalysisResult] = Field(default_factory=list)
    status: Literal["ok", "failed", "error"] = "ok"
    exit_code: int = 0

    def analysis(self, name: str) -> Optional[AnalysisResult]:
        return next((a for a in self.analyses if a.name == name), None)
