"""Pipeline configuration and experiment specs, loadable from TOML or JSON.

Precedence: command-line flags > config file > built-in defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .detection import DetectorConfig
from .errors import ValidationError
from .inverse import ClusterParams
from .model import DIRECTIONS, MatchTolerances
from .simulate import ObjectGeometry, SimulationGrid, SourceDef

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


def load_config_doc(path: Union[str, Path]) -> dict:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    if p.suffix.lower() == ".toml":
        try:
            with open(p, "rb") as fh:
                return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{p}: invalid TOML: {exc}") from exc
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    """Paths and parameters shared by the detect/match/evaluate commands."""

    field_path: Optional[Path] = None
    taxonomy_path: Optional[Path] = None
    library_path: Optional[Path] = None
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    tolerances: MatchTolerances = field(default_factory=lambda: MatchTolerances(velocity=0.5, angle=3.0))
    dt: float = 0.1
    seed: int = 7
    confidence_floor: float = 0.5
    use_inverse: bool = True

    def require(self, attr: str, flag: str) -> Any:
        value = getattr(self, attr)
        if value is None:
            raise ValidationError(f"missing {attr.replace('_', ' ')}; set it in the config or via {flag}")
        return value


def _subtable(doc: Mapping[str, Any], key: str) -> Mapping[str, Any]:
    value = doc.get(key, {})
    if not isinstance(value, Mapping):
        raise ValidationError(f"config section {key!r} must be a table/object")
    return value


def pipeline_config_from_doc(
    doc: Mapping[str, Any], base_dir: Path, overrides: Optional[Mapping[str, Any]] = None
) -> PipelineConfig:
    overrides = dict(overrides or {})

    def resolve(key: str) -> Optional[Path]:
        if overrides.get(key) is not None:
            return Path(overrides[key])
        if doc.get(key) is not None:
            return base_dir / str(doc[key])
        return None

    det = _subtable(doc, "detector")
    clu = _subtable(doc, "cluster")
    tol = _subtable(doc, "tolerances")
    defaults = PipelineConfig()

    def scalar(key: str, fallback):
        if overrides.get(key) is not None:
            return overrides[key]
        return doc.get(key, fallback)

    return PipelineConfig(
        field_path=resolve("field"),
        taxonomy_path=resolve("taxonomy"),
        library_path=resolve("library"),
        detector=DetectorConfig(
            lag=int(det.get("lag", defaults.detector.lag)),
            z_threshold=float(det.get("z_threshold", defaults.detector.z_threshold)),
            influence=float(det.get("influence", defaults.detector.influence)),
            min_gap=float(det.get("min_gap", defaults.detector.min_gap)),
        ),
        cluster=ClusterParams(
            eps_space=float(clu.get("eps_space", defaults.cluster.eps_space)),
            eps_time=float(clu.get("eps_time", defaults.cluster.eps_time)),
            min_pts=int(clu.get("min_pts", defaults.cluster.min_pts)),
        ),
        tolerances=MatchTolerances(
            velocity=float(tol.get("velocity", defaults.tolerances.velocity)),
            angle=float(tol.get("angle", defaults.tolerances.angle)),
        ),
        dt=float(scalar("dt", defaults.dt)),
        seed=int(scalar("seed", defaults.seed)),
        confidence_floor=float(scalar("confidence_floor", defaults.confidence_floor)),
        use_inverse=bool(scalar("use_inverse", defaults.use_inverse)),
    )


def load_pipeline_config(
    path: Optional[Union[str, Path]], overrides: Optional[Mapping[str, Any]] = None
) -> PipelineConfig:
    if path is None:
        return pipeline_config_from_doc({}, Path.cwd(), overrides)
    p = Path(path)
    return pipeline_config_from_doc(load_config_doc(p), p.parent, overrides)


@dataclass(frozen=True)
class ExperimentSpec:
    """What to simulate and how the closed-loop harness should replay it."""

    geometries: tuple[ObjectGeometry, ...]
    grid: SimulationGrid
    detection_range: float = 4.0
    noise_sigmas: tuple[float, ...] = (0.0,)
    dt: float = 0.1
    lead_time: float = 8.0
    lateral_offset: float = 0.0
    repetitions: int = 1
    disable_inverse: bool = False
    seed: int = 7

    def __post_init__(self) -> None:
        if not self.geometries:
            raise ValidationError("experiment spec needs at least one geometry")
        if self.repetitions < 1:
            raise ValidationError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.noise_sigmas:
            raise ValidationError("experiment spec needs at least one noise level")
        if any(s < 0 for s in self.noise_sigmas):
            raise ValidationError("noise levels must be >= 0")


def _geometry_from_doc(doc: Mapping[str, Any], pos: int) -> ObjectGeometry:
    try:
        return ObjectGeometry(
            type_id=str(doc["type_id"]),
            category=str(doc["category"]),
            outline=tuple((float(x), float(y)) for x, y in doc["outline"]),
            sources=tuple(
                SourceDef(
                    position=(float(s["position"][0]), float(s["position"][1])),
                    strength=float(s.get("strength", 1.0)),
                )
                for s in doc["sources"]
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"geometry #{pos}: malformed entry ({exc})") from exc


def experiment_spec_from_doc(doc: Mapping[str, Any], path="<spec>") -> ExperimentSpec:
    if not isinstance(doc, Mapping):
        raise ValidationError(f"{path}: experiment spec must be a table/object")
    grid_doc = _subtable(doc, "grid")
    directions = tuple(grid_doc.get("directions", DIRECTIONS))
    grid = SimulationGrid(
        directions=directions,
        velocities=tuple(float(v) for v in grid_doc.get("velocities", ())),
        angles=tuple(float(a) for a in grid_doc.get("angles", ())),
    )
    geometries = tuple(
        _geometry_from_doc(g, i) for i, g in enumerate(doc.get("geometries", []))
    )
    noise = doc.get("noise_sigmas", [0.0])
    return ExperimentSpec(
        geometries=geometries,
        grid=grid,
        detection_range=float(doc.get("detection_range", 4.0)),
        noise_sigmas=tuple(float(s) for s in noise),
        dt=float(doc.get("dt", 0.1)),
        lead_time=float(doc.get("lead_time", 8.0)),
        lateral_offset=float(doc.get("lateral_offset", 0.0)),
        repetitions=int(doc.get("repetitions", 1)),
        disable_inverse=bool(doc.get("disable_inverse", False)),
        seed=int(doc.get("seed", 7)),
    )


def load_experiment_spec(path: Union[str, Path]) -> ExperimentSpec:
    return experiment_spec_from_doc(load_config_doc(path), path)
