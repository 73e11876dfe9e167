"""Shared fixtures: a symmetric two-line test field, two object geometries
with well-separated footprints, and a 36-record noiseless library."""

import pytest

from cavesense.detection import DetectorConfig
from cavesense.model import LineDef, MatchTolerances, SensorDef, SensorField, Taxonomy
from cavesense.simulate import (
    ObjectGeometry,
    SimulationConfig,
    SimulationGrid,
    SourceDef,
    generate_library,
)

PERP_YS = (-11.0, -8.0, -5.0, -2.0, 2.0, 5.0, 8.0, 11.0)
DETECTION_RANGE = 3.2
DT = 0.1
LIBRARY_SEED = 11


def make_field() -> SensorField:
    primary = [
        SensorDef(id=f"p{i:02d}", position=(float(x), 0.0))
        for i, x in enumerate(range(-20, 25, 5))
    ]
    perp = [SensorDef(id=f"q{i:02d}", position=(0.0, y)) for i, y in enumerate(PERP_YS)]
    return SensorField(
        sensors=tuple(primary + perp),
        lines=(
            LineDef(id="guide", role="primary", sensor_ids=tuple(s.id for s in primary)),
            LineDef(id="gate", role="perpendicular", sensor_ids=tuple(s.id for s in perp)),
        ),
    )


def make_narrow() -> ObjectGeometry:
    return ObjectGeometry(
        type_id="gt-n",
        category="narrow",
        outline=((-3.0, -3.5), (3.0, -3.5), (3.0, 3.5), (-3.0, 3.5)),
        sources=(
            SourceDef(position=(0.0, -3.0)),
            SourceDef(position=(0.0, 3.0)),
            SourceDef(position=(2.0, 0.0)),
            SourceDef(position=(-2.0, 0.0)),
        ),
    )


def make_wide() -> ObjectGeometry:
    return ObjectGeometry(
        type_id="gt-w",
        category="wide",
        outline=((-4.0, -9.0), (4.0, -9.0), (4.0, 9.0), (-4.0, 9.0)),
        sources=(
            SourceDef(position=(0.0, -8.5)),
            SourceDef(position=(0.0, 8.5)),
            SourceDef(position=(2.0, 0.0)),
            SourceDef(position=(-2.0, 0.0)),
        ),
    )


@pytest.fixture(scope="session")
def field() -> SensorField:
    return make_field()


@pytest.fixture(scope="session")
def geometries() -> tuple[ObjectGeometry, ObjectGeometry]:
    return (make_narrow(), make_wide())


@pytest.fixture(scope="session")
def taxonomy() -> Taxonomy:
    return Taxonomy(
        schemes={
            "size": {"gt-n": "narrow", "gt-w": "wide"},
            "kind": {"gt-n": "vehicle", "gt-w": "vehicle"},
        },
        active="size",
    )


@pytest.fixture(scope="session")
def detector() -> DetectorConfig:
    # influence=0 freezes rolling stats during activation; the smooth signal
    # law needs that for contiguous footprints (and thus exact self-matches).
    return DetectorConfig(lag=50, z_threshold=3.5, influence=0.0, min_gap=1.0)


@pytest.fixture(scope="session")
def grid() -> SimulationGrid:
    return SimulationGrid(
        directions=("left-to-right", "right-to-left"),
        velocities=(3.0, 4.0, 5.0),
        angles=(-6.0, 0.0, 6.0),
    )


@pytest.fixture(scope="session")
def tolerances(grid) -> MatchTolerances:
    return MatchTolerances.from_grid(grid.velocities, grid.angles)


@pytest.fixture(scope="session")
def base_config(field) -> SimulationConfig:
    return SimulationConfig(
        field=field, detection_range=DETECTION_RANGE, noise_sigma=0.0, dt=DT
    )


@pytest.fixture(scope="session")
def library36(geometries, grid, base_config, detector):
    """2 geometries x 2 directions x 3 velocities x 3 angles, noiseless."""
    lib = generate_library(geometries, grid, base_config, seed=LIBRARY_SEED, detector=detector)
    assert len(lib.records) == 36 and not lib.skipped
    return lib
