"""Shared domain types: sensor fields, motion vectors, labels, and the
hypothesis algebra with per-field wildcard semantics.

All types are immutable after construction and safe to share across threads.
Wildcards are represented as ``None``: a hypothesis field set to ``None``
matches any concrete value of that field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

from .errors import ValidationError

# Crossing directions along the primary line axis. "left-to-right" moves
# toward increasing line coordinate, "right-to-left" toward decreasing.
LEFT_TO_RIGHT = "left-to-right"
RIGHT_TO_LEFT = "right-to-left"
DIRECTIONS = (LEFT_TO_RIGHT, RIGHT_TO_LEFT)

ROLE_PRIMARY = "primary"
ROLE_PERPENDICULAR = "perpendicular"


def direction_sign(direction: str) -> int:
    """Map a direction token to its sign along the primary line axis."""
    if direction == LEFT_TO_RIGHT:
        return 1
    if direction == RIGHT_TO_LEFT:
        return -1
    raise ValidationError(f"unknown direction token: {direction!r}")


def direction_token(sign: float) -> str:
    return LEFT_TO_RIGHT if sign > 0 else RIGHT_TO_LEFT


@dataclass(frozen=True)
class SensorDef:
    """One sensor: an id and a 2D position in the local planar frame (meters)."""

    id: str
    position: tuple[float, float]

    def __post_init__(self) -> None:
        x, y = self.position
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError(f"sensor {self.id!r} has a non-finite position")


@dataclass(frozen=True)
class LineDef:
    """An ordered subset of sensors forming one line of the field."""

    id: str
    role: str
    sensor_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.role not in (ROLE_PRIMARY, ROLE_PERPENDICULAR):
            raise ValidationError(f"line {self.id!r}: unknown role {self.role!r}")
        if len(self.sensor_ids) < 2:
            raise ValidationError(f"line {self.id!r} needs at least two sensors")


@dataclass(frozen=True)
class SensorField:
    """Graph-structured 2D sensor layout.

    The order of ``sensors`` is canonical: it fixes the column order of every
    activation matrix built for this field. Requires at least one primary and
    one perpendicular line (motion estimation uses the primary line,
    classification the perpendicular one).
    """

    sensors: tuple[SensorDef, ...]
    lines: tuple[LineDef, ...]

    def __post_init__(self) -> None:
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ValidationError("sensor ids must be unique")
        positions = {s.position for s in self.sensors}
        if len(positions) != len(self.sensors):
            raise ValidationError("no two sensors may share a position")
        if len(self.lines) < 2:
            raise ValidationError("a field needs at least two lines")
        known = set(ids)
        for line in self.lines:
            missing = [sid for sid in line.sensor_ids if sid not in known]
            if missing:
                raise ValidationError(f"line {line.id!r} references unknown sensors {missing}")
        roles = {line.role for line in self.lines}
        if ROLE_PRIMARY not in roles or ROLE_PERPENDICULAR not in roles:
            raise ValidationError("field needs a primary line and a perpendicular line")

    @property
    def sensor_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.sensors)

    def column_index(self, sensor_id: str) -> int:
        """Index of a sensor in the canonical column order."""
        for i, s in enumerate(self.sensors):
            if s.id == sensor_id:
                return i
        raise KeyError(sensor_id)

    def position_of(self, sensor_id: str) -> tuple[float, float]:
        return self.sensors[self.column_index(sensor_id)].position

    def positions(self) -> np.ndarray:
        """(n, 2) array of sensor positions in canonical order."""
        return np.array([s.position for s in self.sensors], dtype=float)

    def primary_line(self) -> LineDef:
        return next(l for l in self.lines if l.role == ROLE_PRIMARY)

    def perpendicular_line(self) -> LineDef:
        return next(l for l in self.lines if l.role == ROLE_PERPENDICULAR)

    def line_axis(self, line: LineDef) -> np.ndarray:
        """Unit vector from the line's first sensor to its last."""
        a = np.array(self.position_of(line.sensor_ids[0]))
        b = np.array(self.position_of(line.sensor_ids[-1]))
        d = b - a
        norm = float(np.hypot(*d))
        if norm == 0.0:
            raise ValidationError(f"line {line.id!r} has zero extent")
        return d / norm

    def line_coordinate(self, line: LineDef, sensor_id: str) -> float:
        """Scalar position of a sensor along the line axis, relative to the first sensor."""
        axis = self.line_axis(line)
        origin = np.array(self.position_of(line.sensor_ids[0]))
        return float(np.dot(np.array(self.position_of(sensor_id)) - origin, axis))


@dataclass(frozen=True)
class Reading:
    """One 3-axis sample of a sensor at time ``t`` (seconds)."""

    sensor_id: str
    t: float
    value: tuple[float, float, float]

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.value) or not math.isfinite(self.t):
            raise ValidationError(f"non-finite reading for sensor {self.sensor_id!r} at t={self.t}")


@dataclass(frozen=True)
class MotionVector:
    """Crossing motion: direction token, velocity (m/s), angle (degrees).

    The angle measures the deviation of the motion track from the primary
    line axis; 0 means the object follows the line exactly. Any field may be
    ``None`` (wildcard, i.e. unknown or unconstrained).
    """

    direction: Optional[str] = None
    velocity: Optional[float] = None
    angle: Optional[float] = None

    def __post_init__(self) -> None:
        if self.direction is not None and self.direction not in DIRECTIONS:
            raise ValidationError(f"unknown direction token: {self.direction!r}")
        if self.velocity is not None and not self.velocity > 0:
            raise ValidationError(f"velocity must be > 0, got {self.velocity}")
        if self.angle is not None and not (-90.0 <= self.angle < 90.0):
            raise ValidationError(f"angle must lie in [-90, 90), got {self.angle}")

    @property
    def is_fully_specified(self) -> bool:
        return None not in (self.direction, self.velocity, self.angle)


@dataclass(frozen=True)
class ObjectLabel:
    """Object identity: a concrete type token and/or its category, either may be wildcard."""

    object_type: Optional[str] = None
    category: Optional[str] = None

    @property
    def is_fully_specified(self) -> bool:
        return self.object_type is not None and self.category is not None


@dataclass(frozen=True)
class Hypothesis:
    """A pairing of an object label and a motion vector."""

    label: ObjectLabel = ObjectLabel()
    motion: MotionVector = MotionVector()

    @property
    def is_fully_specified(self) -> bool:
        return self.label.is_fully_specified and self.motion.is_fully_specified


WILDCARD_HYPOTHESIS = Hypothesis()


class Provenance(str, Enum):
    INITIAL = "initial"
    INVERSE = "inverse"
    SIMULATED = "simulated"
    REDUCED = "reduced"
    FINAL = "final"


@dataclass(frozen=True)
class HypothesisSet:
    """A set of hypotheses tagged with where in the pipeline it was produced."""

    hypotheses: frozenset[Hypothesis]
    provenance: Provenance

    @classmethod
    def of(cls, hypotheses: Iterable[Hypothesis], provenance: Provenance) -> "HypothesisSet":
        return cls(frozenset(hypotheses), provenance)

    def __len__(self) -> int:
        return len(self.hypotheses)

    def __iter__(self) -> Iterator[Hypothesis]:
        return iter(self.hypotheses)

    def __contains__(self, h: Hypothesis) -> bool:
        return h in self.hypotheses


@dataclass(frozen=True)
class MatchTolerances:
    """Absolute tolerances for matching continuous hypothesis fields."""

    velocity: float = 0.0
    angle: float = 0.0

    @classmethod
    def from_grid(cls, velocities: Iterable[float], angles: Iterable[float]) -> "MatchTolerances":
        """Half the largest grid step per axis, so every real value within the
        grid's span matches at least one grid point."""
        return cls(velocity=_half_max_step(velocities), angle=_half_max_step(angles))


def _half_max_step(values: Iterable[float]) -> float:
    ordered = sorted(values)
    if len(ordered) < 2:
        return 0.0
    return max(b - a for a, b in zip(ordered, ordered[1:])) / 2.0


class Taxonomy:
    """Type-to-category maps, one per classification scheme.

    One scheme is *active*: it defines the ``category`` field of object
    labels throughout the pipeline. Other schemes are available as coarser or
    finer evaluation levels. The pseudo-level ``"type"`` always exists.
    """

    TYPE_LEVEL = "type"

    def __init__(self, schemes: Mapping[str, Mapping[str, str]], active: str):
        if active not in schemes:
            raise ValidationError(f"active scheme {active!r} not among schemes {sorted(schemes)}")
        self._schemes = {name: dict(table) for name, table in schemes.items()}
        self.active = active

    @property
    def schemes(self) -> Mapping[str, Mapping[str, str]]:
        return self._schemes

    def levels(self) -> tuple[str, ...]:
        return (self.TYPE_LEVEL,) + tuple(self._schemes)

    def category_of(self, object_type: str, scheme: Optional[str] = None) -> str:
        name = self.active if scheme is None else _checked_scheme(self._schemes, scheme)
        table = self._schemes[name]
        if object_type not in table:
            raise ValidationError(f"type {object_type!r} not in taxonomy scheme {name!r}")
        return table[object_type]

    def label_for(self, object_type: str) -> ObjectLabel:
        return ObjectLabel(object_type=object_type, category=self.category_of(object_type))

    def project(self, label: ObjectLabel, level: str) -> Optional[str]:
        """Collapse a label to a single token at the given level, or None if unknown."""
        if level == self.TYPE_LEVEL:
            return label.object_type
        if label.object_type is not None:
            return self.category_of(label.object_type, scheme=level)
        if level == self.active:
            return label.category
        return None


def _checked_scheme(schemes: Mapping[str, Mapping[str, str]], name: str) -> str:
    if name not in schemes:
        raise ValidationError(f"unknown taxonomy scheme {name!r}")
    return name


def hypothesis_matches(concrete: Hypothesis, pattern: Hypothesis, tol: MatchTolerances) -> bool:
    """True iff every non-wildcard field of ``pattern`` matches ``concrete``.

    Direction and labels match exactly (a category-only pattern matches every
    concrete type of that category); velocity and angle match within the
    given absolute tolerances. ``concrete`` must be fully specified.
    """
    if not concrete.is_fully_specified:
        raise ValidationError("hypothesis_matches requires a fully specified concrete hypothesis")
    p, c = pattern, concrete
    if p.label.object_type is not None and p.label.object_type != c.label.object_type:
        return False
    if p.label.category is not None and p.label.category != c.label.category:
        return False
    if p.motion.direction is not None and p.motion.direction != c.motion.direction:
        return False
    if p.motion.velocity is not None and abs(c.motion.velocity - p.motion.velocity) > tol.velocity:
        return False
    if p.motion.angle is not None and abs(c.motion.angle - p.motion.angle) > tol.angle:
        return False
    return True


def intersect_hypotheses(
    sim: HypothesisSet, real: HypothesisSet, tol: MatchTolerances
) -> HypothesisSet:
    """Keep the simulated hypotheses compatible with at least one inverse pattern.

    An empty ``real`` set means the inverse pass produced no information at
    all, which constrains nothing: the full simulated set is returned.
    """
    if len(real) == 0:
        return HypothesisSet.of(sim.hypotheses, Provenance.REDUCED)
    kept = [h for h in sim if any(hypothesis_matches(h, p, tol) for p in real)]
    return HypothesisSet.of(kept, Provenance.REDUCED)
