"""Synthetic crossing generator.

Objects are polygons carrying point magnetic sources (only the sources
interact with sensors; the outline is reporting metadata). A crossing moves
the object at constant velocity along the primary line axis, optionally
rotated by the motion angle. Each sensor picks up sum(strength / d^3) over
all sources within detection range, scaled equally onto the three axes, plus
i.i.d. Gaussian noise. The binary footprint this produces is what matching
consumes, so the signal law only needs to yield plausible activation
patterns, not calibrated physics.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .detection import DetectorConfig
from .errors import EmptySimulationError, ValidationError
from .matching import BinaryActivationMatrix, binarize
from .model import (
    Hypothesis,
    HypothesisSet,
    MotionVector,
    ObjectLabel,
    Provenance,
    Reading,
    SensorField,
    direction_sign,
)

# Distance clamp of the 1/d^3 law; keeps the signal finite when a source
# passes directly over a sensor.
MIN_SOURCE_DISTANCE = 0.1

# Relative scale of the three magnetometer axes for the clean signal.
AXIS_WEIGHTS = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class SourceDef:
    """A point source in the object frame (+x points along the motion)."""

    position: tuple[float, float]
    strength: float = 1.0

    def __post_init__(self) -> None:
        x, y = self.position
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError("source position must be finite")
        if not (math.isfinite(self.strength) and self.strength >= 0):
            raise ValidationError(f"source strength must be >= 0, got {self.strength}")


@dataclass(frozen=True)
class ObjectGeometry:
    """A simulatable object type: outline for reports, sources for signals."""

    type_id: str
    category: str
    outline: tuple[tuple[float, float], ...]
    sources: tuple[SourceDef, ...]

    def __post_init__(self) -> None:
        if not self.sources:
            raise ValidationError(f"geometry {self.type_id!r} needs at least one source")
        if not _is_simple_polygon(self.outline):
            raise ValidationError(f"geometry {self.type_id!r}: outline is not a simple polygon")

    def label(self) -> ObjectLabel:
        return ObjectLabel(object_type=self.type_id, category=self.category)


def _is_simple_polygon(pts: Sequence[tuple[float, float]]) -> bool:
    n = len(pts)
    if n < 3:
        return False
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    if any(p == q for p, q in edges):
        return False
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if not adjacent and _segments_touch(edges[i], edges[j]):
                return False
    return True


def _segments_touch(e1, e2) -> bool:
    (p1, p2), (p3, p4) = e1, e2

    def orient(a, b, c) -> float:
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c) -> bool:
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0) and d1 != 0 and d2 != 0) and (
        (d3 > 0) != (d4 > 0) and d3 != 0 and d4 != 0
    ):
        return True
    for d, (seg, pt) in zip(
        (d1, d2, d3, d4), (((p3, p4), p1), ((p3, p4), p2), ((p1, p2), p3), ((p1, p2), p4))
    ):
        if d == 0 and on_segment(seg[0], seg[1], pt):
            return True
    return False


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a single crossing needs besides the object itself.

    ``start_position`` of None places the object automatically: upstream of
    the field along the motion track, far enough that the detector sees
    ``lead_time`` seconds of quiet before any source can enter detection
    range. ``duration`` of None runs until every source has left the field
    bounding box inflated by the detection range.
    """

    field: SensorField
    motion: Optional[MotionVector] = None
    start_position: Optional[tuple[float, float]] = None
    detection_range: float = 4.0
    noise_sigma: float = 0.0
    dt: float = 0.1
    duration: Optional[float] = None
    lead_time: float = 8.0
    lateral_offset: float = 0.0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if not self.detection_range > 0:
            raise ValidationError(f"detection_range must be > 0, got {self.detection_range}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.lead_time < 0:
            raise ValidationError(f"lead_time must be >= 0, got {self.lead_time}")
        if self.duration is not None and not self.duration > 0:
            raise ValidationError(f"duration must be > 0, got {self.duration}")
        if self.motion is not None and not self.motion.is_fully_specified:
            raise ValidationError("simulation motion must be fully specified")


@dataclass(frozen=True)
class SensorTrace:
    """Time series of one sensor for one simulated crossing."""

    sensor_id: str
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (t.shape[0], 3):
            raise ValidationError("trace values must be (n, 3) aligned with t")
        t.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class SimulationRecord:
    """One forward run: hypothesis, synthetic dataset, cached activation matrix."""

    record_id: str
    hypothesis: Hypothesis
    traces: tuple[SensorTrace, ...]
    activation: BinaryActivationMatrix
    config: SimulationConfig
    seed: int

    def __post_init__(self) -> None:
        if not self.hypothesis.is_fully_specified:
            raise ValidationError("simulation hypotheses must have no wildcards")

    def readings(self) -> Iterator[Reading]:
        """Flatten the dataset to readings ordered by time, then canonical sensor order."""
        return trace_readings(self.traces)


def trace_readings(traces: Sequence[SensorTrace]) -> Iterator[Reading]:
    n_ticks = len(traces[0].t) if traces else 0
    for k in range(n_ticks):
        for trace in traces:
            x, y, z = trace.values[k]
            yield Reading(
                sensor_id=trace.sensor_id,
                t=float(trace.t[k]),
                value=(float(x), float(y), float(z)),
            )


@dataclass(frozen=True)
class SkippedRun:
    type_id: str
    motion: MotionVector
    reason: str


@dataclass(frozen=True)
class SimulationLibrary:
    """All simulated crossings for a field, indexed by their hypotheses."""

    field: SensorField
    dt: float
    detector: DetectorConfig
    records: tuple[SimulationRecord, ...]
    skipped: tuple[SkippedRun, ...] = ()

    def __post_init__(self) -> None:
        keys = [manifest_key(r.hypothesis) for r in self.records]
        if len(set(keys)) != len(keys):
            raise ValidationError("library contains duplicate hypotheses")
        for r in self.records:
            if not math.isclose(r.config.dt, self.dt):
                raise ValidationError("all library records must share the library dt")

    def hypotheses(self) -> HypothesisSet:
        return HypothesisSet.of((r.hypothesis for r in self.records), Provenance.SIMULATED)

    def manifest_index(self) -> dict[str, str]:
        return {manifest_key(r.hypothesis): r.record_id for r in self.records}

    def record_by_id(self, record_id: str) -> SimulationRecord:
        for r in self.records:
            if r.record_id == record_id:
                return r
        raise KeyError(record_id)


def manifest_key(h: Hypothesis) -> str:
    m = h.motion
    return f"{h.label.object_type}|{m.direction}|v={m.velocity!r}|a={m.angle!r}"


def motion_unit(field: SensorField, motion: MotionVector) -> np.ndarray:
    """Unit motion vector: the signed primary axis rotated by the motion angle."""
    axis = field.line_axis(field.primary_line())
    base = direction_sign(motion.direction) * axis
    rad = math.radians(motion.angle)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([c * base[0] - s * base[1], s * base[0] + c * base[1]])


def _perp(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


def resolve_start(
    field: SensorField, geometry: ObjectGeometry, cfg: SimulationConfig
) -> np.ndarray:
    """Automatic start: on the track through the field center, upstream far
    enough for a quiet lead-in of ``lead_time`` seconds."""
    motion = cfg.motion
    unit = motion_unit(field, motion)
    pos = field.positions()
    lo = pos.min(axis=0) - cfg.detection_range
    hi = pos.max(axis=0) + cfg.detection_range
    center = (lo + hi) / 2.0
    half_diag = float(np.linalg.norm(hi - lo)) / 2.0
    radius = max(float(np.hypot(*s.position)) for s in geometry.sources)
    back = half_diag + radius + motion.velocity * cfg.dt
    axis = field.line_axis(field.primary_line())
    return center - unit * (back + motion.velocity * cfg.lead_time) + cfg.lateral_offset * _perp(axis)


def _exit_time(a: np.ndarray, w: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Optional[float]:
    """Latest time a point a + w*t (t >= 0) is inside the box, or None if never."""
    t_in, t_out = -math.inf, math.inf
    for k in range(2):
        if w[k] == 0.0:
            if not lo[k] <= a[k] <= hi[k]:
                return None
        else:
            ta = (lo[k] - a[k]) / w[k]
            tb = (hi[k] - a[k]) / w[k]
            if ta > tb:
                ta, tb = tb, ta
            t_in = max(t_in, ta)
            t_out = min(t_out, tb)
    if t_out < t_in or t_out < 0.0:
        return None
    return t_out


def simulate(
    geometry: ObjectGeometry,
    cfg: SimulationConfig,
    seed: int,
    detector: Optional[DetectorConfig] = None,
    record_id: str = "sim-0000",
) -> SimulationRecord:
    """Run one crossing; reproducible bit-for-bit given (geometry, cfg, seed)."""
    if cfg.motion is None:
        raise ValidationError("simulate requires a fully specified motion")
    detector = detector or DetectorConfig()
    field = cfg.field
    motion = cfg.motion
    unit = motion_unit(field, motion)

    local = np.array([s.position for s in geometry.sources], dtype=float)
    frame = np.column_stack([unit, _perp(unit)])
    offsets = local @ frame.T
    start = (
        resolve_start(field, geometry, cfg)
        if cfg.start_position is None
        else np.asarray(cfg.start_position, dtype=float)
    )

    pos = field.positions()
    if cfg.duration is not None:
        t_end = cfg.duration
    else:
        lo = pos.min(axis=0) - cfg.detection_range
        hi = pos.max(axis=0) + cfg.detection_range
        w = motion.velocity * unit
        exits = [_exit_time(start + off, w, lo, hi) for off in offsets]
        exits = [t for t in exits if t is not None]
        if not exits:
            raise EmptySimulationError(
                f"{geometry.type_id}: no source ever enters the field region"
            )
        t_end = max(exits) + cfg.dt
    n_ticks = int(math.floor(t_end / cfg.dt + 1e-9)) + 1
    t_grid = np.arange(n_ticks) * cfg.dt

    # (ticks, sources, 2) source world positions, then (ticks, sources, sensors) distances.
    centers = start[None, :] + motion.velocity * t_grid[:, None] * unit[None, :]
    src_pos = centers[:, None, :] + offsets[None, :, :]
    diff = src_pos[:, :, None, :] - pos[None, None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=3))
    strengths = np.array([s.strength for s in geometry.sources], dtype=float)
    contrib = strengths[None, :, None] / np.maximum(dist, MIN_SOURCE_DISTANCE) ** 3
    contrib[dist > cfg.detection_range] = 0.0
    clean = contrib.sum(axis=1)

    if not clean.any():
        raise EmptySimulationError(
            f"{geometry.type_id}: sources never came within detection range of any sensor"
        )

    values = clean[:, :, None] * np.array(AXIS_WEIGHTS)[None, None, :]
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, cfg.noise_sigma, size=values.shape)

    traces = tuple(
        SensorTrace(sensor_id=sid, t=t_grid, values=values[:, i, :])
        for i, sid in enumerate(field.sensor_ids)
    )
    activation = binarize(trace_readings(traces), field, detector, cfg.dt)
    return SimulationRecord(
        record_id=record_id,
        hypothesis=Hypothesis(label=geometry.label(), motion=motion),
        traces=traces,
        activation=activation,
        config=cfg,
        seed=seed,
    )


@dataclass(frozen=True)
class SimulationGrid:
    """The hypothesis grid a library covers: directions x velocities x angles."""

    directions: tuple[str, ...]
    velocities: tuple[float, ...]
    angles: tuple[float, ...]

    def __post_init__(self) -> None:
        for name, axis in (
            ("directions", self.directions),
            ("velocities", self.velocities),
            ("angles", self.angles),
        ):
            if not axis:
                raise ValidationError(f"simulation grid axis {name!r} is empty")
            if len(set(axis)) != len(axis):
                raise ValidationError(f"simulation grid axis {name!r} has duplicates")

    def motions(self) -> Iterator[MotionVector]:
        for d, v, a in itertools.product(self.directions, self.velocities, self.angles):
            yield MotionVector(direction=d, velocity=v, angle=a)


def generate_library(
    geometries: Sequence[ObjectGeometry],
    grid: SimulationGrid,
    base_cfg: SimulationConfig,
    seed: int,
    detector: Optional[DetectorConfig] = None,
) -> SimulationLibrary:
    """One record per (geometry x direction x velocity x angle).

    Per-record seeds are derived as ``seed XOR index`` so records are
    independent of generation order and may be rebuilt in parallel. Failing
    runs are skipped and reported, not fatal.
    """
    if not geometries:
        raise ValidationError("generate_library needs at least one geometry")
    detector = detector or DetectorConfig()
    records: list[SimulationRecord] = []
    skipped: list[SkippedRun] = []
    index = 0
    for geometry in geometries:
        for motion in grid.motions():
            cfg = replace(base_cfg, motion=motion)
            record_seed = seed ^ index
            try:
                records.append(
                    simulate(geometry, cfg, record_seed, detector, record_id=f"sim-{index:04d}")
                )
            except (EmptySimulationError, ValidationError) as exc:
                skipped.append(SkippedRun(type_id=geometry.type_id, motion=motion, reason=str(exc)))
            index += 1
    return SimulationLibrary(
        field=base_cfg.field,
        dt=base_cfg.dt,
        detector=detector,
        records=tuple(records),
        skipped=tuple(skipped),
    )
