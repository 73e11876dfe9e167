"""Inverse pass: estimate what crossed the field from an observed event.

Deliberately simplified stand-ins for the heavier machinery a production
deployment would bring: density-based spatio-temporal clustering, a
least-squares motion fit over first-activation times, and a pluggable
classifier whose shipped baseline bins the perpendicular-line footprint span
per category. Anything the pass cannot determine stays a wildcard; it never
guesses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Optional, Protocol, Sequence

import numpy as np

from .detection import Event, fit_slope_with_error
from .errors import TaxonomyMismatchError, ValidationError
from .model import (
    Hypothesis,
    HypothesisSet,
    MatchTolerances,
    MotionVector,
    ObjectLabel,
    Provenance,
    SensorField,
    Taxonomy,
    direction_sign,
    direction_token,
)

if TYPE_CHECKING:
    from .simulate import SimulationLibrary, SimulationRecord


@dataclass(frozen=True)
class ClusterParams:
    """Neighborhood radii and density threshold for spatio-temporal clustering."""

    eps_space: float = 8.0
    eps_time: float = 2.0
    min_pts: int = 3

    def __post_init__(self) -> None:
        if not (self.eps_space > 0 and self.eps_time > 0 and self.min_pts > 0):
            raise ValidationError("cluster parameters must all be positive")


@dataclass(frozen=True)
class ClusterPoint:
    sensor_id: str
    t: float
    position: tuple[float, float]


@dataclass(frozen=True)
class Cluster:
    points: tuple[ClusterPoint, ...]

    def centroid_space(self) -> np.ndarray:
        return np.array([p.position for p in self.points]).mean(axis=0)

    def centroid_time(self) -> float:
        return float(np.mean([p.t for p in self.points]))


def cluster_activations(
    event: Event, field: SensorField, p: ClusterParams
) -> list[Cluster]:
    """Density-based clusters over (sensor position, activation time) points.

    A point is a core point when at least ``min_pts`` points (itself included)
    lie within ``eps_space`` meters and ``eps_time`` seconds of it. Points in
    no cluster are noise and are simply not returned. Deterministic for a
    fixed frame order.
    """
    points: list[ClusterPoint] = []
    for frame in event.frames:
        for sid in sorted(frame.active):
            points.append(ClusterPoint(sensor_id=sid, t=frame.t, position=field.position_of(sid)))
    n = len(points)
    if n == 0:
        return []
    pos = np.array([pt.position for pt in points])
    ts = np.array([pt.t for pt in points])
    eps2 = p.eps_space * p.eps_space

    def neighbors(i: int) -> np.ndarray:
        d2 = ((pos - pos[i]) ** 2).sum(axis=1)
        return np.flatnonzero((d2 <= eps2) & (np.abs(ts - ts[i]) <= p.eps_time))

    UNVISITED, NOISE = 0, -1
    labels = np.full(n, UNVISITED, dtype=int)
    cluster_id = 0
    for i in range(n):
        if labels[i] != UNVISITED:
            continue
        seed = neighbors(i)
        if len(seed) < p.min_pts:
            labels[i] = NOISE
            continue
        cluster_id += 1
        labels[i] = cluster_id
        queue = list(seed)
        k = 0
        while k < len(queue):
            j = queue[k]
            k += 1
            if labels[j] == NOISE:
                labels[j] = cluster_id  # border point reclaimed by the cluster
            if labels[j] != UNVISITED:
                continue
            labels[j] = cluster_id
            expansion = neighbors(j)
            if len(expansion) >= p.min_pts:
                queue.extend(expansion)
    return [
        Cluster(points=tuple(points[i] for i in np.flatnonzero(labels == cid)))
        for cid in range(1, cluster_id + 1)
    ]


def fuse_clusters(
    clusters: Sequence[Cluster], max_merge_dist: float, max_merge_dt: float
) -> list[Cluster]:
    """Merge cluster pairs whose centroids lie within both bounds, to fixpoint."""
    merged = list(clusters)
    changed = True
    while changed:
        changed = False
        for i in range(len(merged)):
            for j in range(i + 1, len(merged)):
                a, b = merged[i], merged[j]
                dist = float(np.linalg.norm(a.centroid_space() - b.centroid_space()))
                dt = abs(a.centroid_time() - b.centroid_time())
                if dist <= max_merge_dist and dt <= max_merge_dt:
                    merged[i] = Cluster(points=a.points + b.points)
                    del merged[j]
                    changed = True
                    break
            if changed:
                break
    return merged


def _first_times_from_clusters(
    clusters: Sequence[Cluster], line_sensor_ids: Sequence[str]
) -> dict[str, float]:
    wanted = set(line_sensor_ids)
    first: dict[str, float] = {}
    for cluster in clusters:
        for point in cluster.points:
            if point.sensor_id in wanted:
                if point.sensor_id not in first or point.t < first[point.sensor_id]:
                    first[point.sensor_id] = point.t
    return first


# An angle estimate is only trusted when the one-sigma uncertainty implied by
# its fit is at most this many degrees. The angle signal across the
# perpendicular line is typically around one tick, so fits near the
# quantization floor self-report as undecidable rather than guessing.
ANGLE_UNCERTAINTY_GATE = 6.0


def estimate_motion(
    event: Event,
    field: SensorField,
    clusters: Sequence[Cluster],
    angle_gate: float = ANGLE_UNCERTAINTY_GATE,
) -> MotionVector:
    """Direction and velocity from the primary line, angle from the perpendicular one.

    Only the largest cluster contributes: stray activations away from the
    crossing land in noise or minor clusters and must not poison the fits.
    The primary-line fit of first-activation time against sensor coordinate
    gives the direction (slope sign) and along-line speed (inverse slope
    magnitude); the angle comes from the drift of first-activation time
    across the perpendicular line (a small-angle construction) and is dropped
    when its fit uncertainty is too wide. Every component that cannot be
    computed is a wildcard, never a guess.
    """
    if not clusters:
        return MotionVector()
    crossing = max(clusters, key=lambda c: len(c.points))
    primary = field.primary_line()
    first_primary = _first_times_from_clusters([crossing], primary.sensor_ids)
    direction: Optional[str] = None
    velocity: Optional[float] = None
    if len(first_primary) >= 2:
        coords = [field.line_coordinate(primary, sid) for sid in first_primary]
        times = [first_primary[sid] for sid in first_primary]
        fitted = fit_slope_with_error(coords, times)
        if fitted is not None and fitted[0] != 0.0:
            slope = fitted[0]
            direction = direction_token(1 if slope > 0 else -1)
            velocity = 1.0 / abs(slope)

    angle: Optional[float] = None
    perp = field.perpendicular_line()
    first_perp = _first_times_from_clusters([crossing], perp.sensor_ids)
    if velocity is not None and direction is not None and len(first_perp) >= 2:
        qs = [field.line_coordinate(perp, sid) for sid in first_perp]
        times = [first_perp[sid] for sid in first_perp]
        fitted = fit_slope_with_error(qs, times)
        if fitted is not None:
            slope_tq, slope_se = fitted
            primary_axis = field.line_axis(primary)
            normal = np.array([-primary_axis[1], primary_axis[0]])
            axis_sign = 1.0 if float(np.dot(field.line_axis(perp), normal)) >= 0 else -1.0
            s = direction_sign(direction)
            uncertainty = math.degrees(math.atan(velocity * slope_se))
            if uncertainty <= angle_gate:
                angle = math.degrees(math.atan(s * velocity * slope_tq * axis_sign))
    return MotionVector(direction=direction, velocity=velocity, angle=angle)


class Classifier(Protocol):
    """Anything that maps an event to a category of one taxonomy scheme."""

    scheme: str

    def predict(self, event: Event, field: SensorField) -> tuple[Optional[str], float]:
        """Return (category, confidence in [0, 1]); (None, 0.0) when undecidable."""
        ...


def perpendicular_span(active_ids, field: SensorField) -> Optional[float]:
    """Meters between the extreme activated perpendicular-line sensors."""
    line = field.perpendicular_line()
    on_line = set(line.sensor_ids)
    coords = [field.line_coordinate(line, sid) for sid in active_ids if sid in on_line]
    if not coords:
        return None
    return max(coords) - min(coords)


def record_span(record: "SimulationRecord", field: SensorField) -> Optional[float]:
    active_cols = np.flatnonzero(record.activation.bits.any(axis=0))
    ids = [field.sensor_ids[i] for i in active_cols]
    return perpendicular_span(ids, field)


@dataclass(frozen=True)
class SpanBinClassifier:
    """Baseline geometric classifier: footprint span binned per category.

    Calibrated from a simulation library: each category's bin is the
    [min, max] span its records produced, widened by ``margin`` on both
    sides. Confidence is the reciprocal of the number of bins containing the
    observed span.
    """

    scheme: str
    bins: Mapping[str, tuple[float, float]]

    @classmethod
    def calibrate(
        cls, lib: "SimulationLibrary", scheme: str, margin: float = 0.0
    ) -> "SpanBinClassifier":
        spans: dict[str, list[float]] = {}
        for record in lib.records:
            span = record_span(record, lib.field)
            if span is None:
                continue
            spans.setdefault(record.hypothesis.label.category, []).append(span)
        if not spans:
            raise ValidationError("no library record produced a perpendicular footprint")
        bins = {
            cat: (min(values) - margin, max(values) + margin) for cat, values in spans.items()
        }
        return cls(scheme=scheme, bins=bins)

    def predict(self, event: Event, field: SensorField) -> tuple[Optional[str], float]:
        span = perpendicular_span(event.active_sensors(), field)
        if span is None:
            return None, 0.0
        candidates = sorted(
            cat for cat, (lo, hi) in self.bins.items() if lo <= span <= hi
        )
        if not candidates:
            return None, 0.0
        if len(candidates) == 1:
            return candidates[0], 1.0
        # Overlapping bins: fall back to the nearest bin center.
        centers = {cat: (self.bins[cat][0] + self.bins[cat][1]) / 2.0 for cat in candidates}
        best = min(candidates, key=lambda cat: (abs(centers[cat] - span), cat))
        return best, 1.0 / len(candidates)


def classify(
    event: Event,
    field: SensorField,
    model: Classifier,
    taxonomy: Taxonomy,
    confidence_floor: float = 0.5,
) -> Optional[str]:
    """Category of the event under the active scheme, or None below the floor."""
    if model.scheme != taxonomy.active:
        raise TaxonomyMismatchError(
            f"classifier is calibrated for scheme {model.scheme!r}, "
            f"configuration uses {taxonomy.active!r}"
        )
    category, confidence = model.predict(event, field)
    if category is None:
        return None
    if category not in set(taxonomy.schemes[taxonomy.active].values()):
        raise TaxonomyMismatchError(
            f"classifier produced {category!r}, unknown to scheme {taxonomy.active!r}"
        )
    if confidence < confidence_floor:
        return None
    return category


MOTION_FULL = "full"
MOTION_PARTIAL = "partial"
MOTION_NONE = "none"


@dataclass(frozen=True)
class InverseResult:
    """What the inverse pass managed to determine; wildcards elsewhere."""

    motion: MotionVector
    category: Optional[str]

    @property
    def motion_status(self) -> str:
        known = [f is not None for f in (self.motion.direction, self.motion.velocity, self.motion.angle)]
        if all(known):
            return MOTION_FULL
        if any(known):
            return MOTION_PARTIAL
        return MOTION_NONE

    @property
    def classified(self) -> bool:
        return self.category is not None

    @property
    def scenario(self) -> str:
        """Which of the four post-inverse scenarios this result falls into."""
        has_motion = self.motion_status != MOTION_NONE
        if self.classified and has_motion:
            return "i"
        if self.classified:
            return "ii"
        if has_motion:
            return "iii"
        return "iv"

    @property
    def has_information(self) -> bool:
        return self.scenario != "iv"

    def to_pattern(self) -> Hypothesis:
        return Hypothesis(label=ObjectLabel(category=self.category), motion=self.motion)


def build_h_real(
    result: InverseResult, h0: HypothesisSet, tol: MatchTolerances = MatchTolerances()
) -> HypothesisSet:
    """Filter the background hypothesis set down to what the inverse pass allows.

    Pure filtering: a member survives when every concrete field of the result
    is compatible with the member's corresponding field (a member wildcard is
    always compatible). An all-wildcard result leaves h0 unchanged; a result
    conflicting with every member yields the empty set.
    """
    survivors = [h for h in h0 if _compatible(h, result, tol)]
    return HypothesisSet.of(survivors, Provenance.INVERSE)


def _compatible(h: Hypothesis, result: InverseResult, tol: MatchTolerances) -> bool:
    if result.category is not None and h.label.category is not None:
        if h.label.category != result.category:
            return False
    m, r = h.motion, result.motion
    if r.direction is not None and m.direction is not None and m.direction != r.direction:
        return False
    if r.velocity is not None and m.velocity is not None:
        if abs(m.velocity - r.velocity) > tol.velocity:
            return False
    if r.angle is not None and m.angle is not None:
        if abs(m.angle - r.angle) > tol.angle:
            return False
    return True


def infer(
    event: Event,
    field: SensorField,
    params: ClusterParams,
    classifier: Optional[Classifier] = None,
    taxonomy: Optional[Taxonomy] = None,
    confidence_floor: float = 0.5,
    merge_dist: Optional[float] = None,
    merge_dt: Optional[float] = None,
) -> InverseResult:
    """Full inverse pass: cluster, fuse, estimate motion, classify."""
    clusters = cluster_activations(event, field, params)
    clusters = fuse_clusters(
        clusters,
        max_merge_dist=2 * params.eps_space if merge_dist is None else merge_dist,
        max_merge_dt=2 * params.eps_time if merge_dt is None else merge_dt,
    )
    motion = estimate_motion(event, field, clusters)
    category = None
    if classifier is not None and taxonomy is not None:
        category = classify(event, field, classifier, taxonomy, confidence_floor)
    return InverseResult(motion=motion, category=category)
