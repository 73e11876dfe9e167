"""Streaming activation detection and event segmentation.

Each sensor runs an independent moving Z-score detector over the magnitude
of its baseline-subtracted readings: the baseline is the rolling mean vector
of the last ``lag`` (influence-filtered) samples, so static offsets in the
raw signal never matter, and the moving threshold is the rolling mean of
those magnitudes plus ``z_threshold`` rolling standard deviations.
Field-wide activations are then grouped into events: maximal runs of
activity separated by more than ``min_gap`` seconds of silence.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import LineDef, Reading, SensorField, direction_token

# Floor for the rolling standard deviation. Keeps constant signals from ever
# activating (0 >= z * floor is false) without special-casing zero variance.
SIGMA_FLOOR = 1e-9


@dataclass(frozen=True)
class DetectorConfig:
    """Moving Z-score detector parameters plus the event gap threshold."""

    lag: int = 50
    z_threshold: float = 3.5
    influence: float = 0.1
    min_gap: float = 1.0

    def __post_init__(self) -> None:
        if self.lag < 2:
            raise ValidationError(f"lag must be >= 2, got {self.lag}")
        if not self.z_threshold > 0:
            raise ValidationError(f"z_threshold must be > 0, got {self.z_threshold}")
        if not 0.0 <= self.influence <= 1.0:
            raise ValidationError(f"influence must lie in [0, 1], got {self.influence}")
        if self.min_gap < 0:
            raise ValidationError(f"min_gap must be >= 0, got {self.min_gap}")


class ZScoreDetector:
    """Per-sensor rolling state of the moving-threshold detector.

    A sample activates when its magnitude exceeds the rolling mean of recent
    magnitudes by at least ``z_threshold`` rolling standard deviations. The
    mean term matters: magnitudes are norms of 3-vector deviations, so under
    pure noise they are chi-distributed with a strictly positive mean, and a
    threshold of bare z * sigma would fire on a large fraction of noise.

    The first ``lag`` samples are a warm-up window and are all treated as
    inactive; their magnitudes are measured against the mean vector of the
    full warm-up window. After warm-up, each new sample is compared against
    statistics of the window *excluding* it, then enters the window weighted
    by ``influence`` if it was flagged, or at full weight otherwise.
    """

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self._warmup: list[tuple[float, float, float]] = []
        self._vec: Optional[np.ndarray] = None  # (lag, 3) filtered samples
        self._mag: Optional[np.ndarray] = None  # (lag,) filtered magnitudes
        self._idx = 0
        self._vec_sum = np.zeros(3)
        self._mag_sum = 0.0
        self._mag_sqsum = 0.0
        self._last_vec = np.zeros(3)
        self._last_mag = 0.0

    @property
    def ready(self) -> bool:
        return self._vec is not None

    def update(self, value: Sequence[float]) -> tuple[bool, float]:
        """Feed one 3-axis sample; return (activated, baseline-subtracted magnitude)."""
        x, y, z = float(value[0]), float(value[1]), float(value[2])
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            raise ValidationError("non-finite sample fed to detector")
        if self._vec is None:
            self._warmup.append((x, y, z))
            if len(self._warmup) == self.cfg.lag:
                self._finish_warmup()
            return False, 0.0

        lag = self.cfg.lag
        baseline = self._vec_sum / lag
        dx, dy, dz = x - baseline[0], y - baseline[1], z - baseline[2]
        mag = math.sqrt(dx * dx + dy * dy + dz * dz)

        mean_mag = self._mag_sum / lag
        var = self._mag_sqsum / lag - mean_mag * mean_mag
        sigma = math.sqrt(var) if var > 0.0 else 0.0
        activated = bool(mag - mean_mag >= self.cfg.z_threshold * max(sigma, SIGMA_FLOOR))

        if activated:
            a = self.cfg.influence
            f_vec = a * np.array([x, y, z]) + (1.0 - a) * self._last_vec
            f_mag = a * mag + (1.0 - a) * self._last_mag
        else:
            f_vec = np.array([x, y, z])
            f_mag = mag
        self._push(f_vec, f_mag)
        return activated, mag

    def _finish_warmup(self) -> None:
        vecs = np.array(self._warmup)
        baseline = vecs.mean(axis=0)
        mags = np.linalg.norm(vecs - baseline, axis=1)
        self._vec = vecs
        self._mag = mags
        self._vec_sum = vecs.sum(axis=0)
        self._mag_sum = float(mags.sum())
        self._mag_sqsum = float((mags * mags).sum())
        self._last_vec = vecs[-1].copy()
        self._last_mag = float(mags[-1])
        self._warmup = []

    def _push(self, f_vec: np.ndarray, f_mag: float) -> None:
        i = self._idx
        self._vec_sum += f_vec - self._vec[i]
        self._mag_sum += f_mag - self._mag[i]
        self._mag_sqsum += f_mag * f_mag - self._mag[i] * self._mag[i]
        self._vec[i] = f_vec
        self._mag[i] = f_mag
        self._last_vec = f_vec
        self._last_mag = f_mag
        self._idx = (i + 1) % self.cfg.lag
        if self._idx == 0:
            # Re-derive the running sums once per wrap to stop float drift.
            self._vec_sum = self._vec.sum(axis=0)
            self._mag_sum = float(self._mag.sum())
            self._mag_sqsum = float((self._mag * self._mag).sum())


@dataclass(frozen=True)
class ActivationFrame:
    """All sensors active at one instant, with their magnitudes."""

    t: float
    active: frozenset[str]
    magnitudes: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.active:
            raise ValidationError("an activation frame needs at least one active sensor")


@dataclass(frozen=True)
class Event:
    """A maximal time-contiguous sequence of activation frames."""

    t0: float
    tk: float
    frames: tuple[ActivationFrame, ...]
    readings: tuple[Reading, ...] = ()

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValidationError("an event needs at least one frame")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("event frames must be strictly increasing in time")
        if self.t0 != ts[0] or self.tk != ts[-1]:
            raise ValidationError("event bounds must equal the first/last frame times")

    @classmethod
    def from_frames(cls, frames: Sequence[ActivationFrame], readings: Sequence[Reading] = ()) -> "Event":
        frames = tuple(frames)
        return cls(t0=frames[0].t, tk=frames[-1].t, frames=frames, readings=tuple(readings))

    def active_sensors(self) -> frozenset[str]:
        out: set[str] = set()
        for f in self.frames:
            out |= f.active
        return frozenset(out)


def activation_frames(
    readings: Iterable[Reading], field: SensorField, cfg: DetectorConfig
) -> list[ActivationFrame]:
    """Run per-sensor detectors over a reading stream and collect the active instants.

    Readings are processed per sensor in time order; per-sensor timestamps
    must be non-decreasing.
    """
    known = set(field.sensor_ids)
    per_sensor: dict[str, list[Reading]] = defaultdict(list)
    for r in readings:
        if r.sensor_id not in known:
            raise ValidationError(f"reading references unknown sensor {r.sensor_id!r}")
        series = per_sensor[r.sensor_id]
        if series and r.t < series[-1].t:
            raise ValidationError(f"sensor {r.sensor_id!r}: timestamps not monotone at t={r.t}")
        series.append(r)

    hits: dict[float, dict[str, float]] = defaultdict(dict)
    for sensor_id, series in per_sensor.items():
        det = ZScoreDetector(cfg)
        for r in series:
            activated, mag = det.update(r.value)
            if activated:
                hits[r.t][sensor_id] = mag
    return [
        ActivationFrame(t=t, active=frozenset(sensors), magnitudes=dict(sensors))
        for t, sensors in sorted(hits.items())
    ]


def segment_events(
    frames: Sequence[ActivationFrame],
    cfg: DetectorConfig,
    readings: Sequence[Reading] = (),
) -> list[Event]:
    """Group consecutive activation frames into events.

    A silence strictly longer than ``cfg.min_gap`` seconds closes the current
    event. An empty frame stream yields no events.
    """
    events: list[Event] = []
    current: list[ActivationFrame] = []
    for frame in frames:
        if current and frame.t - current[-1].t > cfg.min_gap:
            events.append(_build_event(current, readings))
            current = []
        current.append(frame)
    if current:
        events.append(_build_event(current, readings))
    return events


def _build_event(frames: list[ActivationFrame], readings: Sequence[Reading]) -> Event:
    t0, tk = frames[0].t, frames[-1].t
    inside = tuple(r for r in readings if t0 <= r.t <= tk)
    return Event.from_frames(frames, inside)


def detect_events(
    readings: Iterable[Reading], field: SensorField, cfg: DetectorConfig
) -> list[Event]:
    """Full detection pass: activation frames, then event segmentation."""
    readings = sorted(readings, key=lambda r: r.t)
    frames = activation_frames(readings, field, cfg)
    return segment_events(frames, cfg, readings)


def fit_slope(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Least-squares slope of y against x; None when degenerate."""
    fitted = fit_slope_with_error(x, y)
    return None if fitted is None else fitted[0]


def fit_slope_with_error(x: Sequence[float], y: Sequence[float]) -> Optional[tuple[float, float]]:
    """Least-squares slope and its standard error; None when degenerate.

    A two-point fit has zero residual and reports a zero standard error.
    """
    if len(x) < 2:
        return None
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    dx = xa - xa.mean()
    denom = float(np.dot(dx, dx))
    if denom == 0.0:
        return None
    dy = ya - ya.mean()
    slope = float(np.dot(dx, dy) / denom)
    n = len(x)
    if n == 2:
        return slope, 0.0
    residuals = dy - slope * dx
    se = math.sqrt(max(float(np.dot(residuals, residuals)), 0.0) / (n - 2) / denom)
    return slope, se


def first_activation_times(event: Event, field: SensorField, line: LineDef) -> dict[str, float]:
    """First activation time of each line sensor that fired during the event."""
    wanted = set(line.sensor_ids)
    first: dict[str, float] = {}
    for frame in event.frames:
        for sid in frame.active:
            if sid in wanted and sid not in first:
                first[sid] = frame.t
    return first


def coarse_direction(event: Event, field: SensorField) -> Optional[str]:
    """Crossing direction from the first-activation pattern on the primary line.

    None when fewer than two primary sensors fired or the fit is degenerate.
    """
    line = field.primary_line()
    first = first_activation_times(event, field, line)
    if len(first) < 2:
        return None
    coords = [field.line_coordinate(line, sid) for sid in first]
    times = [first[sid] for sid in first]
    slope = fit_slope(coords, times)
    if slope is None or slope == 0.0:
        return None
    return direction_token(1 if slope > 0 else -1)


def fuse_events(
    events: Sequence[Event],
    max_fuse_gap: float,
    direction_consistency: bool = False,
    field: Optional[SensorField] = None,
) -> list[Event]:
    """Greedy merge of consecutive events separated by at most ``max_fuse_gap``.

    With ``direction_consistency`` the merge also requires that the coarse
    motion directions of both events do not contradict each other (an
    undetermined direction never blocks a merge). Simplified stand-in for a
    data-driven fusion rule.
    """
    if direction_consistency and field is None:
        raise ValidationError("direction_consistency requires the sensor field")
    fused: list[Event] = []
    for event in events:
        if fused and event.t0 - fused[-1].tk <= max_fuse_gap:
            if not direction_consistency or _directions_compatible(fused[-1], event, field):
                fused[-1] = _merge_pair(fused[-1], event)
                continue
        fused.append(event)
    return fused


def _directions_compatible(a: Event, b: Event, field: SensorField) -> bool:
    da, db = coarse_direction(a, field), coarse_direction(b, field)
    return da is None or db is None or da == db


def _merge_pair(a: Event, b: Event) -> Event:
    return Event.from_frames(a.frames + b.frames, a.readings + b.readings)
