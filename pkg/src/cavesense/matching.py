"""Time-invariant matching of events against simulated crossings.

Events and simulated datasets are reduced to binary activation matrices
(time rows x sensor columns). A pairwise Hamming distance matrix between the
row sets is collapsed to a scalar by minimizing over its full-length
diagonals, which makes the score invariant to where in the simulation the
observed window occurred.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Union

import numpy as np

from .detection import ActivationFrame, DetectorConfig, Event, activation_frames
from .errors import ValidationError
from .model import (
    HypothesisSet,
    MatchTolerances,
    Provenance,
    Reading,
    SensorField,
    intersect_hypotheses,
)

if TYPE_CHECKING:
    from .simulate import SimulationLibrary

# Slack added before flooring t/dt so that ticks landing exactly on a cell
# boundary are not pushed into the previous cell by float error.
_CELL_EPS = 1e-9


@dataclass(frozen=True)
class BinaryActivationMatrix:
    """0/1 matrix of threshold exceedances; columns follow the canonical field order."""

    bits: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValidationError("activation matrix must be a non-empty 2D array")
        if not self.dt > 0:
            raise ValidationError("activation matrix dt must be > 0")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def rows(self) -> int:
        return int(self.bits.shape[0])

    @property
    def cols(self) -> int:
        return int(self.bits.shape[1])


@dataclass(frozen=True)
class DistanceMatrix:
    """Pairwise Hamming distances between event rows and simulation rows."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.int64)
        if entries.ndim != 2:
            raise ValidationError("distance matrix must be 2D")
        if entries.shape[0] > entries.shape[1]:
            raise ValidationError("distance matrix expects n_k <= n_l (transpose rule)")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.entries.shape[0]), int(self.entries.shape[1]))


@dataclass(frozen=True)
class MatchScore:
    """Scalar dissimilarity of one simulation against the event."""

    simulation_id: str
    sdist: int
    best_offset: int


def cell_of(t: float, dt: float) -> int:
    return int(math.floor(t / dt + _CELL_EPS))


def binarize(
    source: Union[Event, Iterable[Reading]],
    field: SensorField,
    detector: DetectorConfig,
    dt: float,
) -> BinaryActivationMatrix:
    """Resample activations of an event or a raw dataset onto a uniform dt grid.

    A cell is set when its sensor was active at any instant inside the cell.
    Event matrices keep only rows with at least one active sensor; dataset
    matrices are trimmed to the first/last active row but keep interior
    all-zero rows.
    """
    if not dt > 0:
        raise ValidationError("binarize requires dt > 0")
    if isinstance(source, Event):
        return _binarize_frames(source.frames, field, dt, drop_empty_rows=True)
    frames = activation_frames(source, field, detector)
    return _binarize_frames(frames, field, dt, drop_empty_rows=False)


def _binarize_frames(
    frames: Sequence[ActivationFrame], field: SensorField, dt: float, drop_empty_rows: bool
) -> BinaryActivationMatrix:
    if not frames:
        raise ValidationError("no activity to binarize")
    n_c = len(field.sensors)
    col = {sid: i for i, sid in enumerate(field.sensor_ids)}
    hits: dict[int, set[int]] = {}
    for frame in frames:
        cell = cell_of(frame.t, dt)
        row = hits.setdefault(cell, set())
        for sid in frame.active:
            row.add(col[sid])
    cells = sorted(hits)
    if drop_empty_rows:
        bits = np.zeros((len(cells), n_c), dtype=bool)
        for i, cell in enumerate(cells):
            bits[i, sorted(hits[cell])] = True
    else:
        first, last = cells[0], cells[-1]
        bits = np.zeros((last - first + 1, n_c), dtype=bool)
        for cell in cells:
            bits[cell - first, sorted(hits[cell])] = True
    return BinaryActivationMatrix(bits=bits, dt=dt)


def hamming_rows(a: Sequence[int], b: Sequence[int]) -> int:
    """Number of positions at which two bit rows differ."""
    av = np.asarray(a, dtype=bool)
    bv = np.asarray(b, dtype=bool)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValidationError(f"row length mismatch: {av.shape} vs {bv.shape}")
    return int(np.count_nonzero(av != bv))


def pdist(be: BinaryActivationMatrix, bs: BinaryActivationMatrix) -> DistanceMatrix:
    """Pairwise Hamming distance matrix between the rows of two matrices.

    Roles swap when the event matrix is the longer one, so the result always
    has n_k <= n_l rows x columns.
    """
    if be.cols != bs.cols:
        raise ValidationError(f"column count mismatch: {be.cols} vs {bs.cols}")
    if not math.isclose(be.dt, bs.dt, rel_tol=1e-9, abs_tol=1e-12):
        raise ValidationError(f"dt mismatch: {be.dt} vs {bs.dt}")
    a, b = (be.bits, bs.bits) if be.rows <= bs.rows else (bs.bits, be.bits)
    entries = np.count_nonzero(a[:, None, :] != b[None, :, :], axis=2)
    return DistanceMatrix(entries=entries)


def sdist(m: DistanceMatrix, min_overlap: float = 1.0, simulation_id: str = "") -> MatchScore:
    """Minimal diagonal sum of a distance matrix and the offset achieving it.

    With the default ``min_overlap`` of 1.0 only full-length diagonals are
    considered: the n_l - n_k + 1 windows in which the shorter matrix fits
    entirely inside the longer one. Lowering ``min_overlap`` also admits
    partial overlaps covering at least that fraction of the shorter matrix;
    their sums run over fewer cells and are not rescaled.
    """
    if not 0.0 < min_overlap <= 1.0:
        raise ValidationError("min_overlap must lie in (0, 1]")
    n_k, n_l = m.shape
    min_len = max(1, math.ceil(min_overlap * n_k))
    lo = -(n_k - min_len)
    hi = n_l - min_len
    best_value: Optional[int] = None
    best_offset = 0
    for offset in range(lo, hi + 1):
        overlap = min(n_k, n_l - offset, n_k + offset, n_l)
        if overlap < min_len:
            continue
        value = int(np.trace(m.entries, offset=offset))
        if best_value is None or value < best_value:
            best_value, best_offset = value, offset
    assert best_value is not None
    return MatchScore(simulation_id=simulation_id, sdist=best_value, best_offset=best_offset)


STATUS_OK = "ok"
STATUS_NO_COMPATIBLE = "no-compatible-simulation"


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one event against a simulation library."""

    status: str
    h_red: HypothesisSet
    scores: tuple[MatchScore, ...]
    h_final: HypothesisSet

    @property
    def min_sdist(self) -> Optional[int]:
        return min((s.sdist for s in self.scores), default=None)


def match(
    event: Event,
    h_real: HypothesisSet,
    lib: "SimulationLibrary",
    tol: MatchTolerances,
    detector: DetectorConfig,
    dt: Optional[float] = None,
) -> MatchResult:
    """Reduce the library by the inverse hypotheses, then rank by dissimilarity.

    Returns the final hypothesis set (all simulations tied at the minimal
    scalar dissimilarity, fully specified including the concrete object type)
    together with every score for downstream group ranking. An empty
    reduction is reported as a distinct no-compatible-simulation outcome.
    """
    if not lib.records:
        raise ValidationError("cannot match against an empty simulation library")
    dt = lib.dt if dt is None else dt
    h_sim = HypothesisSet.of((r.hypothesis for r in lib.records), Provenance.SIMULATED)
    h_red = intersect_hypotheses(h_sim, h_real, tol)
    if len(h_red) == 0:
        return MatchResult(
            status=STATUS_NO_COMPATIBLE,
            h_red=h_red,
            scores=(),
            h_final=HypothesisSet.of((), Provenance.FINAL),
        )
    be = binarize(event, lib.field, detector, dt)
    scores = tuple(
        sdist(pdist(be, record.activation), simulation_id=record.record_id)
        for record in lib.records
        if record.hypothesis in h_red
    )
    best = min(s.sdist for s in scores)
    winner_ids = {s.simulation_id for s in scores if s.sdist == best}
    h_final = HypothesisSet.of(
        (r.hypothesis for r in lib.records if r.record_id in winner_ids), Provenance.FINAL
    )
    return MatchResult(status=STATUS_OK, h_red=h_red, scores=scores, h_final=h_final)
