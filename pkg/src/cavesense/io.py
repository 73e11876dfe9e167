"""File formats: field/taxonomy JSON, readings CSV, events and match-report
JSON, bit-packed activation matrices, and simulation library persistence.

All JSON is written canonically (sorted keys, fixed indentation, UTF-8) so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .detection import ActivationFrame, DetectorConfig, Event
from .errors import ValidationError
from .evaluation import EvalReport, GroupRanking, RankedGroup
from .inverse import InverseResult
from .matching import BinaryActivationMatrix, MatchResult
from .model import (
    Hypothesis,
    LineDef,
    MotionVector,
    ObjectLabel,
    Reading,
    SensorDef,
    SensorField,
    Taxonomy,
)
from .simulate import (
    SensorTrace,
    SimulationConfig,
    SimulationLibrary,
    SimulationRecord,
    SkippedRun,
)

SCHEMA_VERSION = 1

READINGS_HEADER = ["t", "sensor_id", "x", "y", "z"]

ACTIVATION_MAGIC = b"CAVB"
ACTIVATION_HEADER = struct.Struct("<4sII4x")  # magic, u32 rows, u32 cols, 4 reserved bytes


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Union[str, Path], obj) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def read_json(path: Union[str, Path]):
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON: {exc}") from exc


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _expect_kind(doc, kind: str, path) -> None:
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise ValidationError(f"{path}: expected a {kind!r} document")


# ---------------------------------------------------------------- field


def field_to_doc(field: SensorField) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "sensor-field",
        "sensors": [
            {"id": s.id, "position": [s.position[0], s.position[1]]} for s in field.sensors
        ],
        "lines": [
            {"id": l.id, "role": l.role, "sensors": list(l.sensor_ids)} for l in field.lines
        ],
    }


def field_from_doc(doc, path="<field>") -> SensorField:
    _expect_kind(doc, "sensor-field", path)
    try:
        sensors = tuple(
            SensorDef(id=s["id"], position=(float(s["position"][0]), float(s["position"][1])))
            for s in doc["sensors"]
        )
        lines = tuple(
            LineDef(id=l["id"], role=l["role"], sensor_ids=tuple(l["sensors"]))
            for l in doc["lines"]
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"{path}: malformed field document ({exc})") from exc
    return SensorField(sensors=sensors, lines=lines)


def load_field(path: Union[str, Path]) -> SensorField:
    return field_from_doc(read_json(path), path)


def save_field(field: SensorField, path: Union[str, Path]) -> None:
    write_json(path, field_to_doc(field))


# ---------------------------------------------------------------- taxonomy


def taxonomy_to_doc(taxonomy: Taxonomy) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "taxonomy",
        "active_scheme": taxonomy.active,
        "schemes": {name: dict(table) for name, table in taxonomy.schemes.items()},
    }


def taxonomy_from_doc(doc, path="<taxonomy>") -> Taxonomy:
    _expect_kind(doc, "taxonomy", path)
    try:
        return Taxonomy(schemes=doc["schemes"], active=doc["active_scheme"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed taxonomy document ({exc})") from exc


def load_taxonomy(path: Union[str, Path]) -> Taxonomy:
    return taxonomy_from_doc(read_json(path), path)


def save_taxonomy(taxonomy: Taxonomy, path: Union[str, Path]) -> None:
    write_json(path, taxonomy_to_doc(taxonomy))


# ---------------------------------------------------------------- readings CSV


def write_readings_csv(path: Union[str, Path], readings: Iterable[Reading]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(READINGS_HEADER)
        for r in readings:
            # repr of a Python float round-trips exactly
            writer.writerow(
                [repr(float(r.t)), r.sensor_id]
                + [repr(float(v)) for v in r.value]
            )


def read_readings_csv(path: Union[str, Path]) -> list[Reading]:
    """Parse the ingestion CSV; malformed rows are reported with their line number."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}")
    readings: list[Reading] = []
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{p}: line 1: missing header {','.join(READINGS_HEADER)}")
        if [h.strip() for h in header] != READINGS_HEADER:
            raise ValidationError(
                f"{p}: line 1: expected header {','.join(READINGS_HEADER)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValidationError(f"{p}: line {lineno}: expected 5 columns, got {len(row)}")
            try:
                reading = Reading(
                    sensor_id=row[1],
                    t=float(row[0]),
                    value=(float(row[2]), float(row[3]), float(row[4])),
                )
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"{p}: line {lineno}: {exc}") from exc
            readings.append(reading)
    return readings


# ---------------------------------------------------------------- events


def _frame_to_doc(frame: ActivationFrame) -> dict:
    return {
        "t": frame.t,
        "active": sorted(frame.active),
        "magnitudes": {sid: frame.magnitudes[sid] for sid in sorted(frame.magnitudes)},
    }


def events_to_doc(events: Sequence[Event], ids: Optional[Sequence[str]] = None) -> dict:
    if ids is None:
        ids = [f"evt-{i:04d}" for i in range(len(events))]
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "events",
        "events": [
            {
                "id": event_id,
                "t0": e.t0,
                "tk": e.tk,
                "frames": [_frame_to_doc(f) for f in e.frames],
            }
            for event_id, e in zip(ids, events)
        ],
    }


def events_from_doc(doc, path="<events>") -> list[tuple[str, Event]]:
    _expect_kind(doc, "events", path)
    out: list[tuple[str, Event]] = []
    for entry in doc.get("events", []):
        frames = tuple(
            ActivationFrame(
                t=float(f["t"]),
                active=frozenset(f["active"]),
                magnitudes={k: float(v) for k, v in f.get("magnitudes", {}).items()},
            )
            for f in entry["frames"]
        )
        out.append((entry["id"], Event.from_frames(frames)))
    return out


# ---------------------------------------------------------------- hypotheses


def motion_to_doc(m: MotionVector) -> dict:
    return {"direction": m.direction, "velocity": m.velocity, "angle": m.angle}


def motion_from_doc(doc) -> MotionVector:
    return MotionVector(
        direction=doc.get("direction"),
        velocity=doc.get("velocity"),
        angle=doc.get("angle"),
    )


def label_to_doc(label: ObjectLabel) -> dict:
    return {"object_type": label.object_type, "category": label.category}


def label_from_doc(doc) -> ObjectLabel:
    return ObjectLabel(object_type=doc.get("object_type"), category=doc.get("category"))


def hypothesis_to_doc(h: Hypothesis) -> dict:
    return {"label": label_to_doc(h.label), "motion": motion_to_doc(h.motion)}


def hypothesis_from_doc(doc) -> Hypothesis:
    return Hypothesis(label=label_from_doc(doc["label"]), motion=motion_from_doc(doc["motion"]))


# ---------------------------------------------------------------- activation matrices


def pack_activation(matrix: BinaryActivationMatrix) -> bytes:
    """Row-major bit-packed matrix behind a 16-byte header (magic, rows, cols)."""
    flat = matrix.bits.astype(np.uint8).reshape(-1)
    body = np.packbits(flat, bitorder="big").tobytes()
    return ACTIVATION_HEADER.pack(ACTIVATION_MAGIC, matrix.rows, matrix.cols) + body


def unpack_activation(data: bytes, dt: float, path="<activation>") -> BinaryActivationMatrix:
    if len(data) < ACTIVATION_HEADER.size:
        raise ValidationError(f"{path}: truncated activation file")
    magic, rows, cols = ACTIVATION_HEADER.unpack_from(data)
    if magic != ACTIVATION_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    n_bits = rows * cols
    body = data[ACTIVATION_HEADER.size :]
    if len(body) < (n_bits + 7) // 8:
        raise ValidationError(f"{path}: expected {(n_bits + 7) // 8} payload bytes, got {len(body)}")
    flat = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="big")[:n_bits]
    return BinaryActivationMatrix(bits=flat.reshape(rows, cols).astype(bool), dt=dt)


# ---------------------------------------------------------------- simulation library


def detector_to_doc(cfg: DetectorConfig) -> dict:
    return {
        "lag": cfg.lag,
        "z_threshold": cfg.z_threshold,
        "influence": cfg.influence,
        "min_gap": cfg.min_gap,
    }


def detector_from_doc(doc) -> DetectorConfig:
    return DetectorConfig(
        lag=int(doc["lag"]),
        z_threshold=float(doc["z_threshold"]),
        influence=float(doc["influence"]),
        min_gap=float(doc["min_gap"]),
    )


def _sim_config_to_doc(cfg: SimulationConfig) -> dict:
    return {
        "start_position": None if cfg.start_position is None else list(cfg.start_position),
        "detection_range": cfg.detection_range,
        "noise_sigma": cfg.noise_sigma,
        "dt": cfg.dt,
        "duration": cfg.duration,
        "lead_time": cfg.lead_time,
        "lateral_offset": cfg.lateral_offset,
    }


def _sim_config_from_doc(doc, field: SensorField, motion: MotionVector) -> SimulationConfig:
    start = doc.get("start_position")
    return SimulationConfig(
        field=field,
        motion=motion,
        start_position=None if start is None else (float(start[0]), float(start[1])),
        detection_range=float(doc["detection_range"]),
        noise_sigma=float(doc["noise_sigma"]),
        dt=float(doc["dt"]),
        duration=doc.get("duration"),
        lead_time=float(doc.get("lead_time", 8.0)),
        lateral_offset=float(doc.get("lateral_offset", 0.0)),
    )


def library_manifest_doc(lib: SimulationLibrary, record_digests: dict[str, dict[str, str]]) -> dict:
    field_doc = field_to_doc(lib.field)
    records = []
    for r in lib.records:
        digests = record_digests[r.record_id]
        records.append(
            {
                "id": r.record_id,
                "hypothesis": hypothesis_to_doc(r.hypothesis),
                "seed": r.seed,
                "config": _sim_config_to_doc(r.config),
                "rows": r.activation.rows,
                "cols": r.activation.cols,
                "readings_sha256": digests["readings"],
                "activation_sha256": digests["activation"],
            }
        )
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "simulation-library",
        "dt": lib.dt,
        "detector": detector_to_doc(lib.detector),
        "field_sha256": sha256_hex(canonical_json(field_doc).encode("utf-8")),
        "index": lib.manifest_index(),
        "records": records,
        "skipped": [
            {"type_id": s.type_id, "motion": motion_to_doc(s.motion), "reason": s.reason}
            for s in lib.skipped
        ],
    }
    doc["digest"] = sha256_hex(canonical_json(doc).encode("utf-8"))
    return doc


def save_library(lib: SimulationLibrary, out_dir: Union[str, Path]) -> str:
    """Write manifest.json, field.json and per-record data; returns the manifest digest."""
    out = Path(out_dir)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    save_field(lib.field, out / "field.json")
    digests: dict[str, dict[str, str]] = {}
    for record in lib.records:
        rdir = records_dir / record.record_id
        rdir.mkdir(parents=True, exist_ok=True)
        write_readings_csv(rdir / "readings.csv", record.readings())
        blob = pack_activation(record.activation)
        (rdir / "activation.bin").write_bytes(blob)
        digests[record.record_id] = {
            "readings": sha256_hex((rdir / "readings.csv").read_bytes()),
            "activation": sha256_hex(blob),
        }
    manifest = library_manifest_doc(lib, digests)
    write_json(out / "manifest.json", manifest)
    return manifest["digest"]


def _traces_from_readings(readings: Sequence[Reading], field: SensorField) -> tuple[SensorTrace, ...]:
    by_sensor: dict[str, list[Reading]] = {sid: [] for sid in field.sensor_ids}
    for r in readings:
        if r.sensor_id not in by_sensor:
            raise ValidationError(f"record references unknown sensor {r.sensor_id!r}")
        by_sensor[r.sensor_id].append(r)
    traces = []
    for sid in field.sensor_ids:
        rows = by_sensor[sid]
        traces.append(
            SensorTrace(
                sensor_id=sid,
                t=np.array([r.t for r in rows]),
                values=np.array([r.value for r in rows]).reshape(len(rows), 3),
            )
        )
    return tuple(traces)


def load_library(path: Union[str, Path], load_readings: bool = True) -> SimulationLibrary:
    root = Path(path)
    manifest = read_json(root / "manifest.json")
    _expect_kind(manifest, "simulation-library", root / "manifest.json")
    field = load_field(root / "field.json")
    detector = detector_from_doc(manifest["detector"])
    dt = float(manifest["dt"])
    records = []
    for entry in manifest["records"]:
        rdir = root / "records" / entry["id"]
        hypothesis = hypothesis_from_doc(entry["hypothesis"])
        activation = unpack_activation(
            (rdir / "activation.bin").read_bytes(), dt=dt, path=rdir / "activation.bin"
        )
        if activation.rows != entry["rows"] or activation.cols != entry["cols"]:
            raise ValidationError(f"{rdir}: activation shape disagrees with the manifest")
        traces: tuple[SensorTrace, ...] = ()
        if load_readings:
            traces = _traces_from_readings(read_readings_csv(rdir / "readings.csv"), field)
        records.append(
            SimulationRecord(
                record_id=entry["id"],
                hypothesis=hypothesis,
                traces=traces,
                activation=activation,
                config=_sim_config_from_doc(entry["config"], field, hypothesis.motion),
                seed=int(entry["seed"]),
            )
        )
    skipped = tuple(
        SkippedRun(
            type_id=s["type_id"], motion=motion_from_doc(s["motion"]), reason=s["reason"]
        )
        for s in manifest.get("skipped", [])
    )
    return SimulationLibrary(
        field=field, dt=dt, detector=detector, records=tuple(records), skipped=skipped
    )


def manifest_digest(path: Union[str, Path]) -> str:
    manifest = read_json(Path(path) / "manifest.json")
    return manifest["digest"]


# ---------------------------------------------------------------- match reports


def _ranking_to_doc(ranking: Optional[GroupRanking]) -> Optional[list]:
    if ranking is None:
        return None
    return [
        {
            "rank": g.rank,
            "sdist": g.sdist,
            "record_ids": list(g.record_ids),
            "labels": [label_to_doc(l) for l in g.labels],
        }
        for g in ranking.groups
    ]


def ranking_from_doc(doc) -> Optional[GroupRanking]:
    if doc is None:
        return None
    return GroupRanking(
        groups=tuple(
            RankedGroup(
                rank=int(g["rank"]),
                sdist=int(g["sdist"]),
                record_ids=tuple(g["record_ids"]),
                labels=tuple(label_from_doc(l) for l in g["labels"]),
            )
            for g in doc
        )
    )


def inverse_to_doc(result: Optional[InverseResult]) -> Optional[dict]:
    if result is None:
        return None
    return {
        "motion": motion_to_doc(result.motion),
        "category": result.category,
        "motion_status": result.motion_status,
        "classified": result.classified,
        "scenario": result.scenario,
    }


def match_report_entry(
    event_id: str,
    result: MatchResult,
    ranking: Optional[GroupRanking],
    inverse: Optional[InverseResult] = None,
    h_real_size: Optional[int] = None,
    wall_time_s: Optional[float] = None,
    hypotheses_by_id: Optional[dict[str, Hypothesis]] = None,
) -> dict:
    h_final = sorted(
        (hypothesis_to_doc(h) for h in result.h_final),
        key=lambda d: json.dumps(d, sort_keys=True),
    )
    scores = []
    for s in result.scores:
        entry = {
            "simulation_id": s.simulation_id,
            "sdist": s.sdist,
            "best_offset": s.best_offset,
        }
        if hypotheses_by_id is not None:
            entry["hypothesis"] = hypothesis_to_doc(hypotheses_by_id[s.simulation_id])
        scores.append(entry)
    return {
        "event_id": event_id,
        "status": result.status,
        "inverse": inverse_to_doc(inverse),
        "h_real_size": h_real_size,
        "h_red_size": len(result.h_red),
        "scores": scores,
        "h_final": h_final,
        "ranking": _ranking_to_doc(ranking),
        "wall_time_s": wall_time_s,
    }


def match_reports_doc(entries: Sequence[dict], library_digest: str, dt: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "match-reports",
        "library_digest": library_digest,
        "dt": dt,
        "events": list(entries),
    }


def load_match_reports(path: Union[str, Path]) -> dict:
    doc = read_json(path)
    _expect_kind(doc, "match-reports", path)
    return doc


# ---------------------------------------------------------------- truth labels


def load_truth(path: Union[str, Path]) -> dict[str, str]:
    """Truth file: {"labels": {event_id: object_type}}; unlabeled ids may be
    listed under "unlabeled"."""
    doc = read_json(path)
    _expect_kind(doc, "truth-labels", path)
    labels = doc.get("labels", {})
    if not isinstance(labels, dict):
        raise ValidationError(f"{path}: 'labels' must be a mapping")
    return {str(k): str(v) for k, v in labels.items()}


def load_unlabeled(path: Union[str, Path]) -> set[str]:
    doc = read_json(path)
    return set(doc.get("unlabeled", []))


# ---------------------------------------------------------------- evaluation outputs


def eval_report_doc(report: EvalReport, level: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "eval-report",
        "level": level,
        "total": report.total,
        "accuracy": report.accuracy,
        "tie_policy": report.tie_policy,
        "weighted": {
            "precision": report.weighted_precision,
            "recall": report.weighted_recall,
            "f1": report.weighted_f1,
        },
        "classes": [
            {
                "label": c.label,
                "support": c.support,
                "tp": c.tp,
                "fp": c.fp,
                "fn": c.fn,
                "precision": c.precision,
                "recall": c.recall,
                "f1": c.f1,
            }
            for c in report.classes
        ],
        "rank_histogram": [[rank, count] for rank, count in report.rank_histogram],
        "unranked": report.unranked,
    }


def write_eval_csv(report: EvalReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "support", "tp", "fp", "fn", "precision", "recall", "f1"])
        for c in report.classes:
            writer.writerow(
                [c.label, c.support, c.tp, c.fp, c.fn, repr(c.precision), repr(c.recall), repr(c.f1)]
            )
        writer.writerow(
            [
                "WEIGHTED_MACRO",
                report.total,
                "",
                "",
                "",
                repr(report.weighted_precision),
                repr(report.weighted_recall),
                repr(report.weighted_f1),
            ]
        )


def write_rank_histogram_csv(report: EvalReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "count"])
        for rank, count in report.rank_histogram:
            writer.writerow([rank, count])
        if report.unranked:
            writer.writerow(["absent", report.unranked])
