"""Command-line driver: simulate, detect, match, evaluate, rank.

Exit codes: 0 success, 2 validation error (bad input, bad config), 1 internal
or I/O failure. All outputs are UTF-8; JSON outputs are canonical so reruns
with identical seeds produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path
from typing import Optional

from . import io
from .config import ExperimentSpec, PipelineConfig, load_experiment_spec, load_pipeline_config
from .detection import detect_events
from .errors import CavesenseError, ValidationError
from .evaluation import UNKNOWN_LABEL, classification_metrics, true_class_rank
from .harness import run_event_through
from .inverse import SpanBinClassifier
from .matching import STATUS_OK
from .model import ObjectLabel, Taxonomy
from .simulate import SimulationConfig, generate_library


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CavesenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        target = getattr(exc, "filename", None)
        where = f" ({target})" if target else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavesense",
        description="Sensor-field crossing analysis: simulate, detect, match, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a simulation library from an experiment spec")
    sim.add_argument("--spec", required=True, help="experiment spec (TOML or JSON)")
    sim.add_argument("--out", required=True, help="library output directory")
    _common_config_flags(sim)
    sim.set_defaults(handler=cmd_simulate)

    det = sub.add_parser("detect", help="detect events in a readings CSV")
    det.add_argument("--readings", required=True, help="CSV with header t,sensor_id,x,y,z")
    det.add_argument("--out", required=True, help="events JSON output path")
    _common_config_flags(det)
    det.set_defaults(handler=cmd_detect)

    mat = sub.add_parser("match", help="match detected events against a simulation library")
    mat.add_argument("--events", required=True, help="events JSON from `detect`")
    mat.add_argument("--out", required=True, help="match report JSON output path")
    mat.add_argument("--no-inverse", action="store_true", help="skip the inverse pass (all-wildcard)")
    mat.add_argument("--timing", action="store_true", help="record wall time per event in the report")
    _common_config_flags(mat)
    mat.set_defaults(handler=cmd_match)

    ev = sub.add_parser("evaluate", help="score match reports against truth labels")
    ev.add_argument("--reports", required=True, help="match report JSON from `match`")
    ev.add_argument("--truth", required=True, help="truth labels JSON")
    ev.add_argument("--out-dir", required=True, help="directory for metrics and histogram files")
    ev.add_argument("--level", default="type", help='taxonomy level: "type" or a scheme name')
    _common_config_flags(ev)
    ev.set_defaults(handler=cmd_evaluate)

    rank = sub.add_parser("rank", help="export per-event group rankings from a match report")
    rank.add_argument("--reports", required=True, help="match report JSON from `match`")
    rank.add_argument("--out", required=True, help="ranking CSV output path")
    rank.set_defaults(handler=cmd_rank)
    return parser


def _common_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="pipeline config file (TOML or JSON)")
    sub.add_argument("--field", help="sensor field JSON (overrides config)")
    sub.add_argument("--taxonomy", help="taxonomy JSON (overrides config)")
    sub.add_argument("--library", help="simulation library directory (overrides config)")
    sub.add_argument("--seed", type=int, help="seed override")
    sub.add_argument("--dt", type=float, help="tick duration override (seconds)")


def _load_config(args) -> PipelineConfig:
    overrides = {
        "field": getattr(args, "field", None),
        "taxonomy": getattr(args, "taxonomy", None),
        "library": getattr(args, "library", None),
        "seed": getattr(args, "seed", None),
        "dt": getattr(args, "dt", None),
    }
    return load_pipeline_config(getattr(args, "config", None), overrides)


def cmd_simulate(args) -> int:
    spec: ExperimentSpec = load_experiment_spec(args.spec)
    config = _load_config(args)
    field = io.load_field(config.require("field_path", "--field"))
    if config.taxonomy_path is not None:
        _check_geometry_categories(spec, io.load_taxonomy(config.taxonomy_path))
    base_cfg = SimulationConfig(
        field=field,
        detection_range=spec.detection_range,
        noise_sigma=spec.noise_sigmas[0],
        dt=spec.dt,
        lead_time=spec.lead_time,
        lateral_offset=spec.lateral_offset,
    )
    seed = args.seed if args.seed is not None else spec.seed
    lib = generate_library(spec.geometries, spec.grid, base_cfg, seed, config.detector)
    digest = io.save_library(lib, args.out)
    print(f"library: {len(lib.records)} records, {len(lib.skipped)} skipped -> {args.out}")
    for skip in lib.skipped:
        print(f"  skipped {skip.type_id} {skip.motion.direction}: {skip.reason}")
    print(f"manifest digest: {digest}")
    return 0


def _check_geometry_categories(spec: ExperimentSpec, taxonomy: Taxonomy) -> None:
    for g in spec.geometries:
        expected = taxonomy.schemes[taxonomy.active].get(g.type_id)
        if expected is not None and expected != g.category:
            raise ValidationError(
                f"geometry {g.type_id!r} declares category {g.category!r} but the "
                f"taxonomy maps it to {expected!r}"
            )


def cmd_detect(args) -> int:
    config = _load_config(args)
    field = io.load_field(config.require("field_path", "--field"))
    readings = io.read_readings_csv(args.readings)
    events = detect_events(readings, field, config.detector)
    io.write_json(args.out, io.events_to_doc(events))
    print(f"{len(events)} event(s) -> {args.out}")
    return 0


def cmd_match(args) -> int:
    config = _load_config(args)
    lib = io.load_library(config.require("library_path", "--library"), load_readings=False)
    if args.dt is not None or "dt" in _explicit_config_keys(args):
        if abs(config.dt - lib.dt) > 1e-12:
            raise ValidationError(
                f"configured dt {config.dt} does not match the library manifest dt {lib.dt}"
            )
    events = io.events_from_doc(io.read_json(args.events), args.events)
    use_inverse = config.use_inverse and not args.no_inverse
    classifier = None
    taxonomy = None
    if use_inverse and config.taxonomy_path is not None:
        taxonomy = io.load_taxonomy(config.taxonomy_path)
        classifier = SpanBinClassifier.calibrate(lib, scheme=taxonomy.active)
    entries = []
    hypotheses_by_id = {r.record_id: r.hypothesis for r in lib.records}
    for event_id, event in events:
        started = time.perf_counter()
        run = run_event_through(
            event,
            lib,
            lib.detector,
            config.tolerances,
            cluster=config.cluster,
            classifier=classifier,
            taxonomy=taxonomy,
            confidence_floor=config.confidence_floor,
            use_inverse=use_inverse,
        )
        wall = time.perf_counter() - started if args.timing else None
        entries.append(
            io.match_report_entry(
                event_id,
                run.result,
                run.ranking,
                inverse=run.inverse,
                h_real_size=len(run.h_real),
                wall_time_s=wall,
                hypotheses_by_id=hypotheses_by_id,
            )
        )
    digest = io.manifest_digest(config.require("library_path", "--library"))
    io.write_json(args.out, io.match_reports_doc(entries, digest, lib.dt))
    matched = sum(1 for e in entries if e["status"] == STATUS_OK)
    print(f"{matched}/{len(entries)} event(s) matched -> {args.out}")
    return 0


def _explicit_config_keys(args) -> set[str]:
    if getattr(args, "config", None) is None:
        return set()
    from .config import load_config_doc

    return set(load_config_doc(args.config))


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    reports = io.load_match_reports(args.reports)
    truth = io.load_truth(args.truth)
    unlabeled = io.load_unlabeled(args.truth)
    level = args.level
    taxonomy = None
    if level != Taxonomy.TYPE_LEVEL or config.taxonomy_path is not None:
        taxonomy = io.load_taxonomy(config.require("taxonomy_path", "--taxonomy"))
        if level not in taxonomy.levels():
            raise ValidationError(f"unknown taxonomy level {level!r}; know {taxonomy.levels()}")

    report_ids = [entry["event_id"] for entry in reports["events"]]
    missing = [eid for eid in report_ids if eid not in truth and eid not in unlabeled]
    orphaned = [eid for eid in truth if eid not in set(report_ids)]
    if missing or orphaned:
        raise ValidationError(
            "event id mismatches - "
            f"unlabeled report events: {missing or 'none'}; truth without reports: {orphaned or 'none'}"
        )

    pairs = []
    ranks = []
    for entry in reports["events"]:
        eid = entry["event_id"]
        if eid in unlabeled:
            continue
        truth_type = truth[eid]
        truth_token = _project_token(ObjectLabel(object_type=truth_type), level, taxonomy)
        if entry["status"] != STATUS_OK:
            predicted = [UNKNOWN_LABEL]
        else:
            predicted = sorted(
                {
                    _project_token(io.label_from_doc(doc["label"]), level, taxonomy)
                    for doc in entry["h_final"]
                }
            )
        pairs.append((predicted, truth_token))
        ranking = io.ranking_from_doc(entry.get("ranking"))
        if ranking is None or truth_token == UNKNOWN_LABEL:
            ranks.append(None)
        else:
            ranks.append(
                _safe_rank(ranking, ObjectLabel(object_type=truth_type), level, taxonomy)
            )
    if not pairs:
        raise ValidationError("no labeled events to evaluate")
    report = classification_metrics(pairs, ranks)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_json(out_dir / "metrics.json", io.eval_report_doc(report, level))
    io.write_eval_csv(report, out_dir / "metrics.csv")
    io.write_rank_histogram_csv(report, out_dir / "rank_histogram.csv")
    print(
        f"level={level} n={report.total} "
        f"P={report.weighted_precision:.3f} R={report.weighted_recall:.3f} "
        f"F1={report.weighted_f1:.3f} -> {out_dir}"
    )
    return 0


def _project_token(label: ObjectLabel, level: str, taxonomy: Optional[Taxonomy]) -> str:
    if label.object_type == UNKNOWN_LABEL:
        return UNKNOWN_LABEL
    if level == Taxonomy.TYPE_LEVEL:
        if label.object_type is None:
            raise ValidationError(f"label {label} has no type to evaluate at level 'type'")
        return label.object_type
    assert taxonomy is not None
    token = taxonomy.project(label, level)
    if token is None:
        raise ValidationError(f"label {label} cannot be projected to level {level!r}")
    return token


def _safe_rank(ranking, truth: ObjectLabel, level: str, taxonomy: Optional[Taxonomy]):
    if level == Taxonomy.TYPE_LEVEL and taxonomy is None:
        # Rank lookup needs only type tokens; project labels directly.
        for group in ranking.groups:
            if any(l.object_type == truth.object_type for l in group.labels):
                return group.rank
        return None
    return true_class_rank(ranking, truth, level, taxonomy)


def cmd_rank(args) -> int:
    reports = io.load_match_reports(args.reports)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "rank", "sdist", "group_size", "types"])
        for entry in reports["events"]:
            ranking = entry.get("ranking")
            if not ranking:
                writer.writerow([entry["event_id"], "", "", 0, ""])
                continue
            for group in ranking:
                types = sorted({doc["object_type"] or "?" for doc in group["labels"]})
                writer.writerow(
                    [
                        entry["event_id"],
                        group["rank"],
                        group["sdist"],
                        len(group["record_ids"]),
                        ";".join(types),
                    ]
                )
    print(f"rank table -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
