"""Acceptance criteria.

Each test exercises one criterion at its stated tolerance and prints a
single PASS line with the measured numbers (run with ``pytest -v -rA`` to see
them). Every expected value is computed by an independent oracle inside this
module or pinned from a hand calculation; nothing is copied from the
implementation under test.
"""

import json
import time

import numpy as np

from cavesense import io
from cavesense.cli import main as cli_main
from cavesense.evaluation import classification_metrics
from cavesense.harness import (
    closed_loop,
    empty_h_real,
    principal_event,
    replay_events,
    replay_record_through,
)
from cavesense.inverse import InverseResult, build_h_real, cluster_activations, estimate_motion, fuse_clusters
from cavesense.inverse import ClusterParams
from cavesense.matching import BinaryActivationMatrix, binarize, match, pdist, sdist
from cavesense.model import (
    DIRECTIONS,
    Hypothesis,
    HypothesisSet,
    MatchTolerances,
    MotionVector,
    ObjectLabel,
    Provenance,
    hypothesis_matches,
    intersect_hypotheses,
)

from conftest import DT, DETECTION_RANGE


def random_pair(rng):
    n_k = int(rng.integers(1, 13))
    n_l = int(rng.integers(n_k, 21))
    n_c = int(rng.integers(1, 17))
    a = rng.integers(0, 2, size=(n_k, n_c)).astype(bool)
    b = rng.integers(0, 2, size=(n_l, n_c)).astype(bool)
    return a, b


def oracle_sdist(a: np.ndarray, b: np.ndarray) -> int:
    """Brute-force window scan, no distance-matrix intermediate."""
    if a.shape[0] > b.shape[0]:
        a, b = b, a
    n_k, n_l = a.shape[0], b.shape[0]
    best = None
    for offset in range(n_l - n_k + 1):
        total = 0
        for i in range(n_k):
            total += int(np.count_nonzero(a[i] != b[i + offset]))
        if best is None or total < best:
            best = total
    return best


def test_criterion_1_sdist_oracle_equivalence():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    checked = 0
    for _ in range(1000):
        a, b = random_pair(rng)
        got = sdist(pdist(BinaryActivationMatrix(a, DT), BinaryActivationMatrix(b, DT))).sdist
        want = oracle_sdist(a, b)
        assert got == want
        checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    print(f"[criterion 1] PASS sdist == brute-force oracle on {checked} pairs in {elapsed:.2f}s")


def test_criterion_2_transpose_symmetry():
    rng = np.random.default_rng(2024)  # same corpus as criterion 1
    for _ in range(1000):
        a, b = random_pair(rng)
        ma = BinaryActivationMatrix(a, DT)
        mb = BinaryActivationMatrix(b, DT)
        assert sdist(pdist(ma, mb)).sdist == sdist(pdist(mb, ma)).sdist
    print("[criterion 2] PASS sdist(pdist(A,B)) == sdist(pdist(B,A)) on 1000 pairs, exact")


def test_criterion_3_exact_self_match(library36, field, detector, tolerances):
    started = time.perf_counter()
    rank_one = 0
    for record in library36.records:
        events = replay_events(record, field, detector)
        event = principal_event(events)
        assert event is not None
        result = match(event, empty_h_real(), library36, tolerances, detector)
        own = next(s for s in result.scores if s.simulation_id == record.record_id)
        assert own.sdist == 0, f"{record.record_id}: self sdist {own.sdist}"
        assert record.hypothesis in result.h_final
        assert result.min_sdist == 0
        rank_one += 1
    elapsed = time.perf_counter() - started
    assert rank_one == 36
    assert elapsed < 60.0
    print(f"[criterion 3] PASS 36/36 self-matches at sdist=0, rank-1 rate 100%, {elapsed:.1f}s")


def _flip_fraction(outcome, lib, field, detector):
    record = lib.record_by_id(outcome.record_id)
    if outcome.event is None:
        return 1.0
    be = binarize(outcome.event, field, detector, lib.dt)
    score = sdist(pdist(be, record.activation))
    window = min(be.rows, record.activation.rows) * record.activation.cols
    return score.sdist / window


def _median_flip(lib, geometries, field, detector, tolerances, sigma, seed):
    probes = []
    for idx in range(0, len(lib.records), 6):
        record = lib.records[idx]
        geometry = next(g for g in geometries if g.type_id == record.hypothesis.label.object_type)
        outcome = replay_record_through(
            record, geometry, lib, detector, tolerances, noise_sigma=sigma, seed=seed + idx
        )
        probes.append(_flip_fraction(outcome, lib, field, detector))
    return float(np.median(probes))


def test_criterion_4_noisy_closed_loop(library36, field, geometries, detector, tolerances, taxonomy):
    started = time.perf_counter()
    # Calibrate noise_sigma so the median fraction of flipped activation bits
    # (vs each record's clean matrix, over the aligned window) is ~10%.
    lo, hi = 0.01, 0.6
    sigma = 0.1
    flips = 0.0
    for _ in range(14):
        sigma = (lo + hi) / 2.0
        flips = _median_flip(library36, geometries, field, detector, tolerances, sigma, seed=7000)
        if 0.08 <= flips <= 0.12:
            break
        if flips < 0.10:
            lo = sigma
        else:
            hi = sigma
    assert 0.08 <= flips <= 0.12, f"calibration failed: sigma={sigma} flips={flips}"

    outcomes = closed_loop(
        library36, geometries, detector, tolerances,
        noise_sigma=sigma, repetitions=3, seed=42, limit=100,
    )
    assert len(outcomes) == 100
    measured = [_flip_fraction(o, library36, field, detector) for o in outcomes]
    median_flips = float(np.median(measured))
    assert 0.05 <= median_flips <= 0.15

    type_hits = sum(
        1 for o in outcomes if (r := o.rank_at("type", taxonomy)) is not None and r <= 3
    )
    cat_hits = sum(
        1 for o in outcomes if (r := o.rank_at("size", taxonomy)) is not None and r <= 3
    )
    elapsed = time.perf_counter() - started
    assert type_hits >= 80, f"type rank<=3 rate {type_hits}/100"
    assert cat_hits >= 95, f"category rank<=3 rate {cat_hits}/100"
    assert elapsed < 300.0
    print(
        f"[criterion 4] PASS sigma={sigma:.4f} median flips={median_flips:.3f}, "
        f"type rank<=3 {type_hits}/100, category rank<=3 {cat_hits}/100, {elapsed:.1f}s"
    )


def _random_concrete(rng):
    tid = str(rng.choice(["T1", "T2", "T3", "T4"]))
    cat = {"T1": "A", "T2": "A", "T3": "B", "T4": "B"}[tid]
    return Hypothesis(
        label=ObjectLabel(object_type=tid, category=cat),
        motion=MotionVector(
            direction=str(rng.choice(DIRECTIONS)),
            velocity=float(rng.uniform(0.5, 8.0)),
            angle=float(rng.uniform(-60.0, 60.0)),
        ),
    )


def _random_pattern(rng):
    tid = str(rng.choice(["T1", "T2", "T3", "T4"])) if rng.random() < 0.4 else None
    if tid is not None:
        cat = {"T1": "A", "T2": "A", "T3": "B", "T4": "B"}[tid]
    else:
        cat = str(rng.choice(["A", "B"])) if rng.random() < 0.5 else None
    return Hypothesis(
        label=ObjectLabel(object_type=tid, category=cat),
        motion=MotionVector(
            direction=str(rng.choice(DIRECTIONS)) if rng.random() < 0.5 else None,
            velocity=float(rng.uniform(0.5, 8.0)) if rng.random() < 0.5 else None,
            angle=float(rng.uniform(-60.0, 60.0)) if rng.random() < 0.5 else None,
        ),
    )


def test_criterion_5_wildcard_algebra():
    rng = np.random.default_rng(99)
    tol = MatchTolerances(velocity=0.5, angle=3.0)
    cases = 0
    for _ in range(400):
        sim = HypothesisSet.of(
            [_random_concrete(rng) for _ in range(int(rng.integers(0, 14)))],
            Provenance.SIMULATED,
        )
        real_list = [_random_pattern(rng) for _ in range(int(rng.integers(0, 5)))]
        real = HypothesisSet.of(real_list, Provenance.INVERSE)
        out = intersect_hypotheses(sim, real, tol)

        # subset
        assert set(out) <= set(sim)
        # empty real constrains nothing
        if len(real) == 0:
            assert set(out) == set(sim)
        else:
            # monotonicity: an extra pattern never shrinks a non-empty real
            # (an empty real means "no information", which is not a pattern set)
            grown = HypothesisSet.of(real_list + [_random_pattern(rng)], Provenance.INVERSE)
            assert set(out) <= set(intersect_hypotheses(sim, grown, tol))
        # consistency with the single-hypothesis predicate
        for h in sim:
            member = h in out
            predicted = (len(real) == 0) or any(hypothesis_matches(h, p, tol) for p in real)
            assert member == predicted

        # build_h_real: subset of h0 and idempotent
        result = InverseResult(
            motion=_random_pattern(rng).motion,
            category=str(rng.choice(["A", "B"])) if rng.random() < 0.5 else None,
        )
        h0 = HypothesisSet.of(list(sim), Provenance.INITIAL)
        once = build_h_real(result, h0, tol)
        assert set(once) <= set(h0)
        assert set(build_h_real(result, once, tol)) == set(once)
        cases += 1
    assert cases == 400
    print(f"[criterion 5] PASS wildcard algebra properties on {cases} randomized grids, 100%")


def test_criterion_6_motion_estimation(library36, field, detector):
    params = ClusterParams(eps_space=8.0, eps_time=2.0, min_pts=3)
    primary_ids = set(field.primary_line().sensor_ids)
    checked = 0
    worst_rel = 0.0
    for record in library36.records:
        event = principal_event(replay_events(record, field, detector))
        active_primary = {sid for f in event.frames for sid in f.active if sid in primary_ids}
        assert len(active_primary) >= 3
        clusters = fuse_clusters(
            cluster_activations(event, field, params), 2 * params.eps_space, 2 * params.eps_time
        )
        estimate = estimate_motion(event, field, clusters)
        true = record.hypothesis.motion
        assert estimate.direction == true.direction, record.record_id
        rel = abs(estimate.velocity - true.velocity) / true.velocity
        worst_rel = max(worst_rel, rel)
        assert rel <= 0.10, f"{record.record_id}: velocity off by {rel:.1%}"
        checked += 1
    assert checked == 36
    print(
        f"[criterion 6] PASS direction exact and velocity within 10% on {checked}/36 "
        f"noiseless runs (worst {worst_rel:.2%})"
    )


def reference_metrics(pairs):
    """Hand-coded reference: per-class counts from first principles."""
    classes = sorted({t for _, t in pairs} | {p for p, _ in pairs})
    n = len(pairs)
    weighted = [0.0, 0.0, 0.0]
    for c in classes:
        tp = sum(1 for p, t in pairs if p == c and t == c)
        fp = sum(1 for p, t in pairs if p == c and t != c)
        fn = sum(1 for p, t in pairs if p != c and t == c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        weight = (tp + fn) / n
        weighted[0] += weight * precision
        weighted[1] += weight * recall
        weighted[2] += weight * f1
    return tuple(weighted)


def test_criterion_7_metrics_oracle():
    rng = np.random.default_rng(7)
    labels = ["A", "B", "C", "D", "Unknown"]
    for setup in range(20):
        n = int(rng.integers(1, 40))
        pairs = [
            (str(rng.choice(labels)), str(rng.choice(labels))) for _ in range(n)
        ]
        report = classification_metrics([([p], t) for p, t in pairs])
        want = reference_metrics(pairs)
        assert abs(report.weighted_precision - want[0]) <= 1e-12
        assert abs(report.weighted_recall - want[1]) <= 1e-12
        assert abs(report.weighted_f1 - want[2]) <= 1e-12
    print("[criterion 7] PASS weighted macro P/R/F1 match the hand-coded reference on 20 setups (<=1e-12)")


def test_criterion_8_bit_flip_sensitivity():
    rng = np.random.default_rng(4096)
    for _ in range(1000):
        a, b = random_pair(rng)
        base = sdist(pdist(BinaryActivationMatrix(a, DT), BinaryActivationMatrix(b, DT))).sdist
        if rng.integers(0, 2) == 0:
            target, other, flipped_is_a = a.copy(), b, True
        else:
            target, other, flipped_is_a = b.copy(), a, False
        i = int(rng.integers(0, target.shape[0]))
        j = int(rng.integers(0, target.shape[1]))
        target[i, j] = ~target[i, j]
        pair = (target, other) if flipped_is_a else (other, target)
        changed = sdist(
            pdist(BinaryActivationMatrix(pair[0], DT), BinaryActivationMatrix(pair[1], DT))
        ).sdist
        assert abs(changed - base) <= 1
    print("[criterion 8] PASS one bit flip changes sdist by at most 1 in 1000/1000 trials, exact")


def test_criterion_9_determinism(tmp_path, field, taxonomy):
    io.save_field(field, tmp_path / "field.json")
    io.save_taxonomy(taxonomy, tmp_path / "taxonomy.json")
    spec = {
        "geometries": [
            {
                "type_id": "gt-n",
                "category": "narrow",
                "outline": [[-3.0, -3.5], [3.0, -3.5], [3.0, 3.5], [-3.0, 3.5]],
                "sources": [
                    {"position": [0.0, -3.0]},
                    {"position": [0.0, 3.0]},
                    {"position": [2.0, 0.0]},
                    {"position": [-2.0, 0.0]},
                ],
            }
        ],
        "grid": {"directions": ["left-to-right", "right-to-left"],
                 "velocities": [4.0], "angles": [0.0]},
        "detection_range": DETECTION_RANGE,
        "dt": DT,
        "seed": 11,
        "noise_sigmas": [0.02],
    }
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    config = {
        "field": "field.json",
        "taxonomy": "taxonomy.json",
        "detector": {"lag": 50, "z_threshold": 3.5, "influence": 0.0, "min_gap": 1.0},
        "tolerances": {"velocity": 0.5, "angle": 3.0},
        "dt": DT,
    }
    (tmp_path / "config.json").write_text(json.dumps(config))

    def run_once(tag):
        lib_dir = tmp_path / f"lib-{tag}"
        assert cli_main(["simulate", "--spec", str(tmp_path / "spec.json"),
                         "--out", str(lib_dir), "--config", str(tmp_path / "config.json")]) == 0
        readings = lib_dir / "records" / "sim-0000" / "readings.csv"
        events = tmp_path / f"events-{tag}.json"
        assert cli_main(["detect", "--readings", str(readings), "--out", str(events),
                         "--config", str(tmp_path / "config.json")]) == 0
        report = tmp_path / f"report-{tag}.json"
        assert cli_main(["match", "--events", str(events), "--out", str(report),
                         "--config", str(tmp_path / "config.json"),
                         "--library", str(lib_dir)]) == 0
        return (lib_dir / "manifest.json").read_bytes(), report.read_bytes()

    manifest_a, report_a = run_once("a")
    manifest_b, report_b = run_once("b")
    assert manifest_a == manifest_b
    assert report_a == report_b
    print("[criterion 9] PASS identical seeds give byte-identical manifests and match reports")
