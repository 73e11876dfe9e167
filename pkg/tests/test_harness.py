"""Closed-loop replay machinery and the experiment runner."""

import pytest

from cavesense.config import ExperimentSpec, experiment_spec_from_doc
from cavesense.errors import ValidationError
from cavesense.harness import (
    closed_loop,
    principal_event,
    replay_events,
    resimulate,
    run_experiment,
)
from cavesense.matching import STATUS_OK
from cavesense.simulate import SimulationGrid

from conftest import DETECTION_RANGE, DT, make_narrow, make_wide


class TestReplay:
    def test_replay_reproduces_one_event(self, library36, field, detector):
        events = replay_events(library36.records[0], field, detector)
        assert len(events) == 1

    def test_principal_event_picks_longest(self, library36, field, detector):
        events = replay_events(library36.records[0], field, detector)
        assert principal_event(events) == max(events, key=lambda e: len(e.frames))
        assert principal_event([]) is None

    def test_resimulate_guards_geometry(self, library36, detector):
        record = next(
            r for r in library36.records if r.hypothesis.label.object_type == "gt-n"
        )
        with pytest.raises(ValidationError):
            resimulate(record, make_wide(), noise_sigma=0.1, seed=1, detector=detector)

    def test_closed_loop_repetitions_and_limit(
        self, library36, geometries, field, detector, tolerances
    ):
        outcomes = closed_loop(
            library36, geometries, detector, tolerances,
            noise_sigma=0.0, repetitions=2, seed=5, limit=40,
        )
        assert len(outcomes) == 40
        assert all(o.result is not None and o.result.status == STATUS_OK for o in outcomes)

    def test_closed_loop_requires_geometries(self, library36, field, detector, tolerances):
        with pytest.raises(ValidationError):
            closed_loop(
                library36, [make_narrow()], detector, tolerances,
                noise_sigma=0.0, repetitions=1, seed=5,
            )


class TestExperimentSpec:
    def test_from_doc_and_validation(self):
        doc = {
            "geometries": [
                {
                    "type_id": "gt-n",
                    "category": "narrow",
                    "outline": [[-1, -1], [1, -1], [1, 1], [-1, 1]],
                    "sources": [{"position": [0, 0], "strength": 2.0}],
                }
            ],
            "grid": {"velocities": [4.0], "angles": [0.0]},
            "noise_sigmas": [0.0, 0.05],
            "repetitions": 2,
            "disable_inverse": True,
        }
        spec = experiment_spec_from_doc(doc)
        assert spec.grid.directions == ("left-to-right", "right-to-left")
        assert spec.noise_sigmas == (0.0, 0.05)
        assert spec.repetitions == 2 and spec.disable_inverse

        with pytest.raises(ValidationError):
            experiment_spec_from_doc({**doc, "repetitions": 0})
        with pytest.raises(ValidationError):
            experiment_spec_from_doc({**doc, "geometries": []})
        with pytest.raises(ValidationError):
            experiment_spec_from_doc({**doc, "noise_sigmas": [-0.1]})

    def test_malformed_geometry_reported(self):
        doc = {
            "geometries": [{"type_id": "x"}],
            "grid": {"velocities": [4.0], "angles": [0.0]},
        }
        with pytest.raises(ValidationError, match="geometry #0"):
            experiment_spec_from_doc(doc)


class TestRunExperiment:
    def test_ablation_and_noise_levels(self, field, detector, taxonomy):
        spec = ExperimentSpec(
            geometries=(make_narrow(), make_wide()),
            grid=SimulationGrid(
                directions=("left-to-right",), velocities=(4.0,), angles=(0.0,)
            ),
            detection_range=DETECTION_RANGE,
            noise_sigmas=(0.0, 0.03),
            dt=DT,
            repetitions=2,
            disable_inverse=True,
            seed=11,
        )
        lib, outcomes = run_experiment(spec, field, detector, taxonomy=taxonomy)
        assert len(lib.records) == 2
        assert set(outcomes) == {0.0, 0.03}
        assert len(outcomes[0.0]) == 4  # 2 records x 2 repetitions
        # ablation arm: no inverse result attached anywhere
        assert all(o.inverse is None for o in outcomes[0.0])
        # noiseless replays self-match exactly
        assert all(o.result.min_sdist == 0 for o in outcomes[0.0])

    def test_inverse_arm_attaches_results(self, field, detector, taxonomy):
        spec = ExperimentSpec(
            geometries=(make_narrow(), make_wide()),
            grid=SimulationGrid(
                directions=("left-to-right",), velocities=(4.0,), angles=(0.0,)
            ),
            detection_range=DETECTION_RANGE,
            noise_sigmas=(0.0,),
            dt=DT,
            repetitions=1,
            disable_inverse=False,
            seed=11,
        )
        _, outcomes = run_experiment(spec, field, detector, taxonomy=taxonomy)
        assert all(o.inverse is not None for o in outcomes[0.0])
        assert all(o.inverse.scenario == "i" for o in outcomes[0.0])
        # on noiseless data the inverse constraints keep the true record
        for o in outcomes[0.0]:
            assert o.result.status == STATUS_OK
            assert o.result.min_sdist == 0
            assert o.truth in {h.label for h in o.result.h_final}
