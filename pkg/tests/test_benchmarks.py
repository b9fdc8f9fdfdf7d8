import json

import numpy as np
import pytest

from utils.benchmarks import (
    BENCHMARKS,
    DEFAULT_HALLWAY,
    HallwaySpec,
    TaskParams,
    gen_example1,
    gen_hallway,
    gen_tiger,
    get_benchmark,
    load_hallway_spec,
)
from utils.errors import ModelValidationError
from utils.oracle import exact_min_risk
from utils.pomdp_model import validate


class TestTiger:
    def test_shape(self):
        generated = gen_tiger()
        assert generated.n_states == 4
        assert generated.describe() == {
            "generator": "tiger",
            "params": {"accuracy": 0.85, "listen_cost": -1.0, "treasure": 10.0, "tiger": -100.0, "discount": 0.95},
            "states": 4,
            "actions": 3,
            "observations": 4,
        }

    def test_bad_accuracy(self):
        with pytest.raises(ModelValidationError):
            gen_tiger(accuracy=1.5)


class TestExample1:
    def test_is_fully_observable(self):
        model = gen_example1().model
        assert np.array_equal(model.obs_fn, np.eye(7))
        assert model.discount == 0.5
        assert validate(model) == []


class TestHallway:
    def test_default_min_risk(self):
        model = gen_hallway().model
        assert exact_min_risk(model, 1.0, 6) == pytest.approx(0.5)

    def test_unreachable_task(self):
        spec = HallwaySpec(grid=["###", "S#1", "###"], tasks={1: TaskParams()})
        model = gen_hallway(spec).model
        assert exact_min_risk(model, 1.0, 6) == 1.0

    def test_start_belief(self):
        model = gen_hallway().model
        start = np.flatnonzero(model.initial_belief)
        assert len(start) == 4
        assert model.initial_belief[start] == pytest.approx([0.25] * 4)

    def test_walls_identify_heading(self):
        model = gen_hallway().model
        labels = {model.observations[int(np.argmax(model.obs_fn[s]))] for s in range(4)}
        assert len(labels) == 4
        assert all(label.endswith("-none") for label in labels)

    def test_task_outcomes_are_observed(self):
        model = gen_hallway().model
        outcomes = {label.split("-", 1)[1] for label in model.observations}
        assert outcomes == {"none", "task1-good", "task1-bad"}
        assert sorted(set(model.reward.ravel())) == [-10.0, 0.0, 10.0]

    def test_observable_variant(self):
        model = gen_hallway(observable=True).model
        assert model.name == "hallway-mdp"
        assert model.observations == model.states
        assert np.array_equal(model.obs_fn, np.eye(model.n_states))

    def test_trap_spins_robot(self):
        spec = HallwaySpec(grid=["#####", "S.T.1", "#####"], trap_spin=(0.0, 0.5, 0.0, 0.5))
        model = gen_hallway(spec).model
        assert validate(model) == []
        trap = [i for i, name in enumerate(model.states) if name.startswith("r1c2")]
        assert {model.states[i][4] for i in trap} >= {"N", "S"}

    def test_certain_task(self):
        spec = HallwaySpec(grid=["S1"], tasks={1: TaskParams(reward=5.0, penalty=-1.0, p_good=1.0)})
        model = gen_hallway(spec).model
        assert not any("bad" in name for name in model.states)


class TestHallwaySpec:
    def test_two_starts(self):
        with pytest.raises(ModelValidationError):
            HallwaySpec(grid=["S.S"])

    def test_ragged(self):
        with pytest.raises(ModelValidationError):
            HallwaySpec(grid=["S..", "."])

    def test_unknown_symbol(self):
        with pytest.raises(ModelValidationError, match="unknown map symbols"):
            HallwaySpec(grid=["S.x"])

    def test_cell_outside_is_wall(self):
        assert DEFAULT_HALLWAY.cell(-1, 0) == "#"
        assert DEFAULT_HALLWAY.start() == (1, 0)
        assert DEFAULT_HALLWAY.task_cells() == [((1, 2), 1)]

    def test_load_json(self, tmp_path):
        path = tmp_path / "map.json"
        path.write_text(json.dumps({
            "grid": ["S.1"],
            "tasks": {"1": {"reward": 3, "penalty": -2, "p_good": 0.25}},
            "discount": 0.9,
        }), encoding="utf-8")
        spec = load_hallway_spec(path)
        assert spec.task(1) == TaskParams(3, -2, 0.25)
        assert spec.discount == 0.9
        assert spec.trap_spin == (0.25, 0.25, 0.25, 0.25)

    @pytest.mark.parametrize("data", [
        {"grid": ["S.1"], "extra": 1},
        {"grid": ["S.1"], "tasks": {"1": {"reward": 1, "penalty": 0, "p_good": 2}}},
        {"tasks": {}},
        {"grid": ["S.1"], "discount": 1.0},
    ])
    def test_schema_errors(self, tmp_path, data):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(ModelValidationError):
            load_hallway_spec(path)


class TestRegistry:
    @pytest.mark.parametrize("name", sorted(BENCHMARKS))
    def test_all_valid(self, name):
        assert validate(get_benchmark(name).model) == []

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown benchmark"):
            get_benchmark("maze")

    def test_custom_map(self, tmp_path):
        path = tmp_path / "map.json"
        path.write_text(json.dumps({"grid": ["S..1"]}), encoding="utf-8")
        assert get_benchmark("hallway-mdp", path).params["grid"] == ["S..1"]
