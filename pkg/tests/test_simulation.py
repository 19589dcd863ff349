"""Models and engine: validation, transition oracle, determinism, FIFO."""

from __future__ import annotations

import json
import math
import random

import pytest
from hypothesis import given, strategies as st

from twinarch.errors import (DuplicateModel, InvalidSpec, NotFound,
                             NumericalFailure)
from twinarch.simulation import (KIND_TABLE, ModelEngine, ModelKind,
                                 ModelManager, ModelSpec, SimScenario,
                                 execute, register_kind, sim_timestamps,
                                 validate_scenario, validate_spec)
from twinarch.storage import Namespace, Query, SharedStorage

from conftest import ts


def traffic_spec(**params) -> ModelSpec:
    merged = {"capacity": 30.0, "inflow_gain": 1.0, "green_sensitivity": 1.5}
    merged.update(params)
    return ModelSpec(model_id="m1", kind="traffic-flow", parameters=merged,
                     inputs=("inflow",), outputs=("density",))


def scenario(**kwargs) -> SimScenario:
    base = dict(scenario_id="s1", model_id="m1",
                initial_state={"density": 0.0},
                input_series={"inflow": [50.0]}, horizon=5)
    base.update(kwargs)
    return SimScenario(**base)


# --- validation ------------------------------------------------------------

def test_spec_validation_rejections():
    cases = [
        ModelSpec("", "traffic-flow", {"capacity": 30.0}),
        ModelSpec("m", "unknown-kind", {}),
        ModelSpec("m", "traffic-flow", {"capacity": 30.0},
                  inputs=("x",), outputs=("x",)),
        ModelSpec("m", "traffic-flow", {"capacity": 30.0, "bogus": 1.0}),
        ModelSpec("m", "traffic-flow", {}),                   # capacity missing
        ModelSpec("m", "traffic-flow", {"capacity": 0.0}),
        ModelSpec("m", "traffic-flow", {"capacity": 30.0, "noise_sigma": -1.0}),
        ModelSpec("m", "traffic-flow", {"capacity": 30.0,
                                        "inflow_gain": float("inf")}),
    ]
    for spec in cases:
        with pytest.raises(InvalidSpec):
            validate_spec(spec)
    assert validate_spec(traffic_spec()).name == "traffic-flow"


def test_scenario_validation_rejections():
    spec = traffic_spec()
    cases = [
        scenario(horizon=0),
        scenario(step_size=0.0),
        scenario(overrides={"bogus": 1.0}),
        scenario(input_series={"nitrogen": [1.0]}),
        scenario(objective_metric="speed"),
        scenario(input_series={"inflow": [1.0, float("nan")]}),
        scenario(overrides={"capacity": -5.0}),   # merged params re-checked
    ]
    for sc in cases:
        with pytest.raises(InvalidSpec):
            validate_scenario(sc, spec)
    validate_scenario(scenario(objective_metric="density"), spec)


# --- transition oracle -------------------------------------------------------

def oracle_series(params: dict, sc: SimScenario) -> list[dict]:
    """Reference implementation of the traffic kind, written separately:
    delta = (gain * inflow - (capacity + sensitivity * extension)) / scale,
    plus seeded noise, clamped to [0, 1]."""
    merged = dict(params)
    merged.update(sc.overrides)
    capacity = merged["capacity"]
    gain = merged.get("inflow_gain", 1.0)
    effective = capacity + (merged.get("green_sensitivity", 0.0)
                            * merged.get("green_extension", 0.0))
    scale = merged.get("capacity_scale", capacity)
    sigma = merged.get("noise_sigma", 0.0)
    rng = random.Random(sc.seed)
    inflows = sc.input_series.get("inflow", [])
    density = float(sc.initial_state.get("density", 0.0))
    out = []
    for step in range(sc.horizon):
        if not inflows:
            inflow = 0.0
        else:
            inflow = float(inflows[min(step, len(inflows) - 1)])
        delta = (gain * inflow - effective) / scale
        if sigma > 0:
            delta += rng.gauss(0.0, sigma)
        density = min(1.0, max(0.0, density + delta))
        out.append({"density": density})
    return out


_params = st.fixed_dictionaries({
    "capacity": st.floats(1.0, 100.0),
    "inflow_gain": st.floats(0.0, 5.0),
    "green_sensitivity": st.floats(0.0, 5.0),
    "green_extension": st.floats(0.0, 60.0),
    "capacity_scale": st.floats(1.0, 100.0),
    "noise_sigma": st.floats(0.0, 0.5),
})
_scenarios = st.builds(
    scenario,
    initial_state=st.fixed_dictionaries({"density": st.floats(0.0, 1.0)}),
    input_series=st.fixed_dictionaries(
        {"inflow": st.lists(st.floats(0.0, 200.0), max_size=10)}),
    horizon=st.integers(1, 10),
    seed=st.integers(0, 2**32 - 1),
)


@given(params=_params, sc=_scenarios)
def test_execute_matches_oracle(params, sc):
    spec = ModelSpec("m1", "traffic-flow", params,
                     inputs=("inflow",), outputs=("density",))
    validate_spec(spec)
    result = execute(spec, sc, completed_at=ts(0))
    assert list(result.state_series) == oracle_series(params, sc)


@given(params=_params, sc=_scenarios)
def test_density_always_clamped(params, sc):
    spec = ModelSpec("m1", "traffic-flow", params,
                     inputs=("inflow",), outputs=("density",))
    result = execute(spec, sc, completed_at=ts(0))
    assert all(0.0 <= s["density"] <= 1.0 for s in result.state_series)


@given(params=_params, sc=_scenarios)
def test_execute_is_deterministic(params, sc):
    spec = ModelSpec("m1", "traffic-flow", params,
                     inputs=("inflow",), outputs=("density",))
    a = execute(spec, sc, completed_at=ts(0))
    b = execute(spec, sc, completed_at=ts(0))
    assert json.dumps(a.state_series, default=str) == json.dumps(
        b.state_series, default=str)


@given(inflow=st.floats(31.0, 59.0), start=st.floats(0.0, 1.0),
       horizon=st.integers(1, 8))
def test_green_extension_strictly_lowers_density(inflow, start, horizon):
    # base capacity 30, extended effective capacity 60: an inflow between
    # them pushes density up without the extension and down with it
    sc = scenario(initial_state={"density": start},
                  input_series={"inflow": [inflow]}, horizon=horizon)
    base = execute(traffic_spec(), sc, completed_at=ts(0))
    extended = execute(traffic_spec(green_extension=20.0), sc,
                       completed_at=ts(0))
    for lo, hi in zip(extended.state_series, base.state_series):
        assert lo["density"] <= hi["density"]
    if 0.0 < start < 1.0:
        assert extended.state_series[0]["density"] < \
            base.state_series[0]["density"]


def test_objective_is_final_value_of_named_output():
    result = execute(traffic_spec(), scenario(objective_metric="density"),
                     completed_at=ts(0))
    assert result.objective == result.state_series[-1]["density"]
    assert execute(traffic_spec(), scenario(), ts(0)).objective is None


def test_short_series_holds_last_value_and_empty_reads_zero():
    sc = scenario(input_series={"inflow": [60.0]}, horizon=3,
                  initial_state={"density": 0.0})
    result = execute(traffic_spec(), sc, completed_at=ts(0))
    # delta = (60 - 30) / 30 = 1 at every step: held input saturates
    assert [s["density"] for s in result.state_series] == [1.0, 1.0, 1.0]
    empty = execute(traffic_spec(), scenario(input_series={}, horizon=2,
                                             initial_state={"density": 1.0}),
                    completed_at=ts(0))
    # no inflow: delta = -30 / 30 = -1 drains the road in one step
    assert [s["density"] for s in empty.state_series] == [0.0, 0.0]


# --- numerical failure via a registered kind ---------------------------------

@pytest.fixture
def diverging_kind():
    kind = ModelKind(
        name="diverging-test",
        parameter_names=frozenset({"rate"}),
        required_parameters=frozenset(),
        validate=lambda params: None,
        make_transition=lambda params, rng: (
            lambda state, inputs: {"x": state.get("x", 1.0) * 1e200}),
    )
    register_kind(kind)
    yield kind
    KIND_TABLE.pop(kind.name, None)


def test_non_finite_state_raises_with_partial_series(diverging_kind):
    spec = ModelSpec("d1", "diverging-test", outputs=("x",))
    sc = SimScenario("s1", "d1", initial_state={"x": 1.0}, horizon=5)
    with pytest.raises(NumericalFailure) as exc_info:
        execute(spec, sc, completed_at=ts(0))
    err = exc_info.value
    assert "step 1" in str(err)
    assert list(err.partial_series) == [{"x": 1e200}]


# --- JSON round trips --------------------------------------------------------

def test_spec_and_scenario_round_trip_json():
    spec = traffic_spec()
    assert ModelSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec
    sc = scenario(entity_id="TLF01", objective_metric="density",
                  base_time=ts(7), overrides={"green_extension": 20.0},
                  seed=42)
    assert SimScenario.from_json(json.loads(json.dumps(sc.to_json()))) == sc
    minimal = SimScenario.from_json({"scenario_id": "a", "model_id": "b"})
    assert minimal.horizon == 1 and minimal.base_time is None


# --- manager -----------------------------------------------------------------

def test_manager_versions_models():
    mgr = ModelManager()
    created = mgr.create_model(traffic_spec())
    assert created.version == 1
    with pytest.raises(DuplicateModel):
        mgr.create_model(traffic_spec())
    updated = mgr.update_model(traffic_spec(capacity=40.0))
    assert updated.version == 2
    assert mgr.get_model("m1").parameters["capacity"] == 40.0
    with pytest.raises(NotFound):
        mgr.get_model("ghost")
    with pytest.raises(NotFound):
        mgr.update_model(ModelSpec("ghost", "traffic-flow",
                                   {"capacity": 1.0}))
    assert mgr.upsert_model(traffic_spec()).version == 3


# --- engine ------------------------------------------------------------------

@pytest.fixture
def engine():
    manager = ModelManager()
    manager.create_model(traffic_spec())
    storage = SharedStorage()
    eng = ModelEngine(manager, storage, clock=lambda: ts(9))
    yield eng, storage
    eng.shutdown()


def test_sync_execution_stores_result(engine):
    eng, storage = engine
    sc = scenario(entity_id="TLF01", objective_metric="density",
                  base_time=ts(3))
    result = eng.model_execution(sc)
    status = eng.get_sim_state("s1")
    assert status.status == "completed"
    assert status.step == sc.horizon
    assert status.latest_state == dict(result.state_series[-1])
    (rec,) = storage.crud_read(Query(namespace=Namespace.SIM_RESULTS))
    assert rec.key.entity_id == "TLF01"
    assert rec.key.name == "s1"
    assert rec.body["objective"] == result.objective
    assert rec.body["base_time"] == "2024-12-10T12:00:03Z"
    assert rec.body["completed_at"] == "2024-12-10T12:00:09Z"
    assert rec.body["model"]["model_id"] == "m1"
    assert rec.body["scenario"]["scenario_id"] == "s1"
    assert len(rec.body["series"]) == sc.horizon


def test_async_scenarios_complete_in_submission_order(engine):
    eng, storage = engine
    completed: list[str] = []
    eng.on_complete = lambda sc, result: completed.append(sc.scenario_id)
    for i in range(5):
        eng.scenario_sim(scenario(scenario_id=f"q{i}"))
    eng.drain()
    assert completed == [f"q{i}" for i in range(5)]
    assert all(eng.get_sim_state(f"q{i}").status == "completed"
               for i in range(5))
    with pytest.raises(NotFound):
        eng.get_sim_state("never-submitted")


def test_async_failure_keeps_worker_alive(engine, diverging_kind):
    eng, storage = engine
    eng.manager.create_model(ModelSpec("d1", "diverging-test", outputs=("x",)))
    eng.scenario_sim(SimScenario("bad", "d1", initial_state={"x": 1.0},
                                 horizon=5))
    eng.scenario_sim(scenario(scenario_id="good"))
    eng.drain()
    assert eng.get_sim_state("bad").status == "failed"
    assert "non-finite" in (eng.get_sim_state("bad").error or "")
    assert eng.get_sim_state("good").status == "completed"


def test_sim_timestamps_step_from_base():
    stamps = sim_timestamps(ts(0), step_size=2.0, horizon=3)
    assert stamps == [ts(2), ts(4), ts(6)]
