"""Digital models and their execution engine.

Models are discrete-step transition functions registered by kind;
scenarios run a model for a fixed horizon from an initial state,
feeding time-indexed input series (last value held). Execution is
deterministic for a fixed (spec, scenario, seed): the only randomness
is the scenario seed, consumed by kinds that opt into noise.

The built-in ``traffic-flow`` kind tracks one state variable,
``density`` in [0, 1]:

    effective_capacity = capacity + green_sensitivity * green_extension
    density' = clamp(density + (inflow_gain * inflow - effective_capacity)
                     / capacity_scale, 0, 1)

``capacity_scale`` defaults to ``capacity``; an optional
``noise_sigma`` adds seeded Gaussian jitter to the increment before
clamping.
"""

from __future__ import annotations

import math
import queue
import random
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Callable

from .clock import format_rfc3339
from .errors import (DuplicateModel, InvalidSpec, NotFound, NumericalFailure)
from .storage import Namespace, RecordKey, SharedStorage

State = dict[str, float]
Transition = Callable[[State, State], State]


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    kind: str
    parameters: dict[str, float] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def to_json(self) -> dict:
        return {"model_id": self.model_id, "kind": self.kind,
                "parameters": dict(self.parameters),
                "inputs": list(self.inputs), "outputs": list(self.outputs),
                "version": self.version}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelSpec":
        return cls(model_id=doc["model_id"], kind=doc["kind"],
                   parameters=dict(doc.get("parameters", {})),
                   inputs=tuple(doc.get("inputs", ())),
                   outputs=tuple(doc.get("outputs", ())),
                   version=int(doc.get("version", 1)))


@dataclass(frozen=True)
class SimScenario:
    scenario_id: str
    model_id: str
    initial_state: dict[str, float] = field(default_factory=dict)
    input_series: dict[str, list[float]] = field(default_factory=dict)
    horizon: int = 1
    step_size: float = 1.0
    overrides: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    entity_id: str | None = None       # which twin the result belongs to
    objective_metric: str | None = None
    base_time: datetime | None = None

    def to_json(self) -> dict:
        doc: dict = {"scenario_id": self.scenario_id,
                     "model_id": self.model_id,
                     "initial_state": dict(self.initial_state),
                     "input_series": {k: list(v)
                                      for k, v in self.input_series.items()},
                     "horizon": self.horizon, "step_size": self.step_size,
                     "overrides": dict(self.overrides), "seed": self.seed}
        if self.entity_id is not None:
            doc["entity_id"] = self.entity_id
        if self.objective_metric is not None:
            doc["objective_metric"] = self.objective_metric
        if self.base_time is not None:
            doc["base_time"] = format_rfc3339(self.base_time)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SimScenario":
        from .clock import parse_rfc3339
        base_time = doc.get("base_time")
        return cls(scenario_id=doc["scenario_id"], model_id=doc["model_id"],
                   initial_state=dict(doc.get("initial_state", {})),
                   input_series={k: list(v) for k, v in
                                 doc.get("input_series", {}).items()},
                   horizon=int(doc.get("horizon", 1)),
                   step_size=float(doc.get("step_size", 1.0)),
                   overrides=dict(doc.get("overrides", {})),
                   seed=int(doc.get("seed", 0)),
                   entity_id=doc.get("entity_id"),
                   objective_metric=doc.get("objective_metric"),
                   base_time=parse_rfc3339(base_time) if base_time else None)


@dataclass(frozen=True)
class SimResult:
    scenario_id: str
    state_series: tuple[State, ...]
    objective: float | None
    completed_at: datetime


@dataclass
class SimStatus:
    scenario_id: str
    status: str                     # queued | running | completed | failed
    step: int = 0
    latest_state: State | None = None
    result: SimResult | None = None
    error: str | None = None


# ---------------------------------------------------------------------------
# Model kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelKind:
    name: str
    parameter_names: frozenset[str]
    required_parameters: frozenset[str]
    validate: Callable[[dict], None]
    make_transition: Callable[[dict, random.Random], Transition]


def _validate_traffic_params(params: dict) -> None:
    capacity = params.get("capacity")
    if not isinstance(capacity, (int, float)) or capacity <= 0:
        raise InvalidSpec(f"capacity must be > 0, got {capacity!r}")
    scale = params.get("capacity_scale", capacity)
    if not isinstance(scale, (int, float)) or scale <= 0:
        raise InvalidSpec(f"capacity_scale must be > 0, got {scale!r}")
    sigma = params.get("noise_sigma", 0.0)
    if not isinstance(sigma, (int, float)) or sigma < 0:
        raise InvalidSpec(f"noise_sigma must be >= 0, got {sigma!r}")
    for name in ("inflow_gain", "green_sensitivity", "green_extension"):
        value = params.get(name, 0.0)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise InvalidSpec(f"{name} must be a finite number, got {value!r}")


def _make_traffic_transition(params: dict, rng: random.Random) -> Transition:
    capacity = float(params["capacity"])
    inflow_gain = float(params.get("inflow_gain", 1.0))
    sensitivity = float(params.get("green_sensitivity", 0.0))
    extension = float(params.get("green_extension", 0.0))
    scale = float(params.get("capacity_scale", capacity))
    sigma = float(params.get("noise_sigma", 0.0))
    effective_capacity = capacity + sensitivity * extension

    def transition(state: State, inputs: State) -> State:
        inflow = float(inputs.get("inflow", 0.0))
        delta = (inflow_gain * inflow - effective_capacity) / scale
        if sigma > 0:
            delta += rng.gauss(0.0, sigma)
        density = min(1.0, max(0.0, float(state.get("density", 0.0)) + delta))
        return {"density": density}

    return transition


TRAFFIC_FLOW_KIND = ModelKind(
    name="traffic-flow",
    parameter_names=frozenset({"capacity", "inflow_gain", "green_sensitivity",
                               "green_extension", "capacity_scale",
                               "noise_sigma"}),
    required_parameters=frozenset({"capacity"}),
    validate=_validate_traffic_params,
    make_transition=_make_traffic_transition,
)

KIND_TABLE: dict[str, ModelKind] = {TRAFFIC_FLOW_KIND.name: TRAFFIC_FLOW_KIND}


def register_kind(kind: ModelKind) -> None:
    KIND_TABLE[kind.name] = kind


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_spec(spec: ModelSpec) -> ModelKind:
    if not spec.model_id:
        raise InvalidSpec("model_id must be non-empty")
    kind = KIND_TABLE.get(spec.kind)
    if kind is None:
        raise InvalidSpec(f"unknown model kind {spec.kind!r}")
    overlap = set(spec.inputs) & set(spec.outputs)
    if overlap:
        raise InvalidSpec(f"inputs and outputs overlap: {sorted(overlap)}")
    unknown = set(spec.parameters) - kind.parameter_names
    if unknown:
        raise InvalidSpec(f"unknown parameters for {spec.kind}: {sorted(unknown)}")
    missing = kind.required_parameters - set(spec.parameters)
    if missing:
        raise InvalidSpec(f"missing parameters for {spec.kind}: {sorted(missing)}")
    kind.validate(spec.parameters)
    return kind


def validate_scenario(scenario: SimScenario, spec: ModelSpec) -> None:
    if not isinstance(scenario.horizon, int) or scenario.horizon < 1:
        raise InvalidSpec(f"horizon must be >= 1, got {scenario.horizon!r}")
    if scenario.step_size <= 0:
        raise InvalidSpec(f"step_size must be > 0, got {scenario.step_size!r}")
    stray = set(scenario.overrides) - set(spec.parameters) - (
        KIND_TABLE[spec.kind].parameter_names)
    if stray:
        raise InvalidSpec(f"overrides for unknown parameters: {sorted(stray)}")
    stray_inputs = set(scenario.input_series) - set(spec.inputs)
    if stray_inputs:
        raise InvalidSpec(f"series for unknown inputs: {sorted(stray_inputs)}")
    if (scenario.objective_metric is not None
            and scenario.objective_metric not in spec.outputs):
        raise InvalidSpec(
            f"objective metric {scenario.objective_metric!r} is not an output")
    for name, series in scenario.input_series.items():
        for v in series:
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidSpec(f"non-finite value in series {name!r}")
    merged = dict(spec.parameters)
    merged.update(scenario.overrides)
    KIND_TABLE[spec.kind].validate(merged)


def _input_at(scenario: SimScenario, step: int) -> State:
    # hold the last value when a series is shorter than the horizon
    inputs: State = {}
    for name, series in scenario.input_series.items():
        if not series:
            inputs[name] = 0.0
        elif step < len(series):
            inputs[name] = float(series[step])
        else:
            inputs[name] = float(series[-1])
    return inputs


def execute(spec: ModelSpec, scenario: SimScenario,
            completed_at: datetime,
            step_hook: Callable[[int, State], None] | None = None) -> SimResult:
    """Run the step loop; pure apart from the optional hook."""
    params = dict(spec.parameters)
    params.update(scenario.overrides)
    kind = KIND_TABLE[spec.kind]
    rng = random.Random(scenario.seed)
    transition = kind.make_transition(params, rng)
    state: State = {k: float(v) for k, v in scenario.initial_state.items()}
    series: list[State] = []
    for step in range(scenario.horizon):
        state = transition(state, _input_at(scenario, step))
        for name, value in state.items():
            if not math.isfinite(value):
                raise NumericalFailure(
                    f"non-finite {name}={value!r} at step {step}",
                    partial_series=tuple(series))
        series.append(dict(state))
        if step_hook is not None:
            step_hook(step + 1, state)
    objective = None
    if scenario.objective_metric is not None:
        objective = series[-1].get(scenario.objective_metric)
    return SimResult(scenario_id=scenario.scenario_id,
                     state_series=tuple(series), objective=objective,
                     completed_at=completed_at)


# ---------------------------------------------------------------------------
# Manager and engine
# ---------------------------------------------------------------------------

class ModelManager:
    """Registry of model specs with versioned updates."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._models: dict[str, ModelSpec] = {}

    def create_model(self, spec: ModelSpec) -> ModelSpec:
        validate_spec(spec)
        with self._lock:
            if spec.model_id in self._models:
                raise DuplicateModel(f"model {spec.model_id!r} already exists")
            spec = replace(spec, version=1)
            self._models[spec.model_id] = spec
            return spec

    def update_model(self, spec: ModelSpec) -> ModelSpec:
        validate_spec(spec)
        with self._lock:
            current = self._models.get(spec.model_id)
            if current is None:
                raise NotFound(f"no model {spec.model_id!r}")
            spec = replace(spec, version=current.version + 1)
            self._models[spec.model_id] = spec
            return spec

    def upsert_model(self, spec: ModelSpec) -> ModelSpec:
        with self._lock:
            if spec.model_id in self._models:
                return self.update_model(spec)
            return self.create_model(spec)

    def get_model(self, model_id: str) -> ModelSpec:
        with self._lock:
            spec = self._models.get(model_id)
        if spec is None:
            raise NotFound(f"no model {model_id!r}")
        return spec


class ModelEngine:
    """FIFO scenario executor over a single worker thread.

    One worker keeps completion order equal to submission order, which
    the conformance checks rely on. Completed results are committed to
    the SimResults namespace.
    """

    def __init__(self, manager: ModelManager, storage: SharedStorage | None,
                 clock: Callable[[], datetime] | None = None) -> None:
        self.manager = manager
        self.storage = storage
        self._clock = clock or (lambda: datetime.now().astimezone())
        self._queue: "queue.Queue[SimScenario | None]" = queue.Queue()
        self._lock = threading.RLock()
        self._status: dict[str, SimStatus] = {}
        self.on_complete: Callable[[SimScenario, SimResult], None] | None = None
        self._worker = threading.Thread(target=self._run, daemon=True,
                                        name="model-engine")
        self._worker.start()

    # -- synchronous path ------------------------------------------------------

    def model_execution(self, scenario: SimScenario,
                        step_hook: Callable[[int, State], None] | None = None,
                        ) -> SimResult:
        """Validate and run one scenario to completion, then store it."""
        spec = self.manager.get_model(scenario.model_id)
        validate_scenario(scenario, spec)
        with self._lock:
            status = SimStatus(scenario_id=scenario.scenario_id,
                               status="running")
            self._status[scenario.scenario_id] = status

        def hook(step: int, state: State) -> None:
            with self._lock:
                status.step = step
                status.latest_state = dict(state)
            if step_hook is not None:
                step_hook(step, state)

        try:
            result = execute(spec, scenario, completed_at=self._clock(),
                             step_hook=hook)
        except NumericalFailure as exc:
            with self._lock:
                status.status = "failed"
                status.error = str(exc)
            raise
        with self._lock:
            status.status = "completed"
            status.result = result
            status.latest_state = dict(result.state_series[-1])
            status.step = scenario.horizon
        self._store_result(spec, scenario, result)
        if self.on_complete is not None:
            self.on_complete(scenario, result)
        return result

    def _store_result(self, spec: ModelSpec, scenario: SimScenario,
                      result: SimResult) -> None:
        if self.storage is None:
            return
        base_time = scenario.base_time or result.completed_at
        key = RecordKey(namespace=Namespace.SIM_RESULTS,
                        entity_id=scenario.entity_id or scenario.model_id,
                        name=scenario.scenario_id,
                        observed_at=result.completed_at)
        self.storage.upsert(key, {
            "scenario": scenario.to_json(),
            "model": spec.to_json(),
            "series": [dict(s) for s in result.state_series],
            "objective": result.objective,
            "base_time": format_rfc3339(base_time),
            "completed_at": format_rfc3339(result.completed_at)})

    # -- asynchronous path -------------------------------------------------------

    def scenario_sim(self, scenario: SimScenario) -> str:
        """Queue a scenario; FIFO execution on the worker."""
        spec = self.manager.get_model(scenario.model_id)
        validate_scenario(scenario, spec)
        with self._lock:
            self._status[scenario.scenario_id] = SimStatus(
                scenario_id=scenario.scenario_id, status="queued")
        self._queue.put(scenario)
        return scenario.scenario_id

    def _run(self) -> None:
        while True:
            scenario = self._queue.get()
            if scenario is None:
                self._queue.task_done()
                break
            try:
                self.model_execution(scenario)
            except Exception as exc:           # keep the worker alive
                with self._lock:
                    status = self._status.get(scenario.scenario_id)
                    if status is not None:
                        status.status = "failed"
                        status.error = str(exc)
            finally:
                self._queue.task_done()

    def get_sim_state(self, scenario_id: str) -> SimStatus:
        with self._lock:
            status = self._status.get(scenario_id)
            if status is None:
                raise NotFound(f"no scenario {scenario_id!r}")
            return status

    def drain(self, timeout: float = 30.0) -> None:
        """Block until all queued scenarios have completed."""
        deadline = time.monotonic() + timeout
        while self._queue.unfinished_tasks:
            if time.monotonic() >= deadline:
                raise TimeoutError("model engine did not drain in time")
            time.sleep(0.001)

    def shutdown(self) -> None:
        self._queue.put(None)
        self._worker.join(timeout=5.0)


def sim_timestamps(base_time: datetime, step_size: float,
                   horizon: int) -> list[datetime]:
    """Timestamp of each simulated step: base + (i+1) * step_size."""
    return [base_time + timedelta(seconds=step_size * (i + 1))
            for i in range(horizon)]
