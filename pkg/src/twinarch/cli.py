"""Command line entry point.

One binary, eight subcommands: catalog checks and exports, payload
parsing, journal inspection, shadow queries, one-shot simulations,
forecasting, telemetry ingestion, and full closed-loop runs. Exit
codes: 0 success, 2 configuration error, 3 conformance failure,
4 runtime failure. Log level comes from TWINARCH_LOG.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import sys
from datetime import timedelta
from pathlib import Path

from .catalog import (catalog_to_json, check_traceability, iso_report,
                      load_catalog, traceability_report)
from .clock import DEFAULT_EPOCH, format_rfc3339, parse_rfc3339
from .configs import load_manifest
from .errors import ConfigError, ParseError, TwinArchError
from .orchestrator import run_loop
from .services import Band, PredictorConfig, Predictor, DeviationDetector
from .shadows import ShadowManager
from .simulation import ModelSpec, SimScenario, execute, validate_spec
from .storage import Namespace, Query, SharedStorage
from .wire import Source, parse_ditto_thing, parse_dtdl_telemetry, \
    parse_ngsi_ld, parse_ultralight
from .adapters import AdapterConfig, Direction, P2DAdapter

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONFORMANCE = 3
EXIT_RUNTIME = 4

log = logging.getLogger("twinarch.cli")


def _setup_logging() -> None:
    level = os.environ.get("TWINARCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _read_input(path: str | None) -> str:
    if path is None or path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _parse_map(pairs: list[str]) -> dict[str, str]:
    mapping = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key or not value:
            raise ConfigError(f"--map entries look like short=attribute, got {pair!r}")
        mapping[key] = value
    return mapping


# ---------------------------------------------------------------------------
# catalog / report
# ---------------------------------------------------------------------------

def cmd_catalog(args: argparse.Namespace) -> int:
    if args.iso_report:
        sys.stdout.write(iso_report("text"))
        return EXIT_OK
    catalog = load_catalog()
    if args.check:
        report = check_traceability(catalog.matrix, catalog.components)
        print(f"entities: {len(catalog.entities)}")
        print(f"components: {len(catalog.components)}")
        print(f"matrix cells: {report.total_cells}")
        print(f"unmapped components: {len(report.unmapped_components)}")
        for name in report.unmapped_components:
            print(f"  UNMAPPED: {name}")
        print("verdict: Pass" if report.ok else "verdict: Fail")
        return EXIT_OK if report.ok else EXIT_CONFORMANCE
    sys.stdout.write(catalog_to_json())
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    render = iso_report if args.kind == "iso" else traceability_report
    sys.stdout.write(render(args.format))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parse / ingest
# ---------------------------------------------------------------------------

def _parse_payload(fmt: Source, payload: str, args: argparse.Namespace):
    observed_at = parse_rfc3339(args.observed_at)
    attribute_map = _parse_map(args.map) or None
    if fmt is Source.ULTRALIGHT:
        if not args.device:
            raise ConfigError("ultralight payloads need --device")
        return parse_ultralight(payload, device_id=args.device,
                                observed_at=observed_at,
                                attribute_map=attribute_map,
                                entity_type=args.entity_type)
    if fmt is Source.DITTO:
        return parse_ditto_thing(payload, observed_at=observed_at,
                                 entity_type=args.entity_type)
    if fmt is Source.DTDL:
        if not args.model:
            raise ConfigError("dtdl telemetry needs --model interface.json")
        model = Path(args.model).read_text(encoding="utf-8")
        return parse_dtdl_telemetry(model, payload, observed_at=observed_at)
    if fmt is Source.NGSI_LD:
        return parse_ngsi_ld(payload, observed_at=observed_at)
    raise ConfigError(f"unsupported input format {fmt.value!r}")


def cmd_parse(args: argparse.Namespace) -> int:
    fmt = Source(args.format)
    payload = _read_input(args.file)
    measurements = _parse_payload(fmt, payload, args)
    json.dump([m.to_json() for m in measurements], sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def _ingest_lines(adapter: P2DAdapter, lines, device: str, out) -> None:
    base = parse_rfc3339(os.environ.get("TWINARCH_EPOCH", "")) \
        if os.environ.get("TWINARCH_EPOCH") else DEFAULT_EPOCH
    for index, line in enumerate(lines):
        line = line.rstrip("\n")
        if not line:
            continue
        observed_at = base + timedelta(seconds=index)
        try:
            receipt = adapter.ingest(line, device, observed_at=observed_at)
        except ParseError as exc:
            out.write(json.dumps({"error": type(exc).__name__,
                                  "detail": str(exc)}) + "\n")
            out.flush()
            continue
        out.write(json.dumps({"decoded": receipt.decoded,
                              "stored": receipt.stored,
                              "rejected": receipt.rejected,
                              "dropped": receipt.dropped}) + "\n")
        out.flush()


def cmd_ingest(args: argparse.Namespace) -> int:
    fmt = Source(args.format)
    dtdl_model = (json.loads(Path(args.model).read_text(encoding="utf-8"))
                  if args.model else None)
    config = AdapterConfig(direction=Direction.P2D, format=fmt,
                           attribute_map=_parse_map(args.map),
                           entity_type=args.entity_type,
                           dtdl_model=dtdl_model)
    storage = SharedStorage(journal_path=args.journal)
    adapter = P2DAdapter(config, storage)
    try:
        if args.listen:
            _serve_socket(adapter, args)
        else:
            _ingest_lines(adapter, sys.stdin, args.device, sys.stdout)
    finally:
        storage.close()
    return EXIT_OK


def _serve_socket(adapter: P2DAdapter, args: argparse.Namespace) -> None:
    """Line-delimited ingestion over a local stream socket.

    Serves one connection at a time; exits after --connections clients
    (default 1) have disconnected, so harness drivers can run it as a
    bounded subprocess.
    """
    path = Path(args.listen)
    if path.exists():
        path.unlink()
    server = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        server.bind(str(path))
        server.listen(1)
        log.info("listening on %s", path)
        for _ in range(args.connections):
            conn, _addr = server.accept()
            try:
                with conn, conn.makefile("r", encoding="utf-8") as reader, \
                        conn.makefile("w", encoding="utf-8") as writer:
                    _ingest_lines(adapter, reader, args.device, writer)
            except (BrokenPipeError, ConnectionResetError) as exc:
                # data already ingested stays ingested; only the receipt
                # stream to this client is lost
                log.warning("client disconnected early: %s", exc)
    finally:
        server.close()
        if path.exists():
            path.unlink()


# ---------------------------------------------------------------------------
# store / shadow / service (journal-backed, read only)
# ---------------------------------------------------------------------------

def _replayed(journal: str) -> SharedStorage:
    if not Path(journal).exists():
        raise ConfigError(f"journal not found: {journal}")
    return SharedStorage.replay(journal)


def cmd_store_dump(args: argparse.Namespace) -> int:
    storage = _replayed(args.journal)
    try:
        namespace = Namespace(args.namespace)
    except ValueError as exc:
        raise ConfigError(
            f"unknown namespace {args.namespace!r}; one of "
            f"{sorted(n.value for n in Namespace)}") from exc
    for doc in storage.dump(namespace):
        sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_shadow_get(args: argparse.Namespace) -> int:
    storage = _replayed(args.journal)
    manager = ShadowManager(storage)
    manager.rebuild_index()
    time_from = parse_rfc3339(args.time_from) if args.time_from else None
    time_to = parse_rfc3339(args.time_to) if args.time_to else None
    shadows = manager.get_shadow(type_name=args.type, entity_id=args.entity,
                                 time_from=time_from, time_to=time_to)
    docs = [{
        "shadow_id": s.shadow_id,
        "type": s.type.name,
        "entity_id": s.entity_id,
        "created_at": format_rfc3339(s.created_at),
        "trace": [{"observed_at": format_rfc3339(p.observed_at),
                   "attribute": p.attribute, "value": p.value,
                   "late": p.late} for p in s.trace],
    } for s in shadows]
    json.dump(docs, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_service_predict(args: argparse.Namespace) -> int:
    storage = _replayed(args.journal)
    manager = ShadowManager(storage)
    manager.rebuild_index()
    config = PredictorConfig(method=args.method, window=args.window)
    predictor = Predictor(manager, config)
    prediction = predictor.prediction(args.entity, args.horizon)
    doc: dict = {
        "entity_id": prediction.entity_id,
        "method": prediction.method,
        "horizon": args.horizon,
        "series": [[format_rfc3339(stamp), metrics]
                   for stamp, metrics in prediction.predicted_series],
    }
    if args.thresholds:
        bands_doc = json.loads(Path(args.thresholds).read_text(
            encoding="utf-8"))
        bands = {name: Band(lo=float(b["lo"]), hi=float(b["hi"]),
                            critical_multiplier=float(
                                b.get("critical_multiplier", 0.5)))
                 for name, b in bands_doc.get("bands", {}).items()}
        detector = DeviationDetector(bands)
        doc["deviations"] = [{
            "metric": d.metric, "value": d.value, "expected": d.expected,
            "severity": d.severity.value, "kind": d.kind.value,
            "detected_at": format_rfc3339(d.detected_at),
        } for d in detector.detect_deviation(prediction)]
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sim
# ---------------------------------------------------------------------------

def cmd_sim_run(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    if "scenario" in doc and "model" in doc:
        spec_doc, scenario_doc = doc["model"], doc["scenario"]
    else:
        if not args.model:
            raise ConfigError(
                "scenario file has no embedded model; pass --model spec.json")
        spec_doc = json.loads(Path(args.model).read_text(encoding="utf-8"))
        scenario_doc = doc
    spec = ModelSpec.from_json(spec_doc)
    scenario = SimScenario.from_json(scenario_doc)
    validate_spec(spec)
    completed_at = scenario.base_time or DEFAULT_EPOCH
    result = execute(spec, scenario, completed_at=completed_at)
    json.dump({
        "scenario_id": result.scenario_id,
        "series": [dict(state) for state in result.state_series],
        "objective": result.objective,
        "completed_at": format_rfc3339(result.completed_at),
    }, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.config, loop=args.loop)
    out_dir = manifest.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    journal = out_dir / "journal.jsonl"
    if journal.exists():
        journal.unlink()

    output, manager = run_loop(manifest, args.loop, seed=args.seed,
                               ticks=args.ticks, journal_path=journal,
                               check=args.check)
    try:
        output.tracer.write_jsonl(out_dir / "trace.jsonl")
        states = {entity: {"metrics": state.metrics,
                           "provenance": state.provenance.value,
                           "computed_at": format_rfc3339(state.computed_at)}
                  for entity, state in output.states.items()}
        (out_dir / "states.json").write_text(
            json.dumps(states, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        if output.plan is not None:
            plan = output.plan
            (out_dir / "plan.json").write_text(json.dumps({
                "entity_id": plan.entity_id,
                "actions": [{"name": a.name, "target": a.target,
                             "arguments": dict(a.arguments)}
                            for a in plan.actions],
                "expected_objective": plan.expected_objective,
                "scenario_ids": list(plan.scenario_ids),
                "deviation_id": plan.deviation_id,
            }, indent=2) + "\n", encoding="utf-8")
        print(f"loop: {args.loop}")
        print(f"ticks: {output.ticks_run}")
        print(f"trace events: {len(output.tracer.events)}")
        print(f"trace digest: {output.tracer.digest()}")
        if output.plan is not None:
            names = ", ".join(a.name for a in output.plan.actions)
            print(f"plan: {names} "
                  f"(objective {output.plan.expected_objective:.4f})")
        if args.check:
            report = output.report
            assert report is not None
            (out_dir / "conformance.txt").write_text(report.describe() + "\n",
                                                     encoding="utf-8")
            print(f"conformance: {'Pass' if report.ok else 'Fail'} "
                  f"({report.instances} instances of {report.template})")
            if not report.ok:
                print(report.describe())
                return EXIT_CONFORMANCE
        return EXIT_OK
    finally:
        manager.shutdown()


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinarch",
        description="digital twin runtime: catalogs, adapters, shadows, "
                    "simulation, and closed-loop runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("catalog", help="export or check the catalog")
    p.add_argument("--check", action="store_true",
                   help="verify traceability; exit 3 on failure")
    p.add_argument("--iso-report", action="store_true",
                   help="print the functional entity mapping")
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("report", help="emit a catalog report")
    p.add_argument("kind", choices=["iso", "traceability"])
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("parse", help="parse one payload to canonical JSON")
    p.add_argument("--format", required=True,
                   choices=["ultralight", "ditto", "dtdl", "ngsi-ld"])
    p.add_argument("--device", help="device id for formats without one")
    p.add_argument("--entity-type", default="Device")
    p.add_argument("--observed-at", default=format_rfc3339(DEFAULT_EPOCH),
                   help="timestamp for formats without one (RFC 3339)")
    p.add_argument("--map", action="append", default=[],
                   metavar="SHORT=ATTRIBUTE",
                   help="attribute rename, repeatable")
    p.add_argument("--model", help="DTDL interface file (dtdl only)")
    p.add_argument("file", nargs="?", help="payload file; default stdin")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("ingest",
                       help="ingest line-delimited payloads into a journal")
    p.add_argument("--format", required=True,
                   choices=["ultralight", "ditto", "dtdl", "ngsi-ld"])
    p.add_argument("--device", required=True)
    p.add_argument("--entity-type", default="Device")
    p.add_argument("--map", action="append", default=[],
                   metavar="SHORT=ATTRIBUTE")
    p.add_argument("--model", help="DTDL interface file (dtdl only)")
    p.add_argument("--journal", help="journal file to append to")
    p.add_argument("--listen", metavar="SOCKET",
                   help="serve a local stream socket instead of stdin")
    p.add_argument("--connections", type=int, default=1,
                   help="client connections to serve before exiting")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("store", help="inspect a journal")
    store_sub = p.add_subparsers(dest="store_command", required=True)
    d = store_sub.add_parser("dump", help="replay and dump one namespace")
    d.add_argument("--journal", required=True)
    d.add_argument("--namespace", required=True)
    d.set_defaults(func=cmd_store_dump)

    p = sub.add_parser("shadow", help="query shadows from a journal")
    shadow_sub = p.add_subparsers(dest="shadow_command", required=True)
    g = shadow_sub.add_parser("get")
    g.add_argument("--journal", required=True)
    g.add_argument("--type", help="shadow type name")
    g.add_argument("--entity", help="entity id")
    g.add_argument("--from", dest="time_from", help="RFC 3339 inclusive")
    g.add_argument("--to", dest="time_to", help="RFC 3339 exclusive")
    g.set_defaults(func=cmd_shadow_get)

    p = sub.add_parser("sim", help="run one scenario")
    sim_sub = p.add_subparsers(dest="sim_command", required=True)
    r = sim_sub.add_parser("run")
    r.add_argument("--scenario", required=True,
                   help="scenario JSON, optionally {model, scenario}")
    r.add_argument("--model", help="model spec JSON")
    r.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("service", help="analytics over a journal")
    service_sub = p.add_subparsers(dest="service_command", required=True)
    f = service_sub.add_parser("predict")
    f.add_argument("--journal", required=True)
    f.add_argument("--entity", required=True)
    f.add_argument("--horizon", type=int, required=True)
    f.add_argument("--method", default="linear",
                   choices=["linear", "last-value", "moving-average"])
    f.add_argument("--window", type=int, default=10)
    f.add_argument("--thresholds", help="bands JSON to also detect deviations")
    f.set_defaults(func=cmd_service_predict)

    p = sub.add_parser("run", help="execute one closed loop")
    p.add_argument("--loop", required=True,
                   choices=["monitoring", "prediction"])
    p.add_argument("--config", required=True, help="run manifest JSON")
    p.add_argument("--ticks", type=int, help="override the manifest tick count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--check", action="store_true",
                   help="check the trace against the sequence template")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TwinArchError, OSError, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
