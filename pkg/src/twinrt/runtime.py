"""Assembles a running twin from a configuration and drives it.

The runtime hosts simulated assets declared in the configuration (binding
their listeners and rewriting ephemeral ports), connects all gateways,
builds the model registry and data manager, registers services, and then
ticks the engine either from a script or a timer. A control server speaking
the wire framing exposes mediated invoke/history/inspect to the CLI; all
control requests serialize with the tick loop through one lock.
"""

from __future__ import annotations

import threading
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

from .asset import AssetControl, AssetServer, build_model
from .config import TwinConfiguration
from .data import DataManager, DataRecord, selector_from_dict
from .engine import Engine, SyncDecision
from .errors import ProtocolError, TwinError
from .gateway import ValueSample, connect
from .models import ModelElement, ModelProperty, ModelRegistry, OperatorOutcome
from .services import (
    ApplyOperator,
    InvokeFunction,
    ServiceRequest,
    build_builtin,
    request_from_wire,
)
from .values import Value, canonical_json
from .wire import LineChannel, LineServer


class PassiveService:
    """Placeholder implementation for configured non-builtin services."""


def build_registry(config: TwinConfiguration) -> ModelRegistry:
    """Model registry for a configuration: languages, managers, models, delegations."""
    registry = ModelRegistry()
    for language in config.languages:
        registry.register_language(language)
    owners: dict[str, str] = {}
    for manager in config.managers:
        registry.create_manager(manager.manager_id)
        for model_id in manager.models:
            owners[model_id] = manager.manager_id
    for model in config.models:
        owner = owners.get(model.model_id)
        if owner is None:
            raise TwinError(f"model {model.model_id!r} has no responsible manager")
        elements = [ModelElement(element_id=e.element_id, kind=e.kind,
                                 properties={n: ModelProperty(n, p.value, p.property_type)
                                             for n, p in e.properties.items()})
                    for e in model.elements]
        registry.create_model(owner, model.model_id, model.language_id,
                              elements, track_last_update=model.last_update)
    for manager in config.managers:
        for delegation in manager.delegations:
            registry.add_delegation(manager.manager_id, delegation.operator,
                                    delegation.target, delegation.model_pattern)
    return registry


def inspect_config(config: TwinConfiguration) -> dict:
    """Offline structural report: no gateway connections, no journal opened."""
    registry = build_registry(config)
    for model in config.models:
        registry.set_mode(registry.owner_of(model.model_id), model.model_id, model.mode)
    return {
        "twin": config.twin_id,
        "tick": 0,
        "gateways": [
            {"id": gw.descriptor.gateway_id, "endpoint": gw.descriptor.endpoint,
             "elements": [d.name for d in gw.descriptor.elements],
             "simulated": gw.simulate is not None}
            for gw in config.gateways
        ],
        "models": {mid: registry.model(mid).to_dict() for mid in registry.models()},
        "mappings": [
            {"id": m.mapping_id, "direction": m.direction.value,
             "model": f"{m.model_id}/{m.element_id}.{m.property_name}",
             "gateway": f"{m.gateway_id}/{m.gateway_property}",
             "enabled": m.enabled}
            for m in sorted(config.mappings, key=lambda m: m.mapping_id)
        ],
        "services": [{"id": s.service_id, "enabled": True}
                     for s in sorted(config.services, key=lambda s: s.service_id)],
    }


class TwinRuntime:
    """One configured twin: assets, gateways, registry, data, engine, services."""

    def __init__(self, config: TwinConfiguration, journal_path: str | Path | None = None,
                 decision_sink: Callable[[dict], None] | None = None,
                 connect_timeout: float = 5.0):
        self.config = config
        self.lock = threading.RLock()
        self._assets: dict[str, AssetServer] = {}
        self._asset_controls: dict[str, AssetControl] = {}
        self._control_server: LineServer | None = None
        self.last_decisions: list[SyncDecision] = []

        self.registry = build_registry(config)

        journal = journal_path if journal_path is not None else config.data.journal
        self.data = DataManager(journal_path=journal, resolver=self.registry.resolve,
                                enforce_mandatory=config.data.mandatory_metadata,
                                allow_linkage=config.data.model_linkage)
        self.engine = Engine(self.registry, self.data, sink=decision_sink)

        try:
            self._start_gateways(connect_timeout)
            self._apply_modes()
            for mapping in config.mappings:
                self.engine.add_mapping(mapping)
            for service in config.services:
                impl = (build_builtin(service.builtin, service.params)
                        if service.builtin is not None else PassiveService())
                self.engine.register_service(service.descriptor(), impl)
        except Exception:
            self.close()
            raise

    def _start_gateways(self, connect_timeout: float) -> None:
        for gw in self.config.gateways:
            descriptor = gw.descriptor
            if gw.simulate is not None:
                model = build_model(gw.simulate.model, gw.simulate.seed,
                                    dict(gw.simulate.params))
                server = AssetServer(model, listen=descriptor.endpoint,
                                     step_ms=gw.simulate.step_ms)
                self._assets[descriptor.gateway_id] = server
                descriptor = replace(descriptor, endpoint=server.endpoint)
            self.engine.add_gateway(connect(descriptor, timeout=connect_timeout))

    def _apply_modes(self) -> None:
        # models are created Offline; the configuration decides the starting mode
        for model in self.config.models:
            owner = self.registry.owner_of(model.model_id)
            self.registry.set_mode(owner, model.model_id, model.mode)

    # --- driving ---

    def step_assets(self, count: int = 1) -> None:
        """Advance every asset's dynamics; stands in for the physical world.

        Runner-hosted assets are stepped directly; external ones over their
        simulation-control channel, so scripted runs behave identically
        either way.
        """
        for gateway_id in self._gateway_asset_ids():
            self._control(gateway_id).step(count)

    def tick(self) -> list[SyncDecision]:
        with self.lock:
            decisions = self.engine.tick(self.engine.tick_count + 1)
            self.last_decisions = decisions
            return decisions

    def advance(self, ticks: int = 1) -> None:
        """Scenario tick: assets step once, then the engine ticks."""
        for _ in range(ticks):
            self.step_assets(1)
            self.tick()

    def asset_set(self, gateway_id: str, prop: str, value: Value) -> None:
        decl = self._gateway_decl(gateway_id, prop)
        if decl is not None and decl.value_type == "real" and isinstance(value, int) \
                and not isinstance(value, bool):
            value = float(value)
        self._control(gateway_id).force_set(prop, value)

    def asset_raise(self, gateway_id: str, event: str, payload: Value) -> None:
        self._control(gateway_id).raise_event(event, payload)

    def asset_state(self, gateway_id: str) -> dict[str, Value]:
        return self._control(gateway_id).state()

    def _gateway_decl(self, gateway_id: str, element: str):
        gw = self.config.gateway(gateway_id)
        return gw.descriptor.element(element) if gw else None

    def _gateway_asset_ids(self) -> list[str]:
        return sorted(gw.descriptor.gateway_id for gw in self.config.gateways)

    def _control(self, gateway_id: str):
        server = self._assets.get(gateway_id)
        if server is not None:
            return server
        control = self._asset_controls.get(gateway_id)
        if control is None:
            gw = self.config.gateway(gateway_id)
            if gw is None:
                raise TwinError(f"no gateway {gateway_id!r} in configuration")
            control = AssetControl(gw.descriptor.endpoint)
            self._asset_controls[gateway_id] = control
        return control

    # --- mediated access ---

    def mediate_operator(self, request: ServiceRequest):
        with self.lock:
            return self.engine.mediate_operator_call(request)

    def model_edit(self, manager_id: str, operator_id: str, model_id: str,
                   args: dict[str, Value]):
        args = self._fit_operator_args(operator_id, model_id, args)
        return self.mediate_operator(ApplyOperator(manager_id, operator_id, model_id, args))

    def _fit_operator_args(self, operator_id: str, model_id: str,
                           args: dict[str, Value]) -> dict[str, Value]:
        if operator_id != "set_property" or not isinstance(args, dict):
            return args
        try:
            model = self.registry.model(model_id)
            element = model.elements[args["element"]]
            schema = self.registry.language(model.language_id).schema_for(element.kind)
            vtype = schema.get(args["property"])
        except (TwinError, KeyError):
            return args
        value = args.get("value")
        if vtype == "real" and isinstance(value, int) and not isinstance(value, bool):
            return dict(args, value=float(value))
        return args

    def model_value(self, model_id: str, element_id: str, prop: str) -> Value:
        return self.registry.property_value(model_id, element_id, prop)

    # --- control server ---

    def start_control(self, listen: str) -> str:
        self._control_server = LineServer(listen, self._serve_control)
        return self._control_server.endpoint

    def _serve_control(self, channel: LineChannel) -> None:
        while True:
            msg = channel.recv()
            rid = msg.get("id")
            try:
                reply = self._dispatch_control(msg)
            except TwinError as exc:
                reply = {"op": "error", "code": type(exc).__name__, "message": str(exc)}
            reply["id"] = rid
            channel.send(reply)

    def _dispatch_control(self, msg: dict) -> dict:
        op = msg.get("op")
        if op == "ctl.status":
            with self.lock:
                return {"op": "status", "twin": self.config.twin_id,
                        "tick": self.engine.tick_count}
        if op == "ctl.invoke":
            request = InvokeFunction(gateway_id=msg.get("gateway", ""),
                                     function=msg.get("function", ""),
                                     args=tuple(msg.get("args", [])))
            result = self.mediate_operator(request)
            return {"op": "result", "value": result}
        if op == "ctl.history":
            selector = selector_from_dict(msg.get("selector") or {})
            with self.lock:
                records = self.data.query(selector)
            return {"op": "records", "records": [r.to_dict() for r in records]}
        if op == "ctl.inspect":
            with self.lock:
                return {"op": "report", "report": self.inspect()}
        if op == "ctl.call":
            # out-of-process service path: same requests, same grant checks
            request = self._parse_request(msg)
            with self.lock:
                result = self.engine.mediate_service_call(msg.get("service", ""), request)
            return {"op": "result", "value": _wire_result(result)}
        raise ProtocolError(f"unknown control op {op!r}")

    @staticmethod
    def _parse_request(msg: dict) -> ServiceRequest:
        try:
            return request_from_wire(msg.get("request") or {})
        except ValueError as exc:
            raise ProtocolError(str(exc)) from exc

    def _effective_endpoint(self, gateway_id: str, declared: str) -> str:
        try:
            return self.engine.gateway(gateway_id).descriptor.endpoint
        except TwinError:
            return declared

    def inspect(self) -> dict:
        """Deterministic structural report of the running twin."""
        models = {}
        for model_id in self.registry.models():
            model = self.registry.model(model_id)
            models[model_id] = model.to_dict()
        return {
            "twin": self.config.twin_id,
            "tick": self.engine.tick_count,
            "gateways": [
                {"id": gw.descriptor.gateway_id,
                 "endpoint": self._effective_endpoint(gw.descriptor.gateway_id,
                                                      gw.descriptor.endpoint),
                 "elements": [d.name for d in gw.descriptor.elements],
                 "simulated": gw.simulate is not None}
                for gw in self.config.gateways
            ],
            "models": models,
            "mappings": [
                {"id": m.mapping_id, "direction": m.direction.value,
                 "model": f"{m.model_id}/{m.element_id}.{m.property_name}",
                 "gateway": f"{m.gateway_id}/{m.gateway_property}",
                 "enabled": m.enabled}
                for m in self.engine.mappings()
            ],
            "services": [
                {"id": sid, "enabled": self.engine.service_enabled(sid)}
                for sid in self.engine.services()
            ],
        }

    def close(self) -> None:
        if self._control_server is not None:
            self._control_server.close()
            self._control_server = None
        for control in self._asset_controls.values():
            control.close()
        self._asset_controls.clear()
        self.engine.close()
        for server in self._assets.values():
            server.close()
        self._assets.clear()
        self.data.close()


def _wire_result(result) -> Any:
    """Flatten a mediated-call result to its wire representation."""
    if isinstance(result, ValueSample):
        return {"value": result.value, "ts": result.asset_timestamp,
                "seq": result.sequence_no}
    if isinstance(result, OperatorOutcome):
        return {"model": result.model_id, "operator": result.operator_id,
                "applied_by": result.applied_by,
                "chain": list(result.delegation_chain), "tick": result.tick}
    if isinstance(result, list) and all(isinstance(r, DataRecord) for r in result):
        return [r.to_dict() for r in result]
    return result


class DecisionLog:
    """Writes one canonical JSON line per decision or service notice."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")

    def __call__(self, line: dict) -> None:
        self._fh.write(canonical_json(line) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def render_records_json(records: list[dict]) -> str:
    return "\n".join(canonical_json(r) for r in records) + ("\n" if records else "")


def render_records_table(records: list[dict]) -> str:
    """Render record dicts (DataRecord.to_dict form) as an aligned table."""
    if not records:
        return "(no records)\n"
    lines = [f"{'id':>5}  {'origin':<24} {'timeliness':<11} {'processing':<10} "
             f"{'tick':>5}  value"]
    for record in records:
        props = record.get("properties", {})
        origin = props.get("origin") or {}
        origin_text = origin.get("source", "?")
        if origin.get("id"):
            origin_text += f":{origin['id']}"
        tick = props.get("last-update")
        lines.append(f"{record['id']:>5}  {origin_text:<24} "
                     f"{str(props.get('timeliness') or '-'):<11} "
                     f"{str(props.get('processing') or '-'):<10} "
                     f"{tick if tick is not None else '-':>5}  "
                     f"{canonical_json(record['value'])}")
    return "\n".join(lines) + "\n"
