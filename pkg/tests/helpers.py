"""Shared builders for the test suite: assets, descriptors, and full rigs."""

from __future__ import annotations

from dataclasses import dataclass

from twinrt.asset import AssetServer, EchoModel, TankModel
from twinrt.data import DataManager
from twinrt.engine import Direction, Engine, Mapping, Schedule, Transform
from twinrt.gateway import (
    GatewayDescriptor,
    GatewayHandle,
    PropertyAccess,
    connect,
    event_decl,
    function_decl,
    property_decl,
)
from twinrt.models import (
    ModelElement,
    ModelingLanguage,
    ModelMode,
    ModelProperty,
    ModelRegistry,
    PropertyRule,
)

TANK_ELEMENTS = (
    property_decl("level", "real", PropertyAccess.READ_ONLY),
    property_decl("valve", "real", PropertyAccess.READ_WRITE),
    event_decl("overflow", "real"),
    function_decl("flush", [], "boolean"),
)

ECHO_ELEMENTS = (
    property_decl("pad", "text", PropertyAccess.READ_WRITE),
    property_decl("gain", "real", PropertyAccess.READ_WRITE),
    property_decl("count", "integer", PropertyAccess.READ_WRITE),
    property_decl("lit", "boolean", PropertyAccess.READ_WRITE),
    event_decl("pulse", "integer"),
    function_decl("echo", ["text"], "text"),
    function_decl("sum", ["real", "real"], "real"),
    function_decl("div", ["real", "real"], "real"),
)


def tank_descriptor(endpoint: str, gateway_id: str = "tank01") -> GatewayDescriptor:
    return GatewayDescriptor(gateway_id, endpoint, TANK_ELEMENTS)


def echo_descriptor(endpoint: str, gateway_id: str = "echo01") -> GatewayDescriptor:
    return GatewayDescriptor(gateway_id, endpoint, ECHO_ELEMENTS)


def start_tank(step_ms: int = 100, **params) -> AssetServer:
    return AssetServer(TankModel(**params), step_ms=step_ms)


def start_echo(step_ms: int = 100) -> AssetServer:
    return AssetServer(EchoModel(), step_ms=step_ms)


def tank_language() -> ModelingLanguage:
    return ModelingLanguage(
        language_id="tank-structure",
        element_kinds=frozenset({"Tank"}),
        property_schemas={"Tank": {"level": "real", "capacity": "real",
                                   "valve_target": "real"}},
        rules=(PropertyRule("level-within-capacity", "Tank", "level", "le",
                            other_property="capacity"),),
    )


def tank_elements(level: float = 0.0, capacity: float = 10.0,
                  valve_target: float = 0.0) -> list[ModelElement]:
    return [ModelElement("main", "Tank", {
        "level": ModelProperty("level", level),
        "capacity": ModelProperty("capacity", capacity),
        "valve_target": ModelProperty("valve_target", valve_target),
    })]


def build_registry(track_last_update: bool = True, online: bool = True) -> ModelRegistry:
    registry = ModelRegistry()
    registry.register_language(tank_language())
    registry.create_manager("plant")
    registry.create_model("plant", "tank", "tank-structure", tank_elements(),
                          track_last_update=track_last_update)
    if online:
        registry.set_mode("plant", "tank", ModelMode.ONLINE)
    return registry


@dataclass
class Rig:
    """A connected tank twin: asset server, gateway, registry, data, engine."""

    server: AssetServer
    handle: GatewayHandle
    registry: ModelRegistry
    data: DataManager
    engine: Engine

    def tick(self, count: int = 1, step_asset: bool = True):
        decisions = []
        for _ in range(count):
            if step_asset:
                self.server.step(1)
            decisions = self.engine.tick(self.engine.tick_count + 1)
        return decisions

    def close(self) -> None:
        self.engine.close()
        self.server.close()
        self.data.close()


def level_mapping(every: int = 1) -> Mapping:
    return Mapping("m-level", "tank", "main", "level", "tank01", "level",
                   Direction.AS_TO_DT, Schedule(every=every))


def valve_mapping(direction: Direction = Direction.BIDIRECTIONAL,
                  every: int = 1, transform: Transform = Transform()) -> Mapping:
    return Mapping("m-valve", "tank", "main", "valve_target", "tank01", "valve",
                   direction, Schedule(every=every), transform)


def build_rig(mappings=(), journal_path=None, step_ms: int = 100,
              track_last_update: bool = True, online: bool = True,
              **tank_params) -> Rig:
    registry = build_registry(track_last_update=track_last_update, online=online)
    data = DataManager(journal_path=journal_path, resolver=registry.resolve)
    engine = Engine(registry, data)
    server = start_tank(step_ms=step_ms, **tank_params)
    handle = connect(tank_descriptor(server.endpoint))
    engine.add_gateway(handle)
    for mapping in mappings:
        engine.add_mapping(mapping)
    return Rig(server=server, handle=handle, registry=registry, data=data, engine=engine)
