import pytest

import twinrt.config as config_mod
from twinrt.engine import Direction, TriggerKind
from twinrt.errors import ConfigParseError
from twinrt.gateway import ElementKind, PropertyAccess
from twinrt.models import ModelMode


class TestParseDemo:
    def test_structure(self, demo_config):
        assert demo_config.twin_id == "demo-tank"
        gw = demo_config.gateways[0]
        assert gw.descriptor.gateway_id == "tank01"
        assert gw.simulate.model == "tank"
        assert gw.simulate.params["valve"] == 0.5
        level = gw.descriptor.element("level")
        assert level.kind is ElementKind.PROPERTY
        assert level.access is PropertyAccess.READ_ONLY
        flush = gw.descriptor.element("flush")
        assert flush.kind is ElementKind.FUNCTION
        assert flush.arg_types == () and flush.result_type == "boolean"

    def test_language_and_model(self, demo_config):
        lang = demo_config.languages[0]
        assert lang.element_kinds == {"Tank"}
        assert lang.property_schemas["Tank"]["level"] == "real"
        assert lang.rules[0].rule_id == "level-within-capacity"
        model = demo_config.models[0]
        assert model.mode is ModelMode.ONLINE
        assert model.last_update is True
        main = model.elements[0]
        assert main.properties["capacity"].value == 10.0

    def test_mappings(self, demo_config):
        by_id = {m.mapping_id: m for m in demo_config.mappings}
        assert by_id["m-level"].direction is Direction.AS_TO_DT
        assert by_id["m-level"].schedule.every == 1
        assert by_id["m-valve"].direction is Direction.BIDIRECTIONAL

    def test_services(self, demo_config):
        kpi = demo_config.services[0]
        assert kpi.builtin == "kpi_monitor"
        assert kpi.grant.allows("read-model", "tank")
        assert kpi.descriptor().hooks[0].kind == "on-tick"

    def test_round_trip_structural_equality(self, demo_config):
        text = config_mod.dumps(demo_config)
        assert config_mod.loads(text) == demo_config

    def test_double_round_trip_is_stable(self, demo_config):
        once = config_mod.dumps(demo_config)
        twice = config_mod.dumps(config_mod.loads(once))
        assert once == twice


class TestParseForms:
    def test_int_valued_reals_are_fitted_to_the_schema(self):
        cfg = config_mod.loads("""
twin: t
languages:
  - id: lang
    kinds: {Node: {x: real, n: integer}}
managers: [{id: m, models: [mdl]}]
models:
  - id: mdl
    language: lang
    elements: [{id: e, kind: Node, properties: {x: 5, n: 5}}]
""")
        element = cfg.models[0].elements[0]
        assert element.properties["x"].value == 5.0
        assert isinstance(element.properties["x"].value, float)
        assert element.properties["n"].value == 5
        assert isinstance(element.properties["n"].value, int)

    def test_trigger_schedules(self):
        cfg = config_mod.loads("""
twin: t
gateways:
  - id: g
    endpoint: tcp://127.0.0.1:0
    elements:
      - {name: p, kind: property, type: real, access: rw}
      - {name: ev, kind: event, payload: real}
languages: [{id: lang, kinds: {Node: {x: real}}}]
managers: [{id: m, models: [mdl]}]
models:
  - id: mdl
    language: lang
    last_update: true
    elements: [{id: e, kind: Node, properties: {x: 0.0}}]
mappings:
  - id: on-change
    model: {model: mdl, element: e, property: x}
    gateway: {gateway: g, property: p}
    direction: as-to-dt
    schedule: {trigger: {gateway: g, property: p}}
  - id: on-event
    model: {model: mdl, element: e, property: x}
    gateway: {gateway: g, property: p}
    direction: as-to-dt
    schedule: {trigger: {gateway: g, event: ev}}
  - id: on-model
    model: {model: mdl, element: e, property: x}
    gateway: {gateway: g, property: p}
    direction: dt-to-as
    schedule: {trigger: {model: mdl, element: e, property: x}}
""")
        kinds = [m.schedule.trigger.kind for m in cfg.mappings]
        assert kinds == [TriggerKind.GATEWAY_CHANGE, TriggerKind.GATEWAY_EVENT,
                         TriggerKind.MODEL_CHANGE]

    def test_transform_parsing(self):
        cfg = config_mod.loads("""
twin: t
gateways:
  - id: g
    endpoint: tcp://127.0.0.1:0
    elements: [{name: p, kind: property, type: real, access: rw}]
languages: [{id: lang, kinds: {Node: {x: real}}}]
managers: [{id: m, models: [mdl]}]
models:
  - id: mdl
    language: lang
    elements: [{id: e, kind: Node, properties: {x: 0.0}}]
mappings:
  - id: scaled
    model: {model: mdl, element: e, property: x}
    gateway: {gateway: g, property: p}
    direction: as-to-dt
    schedule: {every: 2}
    transform: {scale: 0.001, offset: -1.5, unit: km}
""")
        t = cfg.mappings[0].transform
        assert (t.scale, t.offset, t.unit) == (0.001, -1.5, "km")


class TestParseErrors:
    @pytest.mark.parametrize("text,fragment", [
        ("twin: [1,2]", "twin"),
        ("gateways: {a: 1}", "expected a list"),
        ("gateways:\n  - {id: g}", "endpoint"),
        ("gateways:\n  - {id: g, endpoint: 'tcp://x:1', elements: [{name: p, kind: dial}]}",
         "unknown element kind"),
        ("gateways:\n  - {id: g, endpoint: 'tcp://x:1', elements: [{name: p, kind: property, type: vector}]}",
         "unknown value type"),
        ("mappings:\n  - {id: m}", "missing required field"),
        ("languages:\n  - {id: l, kinds: {N: {}}, rules: [{id: r, kind: N, property: p, op: between, bound: 1}]}",
         "unknown comparison"),
        ("services:\n  - {id: s, grant: [fly]}", "unknown capability"),
        ("services:\n  - {id: s, hooks: [on-fire]}", "unknown hook"),
    ])
    def test_bad_configs(self, text, fragment):
        with pytest.raises(ConfigParseError) as excinfo:
            config_mod.loads(text)
        assert fragment in str(excinfo.value)

    def test_bad_yaml(self):
        with pytest.raises(ConfigParseError):
            config_mod.loads("twin: [unclosed")

    def test_root_must_be_mapping(self):
        with pytest.raises(ConfigParseError):
            config_mod.loads("- a\n- b\n")

    def test_duplicate_ids(self):
        with pytest.raises(ConfigParseError) as excinfo:
            config_mod.loads("""
twin: t
languages:
  - {id: lang, kinds: {N: {}}}
  - {id: lang, kinds: {M: {}}}
""")
        assert "duplicate language" in str(excinfo.value)

    def test_bad_direction(self):
        with pytest.raises(ConfigParseError) as excinfo:
            config_mod.loads("""
twin: t
mappings:
  - id: m
    model: {model: a, element: b, property: c}
    gateway: {gateway: g, property: p}
    direction: sideways
    schedule: {every: 1}
""")
        assert "sideways" in str(excinfo.value)

    def test_bad_schedule(self):
        with pytest.raises(ConfigParseError):
            config_mod.loads("""
twin: t
mappings:
  - id: m
    model: {model: a, element: b, property: c}
    gateway: {gateway: g, property: p}
    direction: as-to-dt
    schedule: {whenever: true}
""")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigParseError):
            config_mod.load(tmp_path / "nope.yaml")

    def test_empty_document_is_a_bare_twin(self):
        cfg = config_mod.loads("")
        assert cfg.twin_id == "twin"
        assert cfg.gateways == () and cfg.mappings == ()
