import subprocess
import sys
import time

import pytest

from helpers import start_tank, tank_descriptor

from twinrt.asset import AssetControl, EchoModel, TankModel, build_model, parse_param
from twinrt.errors import NoSuchElement, ProtocolError, ReadOnlyViolation, SchemaViolation
from twinrt.gateway import connect


def euler_levels(steps: int, dt: float, valve: float, inflow: float = 1.0,
                 outflow: float = 0.0, level: float = 0.0,
                 capacity: float = 10.0) -> list[float]:
    """Independent fixed-step Euler oracle for the tank dynamics."""
    out = []
    for _ in range(steps):
        level = level + dt * (inflow * valve - outflow)
        level = min(max(level, 0.0), capacity)
        out.append(level)
    return out


class TestTankModel:
    def test_dynamics_match_euler_oracle_exactly(self):
        tank = TankModel(valve=0.7, inflow=1.2, outflow=0.1)
        got = []
        for _ in range(50):
            tank.step(0.1)
            got.append(tank.level)
        assert got == euler_levels(50, 0.1, valve=0.7, inflow=1.2, outflow=0.1)

    def test_level_clamps_at_capacity_and_zero(self):
        tank = TankModel(valve=1.0, capacity=1.0)
        for _ in range(20):
            tank.step(0.1)
        assert tank.level == 1.0
        tank.valve = 0.0
        tank.outflow = 1.0
        for _ in range(20):
            tank.step(0.1)
        assert tank.level == 0.0

    def test_overflow_event_only_on_upward_crossing(self):
        tank = TankModel(valve=1.0, overflow_level=0.25)
        tank.step(0.1)
        tank.step(0.1)
        assert tank.pop_events() == []
        tank.step(0.1)  # 0.3 >= 0.25: crossing
        assert tank.pop_events() == [("overflow", tank.level)]
        tank.step(0.1)  # still above: no repeat
        assert tank.pop_events() == []

    def test_flush_resets_level(self):
        tank = TankModel(level=5.0)
        assert tank.invoke("flush", []) is True
        assert tank.level == 0.0

    def test_write_access_control(self):
        tank = TankModel()
        with pytest.raises(ReadOnlyViolation):
            tank.write("level", 1.0)
        tank.write("valve", 0.5)
        assert tank.valve == 0.5

    def test_force_set_bypasses_access_but_not_schema(self):
        tank = TankModel()
        tank.force_set("level", 9.5)
        assert tank.level == 9.5
        with pytest.raises(SchemaViolation):
            tank.force_set("level", "high")

    def test_noise_is_seed_deterministic(self):
        a = TankModel(valve=1.0, noise=0.01, seed=42)
        b = TankModel(valve=1.0, noise=0.01, seed=42)
        for _ in range(10):
            a.step(0.1)
            b.step(0.1)
        assert a.level == b.level


class TestEchoModel:
    def test_properties_round_trip_all_types(self):
        echo = EchoModel()
        echo.write("pad", "abc")
        echo.write("gain", 2.5)
        echo.write("count", 7)
        echo.write("lit", True)
        assert echo.state() == {"pad": "abc", "gain": 2.5, "count": 7, "lit": True}

    def test_type_mismatches_rejected(self):
        echo = EchoModel()
        with pytest.raises(SchemaViolation):
            echo.write("count", 1.5)
        with pytest.raises(SchemaViolation):
            echo.write("lit", 1)

    def test_raise_event_validates(self):
        echo = EchoModel()
        echo.raise_event("pulse", 3)
        assert echo.pop_events() == [("pulse", 3)]
        with pytest.raises(SchemaViolation):
            echo.raise_event("pulse", "x")
        with pytest.raises(NoSuchElement):
            echo.raise_event("boom", 1)

    def test_div_produces_non_finite_floats(self):
        echo = EchoModel()
        assert echo.invoke("div", [1.0, 0.0]) == float("inf")
        nan = echo.invoke("div", [0.0, 0.0])
        assert nan != nan


class TestParams:
    @pytest.mark.parametrize("text,expected", [
        ("valve=0.5", ("valve", 0.5)),
        ("capacity=10", ("capacity", 10)),
        ("name=tank", ("name", "tank")),
        ("lit=true", ("lit", True)),
        ("lit=False", ("lit", False)),
    ])
    def test_parse_param(self, text, expected):
        assert parse_param(text) == expected

    def test_parse_param_requires_equals(self):
        with pytest.raises(ValueError):
            parse_param("valve")

    def test_build_model(self):
        tank = build_model("tank", seed=0, params={"valve": 0.25})
        assert isinstance(tank, TankModel) and tank.valve == 0.25
        with pytest.raises(ValueError):
            build_model("reactor", seed=0, params={})


class TestAssetControl:
    def test_control_ops_over_the_wire(self, tank_server):
        control = AssetControl(tank_server.endpoint)
        try:
            control.force_set("valve", 1.0)
            control.step(3)
            state = control.state()
            assert state["valve"] == 1.0
            assert state["level"] == pytest.approx(0.30000000000000004, abs=0)
            control.raise_event("overflow", 9.0)
        finally:
            control.close()

    def test_control_rejects_bad_element(self, tank_server):
        control = AssetControl(tank_server.endpoint)
        try:
            with pytest.raises(ProtocolError):
                control.force_set("pressure", 1.0)
        finally:
            control.close()


class TestTimestamps:
    def test_timestamp_is_steps_times_step_ms(self):
        server = start_tank(step_ms=250)
        try:
            assert server.timestamp == 0
            server.step(4)
            assert server.timestamp == 1000
        finally:
            server.close()


class TestAssetProcess:
    """The asset must be separately runnable; drive it as a real subprocess."""

    def _spawn(self, *args):
        proc = subprocess.Popen(
            [sys.executable, "-m", "twinrt.asset", "--listen", "tcp://127.0.0.1:0", *args],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        line = proc.stdout.readline().strip()
        assert line.startswith("listening "), line
        return proc, line.split(" ", 1)[1]

    def test_subprocess_serves_the_gateway_protocol(self):
        proc, endpoint = self._spawn("--model", "tank", "--step-ms", "100",
                                     "--seed", "1", "--param", "valve=1.0")
        try:
            handle = connect(tank_descriptor(endpoint))
            control = AssetControl(endpoint)
            control.step(2)
            assert handle.read_property("level").value == pytest.approx(0.2, abs=0)
            handle.close()
            control.close()
        finally:
            proc.terminate()
            proc.wait(timeout=5)

    def test_bad_param_is_a_usage_error(self):
        proc = subprocess.run(
            [sys.executable, "-m", "twinrt.asset", "--listen", "tcp://127.0.0.1:0",
             "--model", "tank", "--param", "thrust=9000"],
            capture_output=True, text=True)
        assert proc.returncode == 2
        assert "thrust" in proc.stderr

    def test_killed_process_disconnects_streams(self):
        proc, endpoint = self._spawn("--model", "tank")
        handle = connect(tank_descriptor(endpoint))
        stream = handle.observe_property("level")
        proc.kill()
        proc.wait(timeout=5)
        deadline = time.time() + 5
        while stream.end_cause is None and time.time() < deadline:
            time.sleep(0.01)
        assert stream.end_cause == "disconnected"
        handle.close()
