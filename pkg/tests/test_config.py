"""Run-config parsing and validation tests."""

import pytest

from obdhsim.config import (
    ConfigError,
    DeviceDescriptor,
    RunConfig,
    default_config,
    from_json,
    to_json,
)
from obdhsim.subsystem_sims import DeviceKind
from obdhsim.virtual_bus import LineMode, PortConfig


class TestDefaultConfig:
    def test_seven_devices_seven_ports(self):
        config = default_config()
        config.validate()
        assert len(config.roster) == 7
        assert len(config.ports) == 7
        assert [d.dev_id for d in config.roster] == [1, 2, 3, 4, 5, 6, 7]

    def test_kinds_follow_tested_roster(self):
        kinds = [d.kind for d in default_config().roster]
        assert kinds == [DeviceKind.WDE] * 3 + [DeviceKind.STS] * 2 + \
            [DeviceKind.BATTERY, DeviceKind.GPS]

    def test_mode_constraints_hold(self):
        for d in default_config().roster:
            if d.kind == DeviceKind.WDE:
                assert d.line_mode == LineMode.TTL
            if d.kind == DeviceKind.STS:
                assert d.line_mode == LineMode.RS422


class TestJsonRoundTrip:
    def test_round_trip_preserves_everything(self):
        config = default_config(store_path="x.dat", ground_listen="127.0.0.1:9999")
        config.roster[3].stream_hz = 20.0
        config.roster[0].poll_period_s = 0.5
        parsed = from_json(to_json(config))
        assert parsed.store_path == "x.dat"
        assert parsed.ground_listen == "127.0.0.1:9999"
        assert [d.dev_id for d in parsed.roster] == [d.dev_id for d in config.roster]
        assert parsed.roster[3].stream_hz == 20.0
        assert parsed.roster[0].poll_period_s == 0.5
        assert [p.port_id for p in parsed.ports] == [p.port_id for p in config.ports]
        parsed.validate()

    def test_invalid_json_rejected(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            from_json("{nope")

    def test_missing_roster_field_named(self):
        with pytest.raises(ConfigError, match="missing field"):
            from_json('{"roster": [{"dev_id": 1}]}')

    def test_ports_derived_from_roster_when_omitted(self):
        parsed = from_json('''{
            "roster": [{"dev_id": 1, "kind": "WDE", "port_id": "ttyOS0",
                        "line_mode": "TTL"}],
            "pacing_enabled": false
        }''')
        assert len(parsed.ports) == 1
        assert parsed.ports[0].mode == LineMode.TTL
        assert parsed.ports[0].pacing_enabled is False


class TestValidation:
    def _one_device(self, **overrides):
        fields = {"dev_id": 1, "name": "WDE 1", "kind": DeviceKind.WDE,
                  "port_id": "ttyOS0", "line_mode": LineMode.TTL}
        fields.update(overrides)
        return DeviceDescriptor(**fields)

    def test_dev_id_range(self):
        config = RunConfig(roster=[self._one_device(dev_id=8)])
        with pytest.raises(ConfigError, match="outside 1-7"):
            config.validate()

    def test_port_mode_mismatch_named(self):
        config = RunConfig(roster=[self._one_device()])
        config.ports[0].mode = LineMode.RS232
        with pytest.raises(ConfigError, match="does not match"):
            config.validate()

    def test_unknown_port_reference(self):
        config = RunConfig(roster=[self._one_device()])
        config.ports = [PortConfig("ttyOS9", LineMode.TTL)]
        with pytest.raises(ConfigError, match="unknown port"):
            config.validate()
