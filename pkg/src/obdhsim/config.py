"""Run configuration: device roster, port set, store path, ground link.

The config file is JSON (documented in the README).  Shape:

    {
      "store_path": "telemetry.dat",
      "ground_listen": "127.0.0.1:47600",
      "pacing_enabled": false,
      "seed": 0,
      "roster": [
        {"dev_id": 1, "name": "WDE 1", "kind": "WDE", "port_id": "ttyOS0",
         "line_mode": "TTL", "poll_period_s": null, "stream_hz": null},
        ...
      ],
      "ports": [ {"port_id": "ttyOS0", "mode": "TTL", "baud": 9600}, ... ]
    }

"ports" may be omitted: one port per roster entry is derived, using the
device's line mode.  The bundled default reproduces the seven-device
test roster (3 wheel drives, 2 star sensors, battery, GPS).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .subsystem_sims import DeviceKind
from .virtual_bus import LineMode, PortConfig


class ConfigError(ValueError):
    pass


# electrical interface required by each device kind
REQUIRED_MODE = {
    DeviceKind.WDE: LineMode.TTL,
    DeviceKind.STS: LineMode.RS422,
}


@dataclass
class DeviceDescriptor:
    dev_id: int
    name: str
    kind: DeviceKind
    port_id: str
    line_mode: LineMode
    poll_period_s: float | None = None   # OBDH housekeeping poll, off by default
    stream_hz: float | None = None       # unsolicited telemetry (STS)
    options: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    roster: list[DeviceDescriptor] = field(default_factory=list)
    ports: list[PortConfig] = field(default_factory=list)
    store_path: str = "telemetry.dat"
    ground_listen: str | None = "127.0.0.1:47600"
    pacing_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.ports:
            self.ports = [
                PortConfig(d.port_id, d.line_mode, pacing_enabled=self.pacing_enabled)
                for d in self.roster
            ]

    def validate(self) -> None:
        """Raise ConfigError naming the first violated constraint."""
        seen_dev: set[int] = set()
        seen_port: set[str] = set()
        for d in self.roster:
            if not 1 <= d.dev_id <= 7:
                raise ConfigError(f"dev_id {d.dev_id} outside 1-7")
            if d.dev_id in seen_dev:
                raise ConfigError(f"duplicate dev_id {d.dev_id}")
            seen_dev.add(d.dev_id)
            if d.port_id in seen_port:
                raise ConfigError(f'duplicate port "{d.port_id}"')
            seen_port.add(d.port_id)
            required = REQUIRED_MODE.get(d.kind)
            if required and d.line_mode != required:
                raise ConfigError(
                    f"device {d.dev_id} ({d.kind.value}) requires {required.value}, "
                    f"configured {d.line_mode.value}")
        port_ids = [p.port_id for p in self.ports]
        if len(set(port_ids)) != len(port_ids):
            dup = next(p for p in port_ids if port_ids.count(p) > 1)
            raise ConfigError(f'duplicate port "{dup}"')
        port_set = set(port_ids)
        for d in self.roster:
            if d.port_id not in port_set:
                raise ConfigError(f'device {d.dev_id} references unknown port "{d.port_id}"')
        by_id = {p.port_id: p for p in self.ports}
        for d in self.roster:
            if by_id[d.port_id].mode != d.line_mode:
                raise ConfigError(
                    f'device {d.dev_id} line mode {d.line_mode.value} does not match '
                    f'port "{d.port_id}" mode {by_id[d.port_id].mode.value}')


def default_config(store_path: str = "telemetry.dat",
                   ground_listen: str | None = "127.0.0.1:47600",
                   pacing_enabled: bool = True) -> RunConfig:
    """The bundled seven-device roster on ports ttyOS0..ttyOS6."""
    roster = [
        DeviceDescriptor(1, "WDE 1", DeviceKind.WDE, "ttyOS0", LineMode.TTL),
        DeviceDescriptor(2, "WDE 2", DeviceKind.WDE, "ttyOS1", LineMode.TTL),
        DeviceDescriptor(3, "WDE 3", DeviceKind.WDE, "ttyOS2", LineMode.TTL),
        DeviceDescriptor(4, "STS 1", DeviceKind.STS, "ttyOS3", LineMode.RS422),
        DeviceDescriptor(5, "STS 2", DeviceKind.STS, "ttyOS4", LineMode.RS422),
        DeviceDescriptor(6, "Battery (sim)", DeviceKind.BATTERY, "ttyOS5", LineMode.RS232),
        DeviceDescriptor(7, "GPS (sim)", DeviceKind.GPS, "ttyOS6", LineMode.RS232),
    ]
    return RunConfig(roster=roster, store_path=store_path,
                     ground_listen=ground_listen, pacing_enabled=pacing_enabled)


def _device_from_json(obj: dict) -> DeviceDescriptor:
    try:
        kind = DeviceKind(obj["kind"])
        mode = LineMode(obj["line_mode"])
        return DeviceDescriptor(
            dev_id=int(obj["dev_id"]),
            name=str(obj.get("name", f"device {obj['dev_id']}")),
            kind=kind,
            port_id=str(obj["port_id"]),
            line_mode=mode,
            poll_period_s=obj.get("poll_period_s"),
            stream_hz=obj.get("stream_hz"),
            options=obj.get("options", {}),
        )
    except KeyError as e:
        raise ConfigError(f"roster entry missing field {e}") from e
    except ValueError as e:
        raise ConfigError(f"bad roster entry: {e}") from e


def from_json(text: str) -> RunConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    pacing = bool(obj.get("pacing_enabled", True))
    ports = []
    for p in obj.get("ports", []):
        try:
            ports.append(PortConfig(
                port_id=str(p["port_id"]),
                mode=LineMode(p.get("mode", "RS232")),
                baud=int(p.get("baud", 9600)),
                pacing_enabled=bool(p.get("pacing_enabled", pacing)),
            ))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad port entry: {e}") from e
    return RunConfig(
        roster=[_device_from_json(d) for d in obj.get("roster", [])],
        ports=ports,
        store_path=obj.get("store_path", "telemetry.dat"),
        ground_listen=obj.get("ground_listen"),
        pacing_enabled=pacing,
        seed=int(obj.get("seed", 0)),
    )


def to_json(config: RunConfig) -> str:
    obj = {
        "store_path": config.store_path,
        "ground_listen": config.ground_listen,
        "pacing_enabled": config.pacing_enabled,
        "seed": config.seed,
        "roster": [
            {
                "dev_id": d.dev_id, "name": d.name, "kind": d.kind.value,
                "port_id": d.port_id, "line_mode": d.line_mode.value,
                "poll_period_s": d.poll_period_s, "stream_hz": d.stream_hz,
            }
            for d in config.roster
        ],
        "ports": [
            {
                "port_id": p.port_id, "mode": p.mode.value, "baud": p.baud,
                "pacing_enabled": p.pacing_enabled,
            }
            for p in config.ports
        ],
    }
    return json.dumps(obj, indent=2)


def load_config(path: str | Path) -> RunConfig:
    return from_json(Path(path).read_text())
