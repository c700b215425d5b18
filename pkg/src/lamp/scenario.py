"""Scenario files: YAML documents with ``topology``, ``scenario`` and ``output`` sections."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .fabric import (
    BackgroundFlow,
    ControllerModel,
    HostSpec,
    LinkSpec,
    Mode,
    Role,
    ScenarioConfig,
    SwitchSpec,
    Topology,
)
from .match_tables import DROP, ConfigError, NextHop, Prefix, SwitchConfig
from .wire import ip2int, mac2int


class ScenarioError(ValueError):
    """Invalid scenario file; the message names the offending key."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HopModel(_Strict):
    port: int
    mac: Optional[str] = None


class LpmEntryModel(_Strict):
    prefix: str
    port: Optional[int] = None
    mac: Optional[str] = None
    drop: bool = False


class SwitchModel(_Strict):
    name: str
    swid: int = Field(ge=1, lt=2**32)
    mac: str
    ports: list[int]
    external_ports: list[int] = []
    host_ports: list[int] = []
    processing_delay_ms: float = Field(0.0, ge=0)
    lpm: list[LpmEntryModel] = []
    swid_routes: dict[int, HopModel] = {}


class HostModelCfg(_Strict):
    name: str
    ip: str
    mac: str
    switch: str
    port: int
    role: Role = Role.BENIGN
    detects: bool = True


class LinkModel(_Strict):
    a: str
    b: str
    latency_ms: float = Field(ge=0)

    @field_validator("a", "b")
    @classmethod
    def _endpoint(cls, v: str) -> str:
        node, sep, port = v.rpartition(":")
        if not sep or not node or not port.isdigit():
            raise ValueError("endpoint must look like 'node:port'")
        return v


class TopologyModel(_Strict):
    switches: list[SwitchModel]
    hosts: list[HostModelCfg] = []
    links: list[LinkModel] = []


class ControllerCfg(_Strict):
    uplink_ms: float = Field(0.0, ge=0)
    processing_ms: float = Field(0.0, ge=0)
    jitter_ms: float = Field(0.0, ge=0)
    install_ms: float = Field(0.0, ge=0)


class BackgroundCfg(_Strict):
    src: str
    dst: str
    rate: float = Field(gt=0)
    count: int = Field(ge=0)
    start_ms: float = Field(0.0, ge=0)


class ScenarioModel(_Strict):
    mode: Mode = Mode.LAMP
    attacker: Optional[str] = None
    attack_targets: list[str] = []
    attack_rate: float = Field(200.0, gt=0)
    connect_ms: float = Field(0.0, ge=0)
    attack_start_ms: float = Field(50.0, ge=0)
    attack_duration_ms: float = Field(500.0, ge=0)
    detection_threshold: int = Field(5, ge=1)
    detection_processing_delay_ms: float = Field(0.0, ge=0)
    detection_jitter_ms: float = Field(0.0, ge=0)
    trials: int = Field(30, ge=1)
    controller: ControllerCfg = ControllerCfg()
    background: list[BackgroundCfg] = []
    seed: int = Field(0, ge=0, lt=2**64)
    horizon_ms: float = Field(600_000.0, gt=0)
    register_size: int = Field(200, ge=1)


class OutputModel(_Strict):
    path: Optional[str] = None
    format: Optional[Literal["csv", "json"]] = None
    trace: Optional[str] = None


class ScenarioFileModel(_Strict):
    topology: TopologyModel
    scenario: ScenarioModel = ScenarioModel()
    output: OutputModel = OutputModel()


class LoadedScenario:
    def __init__(self, topology: Topology, scenario: ScenarioConfig, output: OutputModel, source: str, digest: str):
        self.topology = topology
        self.scenario = scenario
        self.output = output
        self.source = source
        self.digest = digest


def _split(endpoint: str) -> tuple[str, int]:
    node, _, port = endpoint.rpartition(":")
    return node, int(port)


def _to_domain(doc: ScenarioFileModel) -> tuple[Topology, ScenarioConfig]:
    topo = doc.topology
    macs = {s.name: mac2int(s.mac) for s in topo.switches}
    macs.update({h.name: mac2int(h.mac) for h in topo.hosts})
    peer = {}
    for link in topo.links:
        a, b = _split(link.a), _split(link.b)
        peer[a] = b
        peer[b] = a

    def hop(switch: str, port: int, mac: str | None, key: str) -> NextHop:
        if mac is not None:
            return NextHop(port, mac2int(mac))
        other = peer.get((switch, port))
        if other is None or other[0] not in macs:
            raise ScenarioError(f"{key}: port {port} has no linked neighbour to take a MAC from")
        return NextHop(port, macs[other[0]])

    switches = []
    for i, s in enumerate(topo.switches):
        base = f"topology.switches[{i}]"
        lpm = []
        for j, e in enumerate(s.lpm):
            key = f"{base}.lpm[{j}]"
            try:
                prefix = Prefix.parse(e.prefix)
            except ValueError as exc:
                raise ScenarioError(f"{key}.prefix: {exc}") from None
            if e.drop:
                lpm.append((prefix, DROP))
            elif e.port is None:
                raise ScenarioError(f"{key}: needs 'port' or 'drop: true'")
            else:
                lpm.append((prefix, hop(s.name, e.port, e.mac, key)))
        routes = {dest: hop(s.name, h.port, h.mac, f"{base}.swid_routes.{dest}") for dest, h in s.swid_routes.items()}
        cfg = SwitchConfig(s.swid, list(s.ports), lpm, list(s.external_ports), list(s.host_ports), routes)
        switches.append(SwitchSpec(s.name, cfg, macs[s.name], s.processing_delay_ms))

    hosts = []
    for i, h in enumerate(topo.hosts):
        try:
            ip = ip2int(h.ip)
        except ValueError as exc:
            raise ScenarioError(f"topology.hosts[{i}].ip: {exc}") from None
        hosts.append(HostSpec(h.name, ip, macs[h.name], h.switch, h.port, h.role, h.detects))
    links = [LinkSpec(_split(l.a), _split(l.b), l.latency_ms) for l in topo.links]

    sc = doc.scenario
    scenario = ScenarioConfig(
        mode=sc.mode,
        attacker=sc.attacker,
        attack_targets=list(sc.attack_targets),
        attack_rate=sc.attack_rate,
        connect_ms=sc.connect_ms,
        attack_start_ms=sc.attack_start_ms,
        attack_duration_ms=sc.attack_duration_ms,
        detection_threshold=sc.detection_threshold,
        detection_processing_delay_ms=sc.detection_processing_delay_ms,
        detection_jitter_ms=sc.detection_jitter_ms,
        trials=sc.trials,
        controller=ControllerModel(**sc.controller.model_dump()),
        background=[BackgroundFlow(**b.model_dump()) for b in sc.background],
        seed=sc.seed,
        horizon_ms=sc.horizon_ms,
        register_size=sc.register_size,
    )
    return Topology(switches, hosts, links), scenario


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_scenario(text: str, source: str = "<string>") -> LoadedScenario:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    try:
        doc = ScenarioFileModel.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioError(_format_validation(exc)) from None
    try:
        topology, scenario = _to_domain(doc)
    except ConfigError as exc:
        raise ScenarioError(str(exc)) from None
    digest = hashlib.sha256(text.encode()).hexdigest()
    return LoadedScenario(topology, scenario, doc.output, source, digest)


def load_scenario(path: Union[str, Path]) -> LoadedScenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, source=path.name)
