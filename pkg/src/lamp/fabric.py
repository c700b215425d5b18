"""Discrete-event simulation of a network of LAMP switches.

Time is continuous milliseconds.  Latency lives on links; each switch may add
a fixed processing delay before its output hits the wire.  Events at equal
timestamps run in scheduling order, so a trial is a pure function of
(topology, scenario, seed, trial index).
"""

from __future__ import annotations

import enum
import heapq
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import wire
from .match_tables import ConfigError, SwitchConfig, UnknownPort, load_control_plane
from .pipeline import (
    AlertHandling,
    BlockInstalled,
    Consume,
    Drop,
    DropReason,
    Forward,
    PuntToController,
    SwitchState,
    action_block,
    process_bytes,
)
from .wire import LampOption, OptionKind, Packet, int2ip

CONNECT_MARKER = b"LAMP-CONNECT"
ACCEPT_MARKER = b"LAMP-ACCEPT"
INVALID_REQUEST_MARKER = b"GET /?%invalid-request"
ALERT_PAYLOAD = b"LAMP-ALERT"
DATA_MARKER = b"DATA"


class SimulationError(RuntimeError):
    pass


class Nontermination(SimulationError):
    pass


class UnlinkedPort(ConfigError):
    pass


class RoutingLoop(ConfigError):
    pass


class Role(str, enum.Enum):
    ATTACKER = "attacker"
    SERVER = "server"
    BENIGN = "benign"


class Mode(str, enum.Enum):
    LAMP = "lamp"
    SDN = "sdn"


@dataclass
class SwitchSpec:
    name: str
    config: SwitchConfig
    mac: int
    processing_delay_ms: float = 0.0


@dataclass
class HostSpec:
    name: str
    ip: int
    mac: int
    switch: str
    port: int
    role: Role = Role.BENIGN
    # servers only: whether this host runs the detector and raises alerts
    detects: bool = True


@dataclass
class LinkSpec:
    a: tuple[str, int]
    b: tuple[str, int]
    latency_ms: float


@dataclass
class Topology:
    switches: list[SwitchSpec]
    hosts: list[HostSpec]
    links: list[LinkSpec]

    def switch(self, name: str) -> SwitchSpec:
        for s in self.switches:
            if s.name == name:
                return s
        raise KeyError(name)

    def host(self, name: str) -> HostSpec:
        for h in self.hosts:
            if h.name == name:
                return h
        raise KeyError(name)


@dataclass
class ControllerModel:
    """Alert round trip through a central controller.

    install time = punt time + uplink + processing + U(0, jitter) + install.
    """

    uplink_ms: float = 0.0
    processing_ms: float = 0.0
    jitter_ms: float = 0.0
    install_ms: float = 0.0


@dataclass
class BackgroundFlow:
    src: str
    dst: str
    rate: float
    count: int
    start_ms: float = 0.0


@dataclass
class ScenarioConfig:
    mode: Mode = Mode.LAMP
    attacker: str | None = None
    attack_targets: list[str] = field(default_factory=list)
    attack_rate: float = 200.0
    connect_ms: float = 0.0
    attack_start_ms: float = 50.0
    attack_duration_ms: float = 500.0
    detection_threshold: int = 5
    detection_processing_delay_ms: float = 0.0
    detection_jitter_ms: float = 0.0
    trials: int = 30
    controller: ControllerModel = field(default_factory=ControllerModel)
    background: list[BackgroundFlow] = field(default_factory=list)
    seed: int = 0
    horizon_ms: float = 600_000.0
    register_size: int = 200

    def validate(self) -> None:
        if not self.attack_rate > 0:
            raise ConfigError("scenario.attack_rate must be > 0")
        if self.trials < 1:
            raise ConfigError("scenario.trials must be >= 1")
        if self.detection_threshold < 1:
            raise ConfigError("scenario.detection_threshold must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("scenario.seed must be an unsigned 64-bit integer")
        for name in ("connect_ms", "attack_start_ms", "attack_duration_ms", "detection_processing_delay_ms",
                     "detection_jitter_ms"):
            if getattr(self, name) < 0:
                raise ConfigError(f"scenario.{name} must be >= 0")
        c = self.controller
        if min(c.uplink_ms, c.processing_ms, c.jitter_ms, c.install_ms) < 0:
            raise ConfigError("scenario.controller delays must be >= 0")


@dataclass
class TrialRow:
    trial: int
    mode: str
    server: str
    invalid_received: int
    block_time_ms: float | None
    alert_drops: int


@dataclass
class AggregateRow:
    mode: str
    server: str
    total: int
    min: int
    max: int
    mean: float


@dataclass
class Delivery:
    time_ms: float
    host: str
    sent: bytes
    received: bytes


@dataclass
class TrialResult:
    trial: int
    rows: list[TrialRow]
    block_time_ms: float | None
    alert_drops: int
    packets: Counter
    drops_by_reason: Counter
    attacker_forwards: dict[str, list[float]]
    blacklisted_drops: dict[str, list[float]]
    deliveries: list[Delivery]
    trace: list[str]


@dataclass
class Metrics:
    rows: list[TrialRow]
    trials: list[TrialResult] = field(default_factory=list, repr=False)

    @property
    def aggregate(self) -> list[AggregateRow]:
        return aggregate(self.rows)

    def trace_lines(self) -> list[str]:
        return [line for t in self.trials for line in t.trace]


def aggregate(rows: Iterable[TrialRow]) -> list[AggregateRow]:
    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    for r in rows:
        groups[(r.mode, r.server)].append(r.invalid_received)
    return [
        AggregateRow(mode, server, sum(v), min(v), max(v), sum(v) / len(v))
        for (mode, server), v in sorted(groups.items())
    ]


class HostModel:
    """Application behaviour of one end host."""

    def __init__(self, spec: HostSpec, gateway_mac: int, macs: dict[int, int], threshold: int):
        self.spec = spec
        self.gateway_mac = gateway_mac
        self._macs = macs
        self.threshold = threshold
        self.invalid_from: Counter = Counter()
        self.alerted: set[int] = set()
        self._ident = 0

    @property
    def invalid_received(self) -> int:
        return sum(self.invalid_from.values())

    def make_packet(self, dst: int, payload: bytes, lamp_option: LampOption | None = None,
                    l2_gateway: bool = False) -> Packet:
        # no ARP: frames go straight to a known host's MAC, else to the attached switch
        dst_mac = self.gateway_mac if l2_gateway else self._macs.get(dst, self.gateway_mac)
        self._ident = (self._ident + 1) & 0xFFFF
        return wire.make_packet(
            self.spec.ip, dst, payload, src_mac=self.spec.mac, dst_mac=dst_mac,
            lamp_option=lamp_option, identification=self._ident,
        )


def host_on_receive(host: HostModel, packet: Packet, now: float) -> Packet | None:
    """Server logic; returns a packet to send in reply, if any."""
    if host.spec.role is not Role.SERVER or packet.ip is None:
        return None
    src = packet.ip.src_addr
    if packet.payload.startswith(CONNECT_MARKER):
        return host.make_packet(src, ACCEPT_MARKER)
    if not packet.payload.startswith(INVALID_REQUEST_MARKER):
        return None
    host.invalid_from[src] += 1
    if host.spec.detects and host.invalid_from[src] >= host.threshold and src not in host.alerted:
        host.alerted.add(src)
        return host.make_packet(src, ALERT_PAYLOAD, LampOption.alert(src), l2_gateway=True)
    return None


def validate_topology(topo: Topology) -> None:
    names = [s.name for s in topo.switches] + [h.name for h in topo.hosts]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ConfigError(f"duplicate node names: {sorted(dup)}")
    ports = {s.name: set(s.config.ports) for s in topo.switches}
    ports.update({h.name: {0} for h in topo.hosts})
    used: set[tuple[str, int]] = set()
    for link in topo.links:
        for node, port in (link.a, link.b):
            if node not in ports:
                raise UnknownPort(f"link endpoint {node}:{port}: no such node")
            if port not in ports[node]:
                raise UnknownPort(f"link endpoint {node}:{port}: no such port")
            if (node, port) in used:
                raise ConfigError(f"port {node}:{port} appears in more than one link")
            used.add((node, port))
        if link.latency_ms < 0:
            raise ConfigError(f"link {link.a}-{link.b}: negative latency")
    linked = {frozenset((l.a, l.b)) for l in topo.links}
    for h in topo.hosts:
        if h.switch not in {s.name for s in topo.switches}:
            raise ConfigError(f"host {h.name}: unknown switch {h.switch}")
        if frozenset(((h.name, 0), (h.switch, h.port))) not in linked:
            raise UnlinkedPort(f"host {h.name}: no link to {h.switch}:{h.port}")
    _check_swid_routes(topo)


def _check_swid_routes(topo: Topology) -> None:
    peer = {}
    for l in topo.links:
        peer[l.a] = l.b
        peer[l.b] = l.a
    by_name = {s.name: s for s in topo.switches}
    for dest in (s.config.swid for s in topo.switches):
        for start in topo.switches:
            cur, seen = start, set()
            while cur.config.swid != dest:
                if cur.name in seen:
                    raise RoutingLoop(f"swid routes toward {dest} loop through {cur.name}")
                seen.add(cur.name)
                hop = cur.config.swid_routes.get(dest)
                if hop is None:
                    break
                nxt = peer.get((cur.name, hop.egress_port))
                if nxt is None or nxt[0] not in by_name:
                    break
                cur = by_name[nxt[0]]


class Fabric:
    def __init__(self, topology: Topology, scenario: ScenarioConfig, *, trace: bool = False,
                 record_deliveries: bool = False):
        self.topology = topology
        self.scenario = scenario
        self.trace_enabled = trace
        self.record_deliveries = record_deliveries

        tables = load_control_plane(s.config for s in topology.switches)
        handling = AlertHandling.CONTROLLER if scenario.mode is Mode.SDN else AlertHandling.DATAPLANE
        self.switches: dict[str, SwitchState] = {
            s.name: SwitchState(tables[s.config.swid], scenario.register_size, handling)
            for s in topology.switches
        }
        self.peer: dict[tuple[str, int], tuple[str, int, float]] = {}
        for l in topology.links:
            self.peer[l.a] = (*l.b, l.latency_ms)
            self.peer[l.b] = (*l.a, l.latency_ms)
        self._host_ips = {h.ip: h for h in topology.hosts}
        self._delay = {s.name: s.processing_delay_ms for s in topology.switches}
        self._attacker_ip = topology.host(scenario.attacker).ip if scenario.attacker else None

    # -- trial machinery -------------------------------------------------

    def _reset(self, trial: int) -> None:
        for st in self.switches.values():
            st.reset_registers()
        macs = {h.ip: h.mac for h in self.topology.hosts}
        self.hosts = {
            h.name: HostModel(h, self.topology.switch(h.switch).mac, macs, self.scenario.detection_threshold)
            for h in self.topology.hosts
        }
        seed = self.scenario.seed
        self._rng_detect = np.random.default_rng([seed, trial, 0])
        self._rng_ctrl = np.random.default_rng([seed, trial, 1])
        self._queue: list = []
        self._seq = 0
        self._trace: list[str] = []
        self._packets: Counter = Counter()
        self._drops: Counter = Counter()
        self._attacker_fwd: dict[str, list[float]] = defaultdict(list)
        self._bl_drops: dict[str, list[float]] = defaultdict(list)
        self._deliveries: list[Delivery] = []
        self._sent: dict[tuple[int, int], bytes] = {}
        self._block_time: float | None = None
        self._alert_drops = 0

    def _push(self, t: float, kind: str, *args) -> None:
        heapq.heappush(self._queue, (t, self._seq, kind, args))
        self._seq += 1

    def _log(self, t: float, node: str, event: str, decision: str = "-", reason: str = "-") -> None:
        if self.trace_enabled:
            self._trace.append(f"{t:.3f} {node} {event} {decision} {reason}")

    def _transmit(self, t: float, node: str, port: int, data: bytes) -> None:
        peer = self.peer.get((node, port))
        if peer is None:
            self._packets["dropped"] += 1
            self._drops[DropReason.NO_ROUTE.value] += 1
            self._log(t, node, "egress", "drop", "UnlinkedPort")
            return
        pnode, pport, latency = peer
        self._push(t + latency, "arrive", pnode, pport, data)

    def _host_send(self, t: float, host: HostModel, pkt: Packet) -> None:
        data = wire.serialize_packet(pkt)
        self._packets["injected"] += 1
        if self.record_deliveries:
            self._sent[(pkt.ip.src_addr, pkt.ip.identification)] = data
        self._log(t, host.spec.name, "send", "-", _describe(pkt))
        self._transmit(t, host.spec.name, 0, data)

    def _on_switch(self, t: float, name: str, port: int, data: bytes) -> None:
        state = self.switches[name]
        decision = process_bytes(state, port, data)
        src = _src_of(data)
        if isinstance(decision, Forward):
            if src is not None and src == self._attacker_ip:
                self._attacker_fwd[name].append(t)
            opt = decision.packet.lamp_option
            kind = opt.kind.name.lower() if opt is not None else "plain"
            self._log(t, name, "ingress", "forward", f"port{decision.egress_port}:{kind}")
            self._transmit(t + self._delay[name], name, decision.egress_port, wire.serialize_packet(decision.packet))
        elif isinstance(decision, Drop):
            self._packets["dropped"] += 1
            self._drops[decision.reason.value] += 1
            if decision.reason is DropReason.BLACKLISTED:
                self._bl_drops[name].append(t)
            if _is_alert_traffic(data):
                self._alert_drops += 1
            self._log(t, name, "ingress", "drop", decision.reason.value)
        else:
            self._packets["consumed"] += 1
            effect = decision.effect
            if isinstance(effect, BlockInstalled):
                self._log(t, name, "ingress", "consume", f"block:{int2ip(effect.attacker_ip)}")
                if self._block_time is None and effect.attacker_ip == self._attacker_ip:
                    self._block_time = t
            else:
                self._log(t, name, "ingress", "consume", f"punt:{int2ip(effect.attacker_ip)}")
                self._punt(t, effect)

    def _punt(self, t: float, effect: PuntToController) -> None:
        ctrl = self.scenario.controller
        jitter = float(self._rng_ctrl.uniform(0.0, ctrl.jitter_ms)) if ctrl.jitter_ms > 0 else 0.0
        ingress = self._resolve_ingress(effect.attacker_ip)
        if ingress is None:
            self._alert_drops += 1
            self._log(t, "controller", "alert", "drop", "UnknownIngress")
            return
        t_install = t + ctrl.uplink_ms + ctrl.processing_ms + jitter + ctrl.install_ms
        self._push(t_install, "install", ingress, effect.attacker_ip)

    def _resolve_ingress(self, ip: int) -> str | None:
        host = self._host_ips.get(ip)
        if host is None:
            return None
        sw = self.topology.switch(host.switch)
        return sw.name if host.port in sw.config.external_ports else None

    def _on_host(self, t: float, name: str, data: bytes) -> None:
        host = self.hosts[name]
        pkt = wire.parse_packet(data)
        self._packets["delivered"] += 1
        self._log(t, name, "deliver", "-", _describe(pkt))
        if self.record_deliveries and pkt.ip is not None:
            sent = self._sent.get((pkt.ip.src_addr, pkt.ip.identification), b"")
            self._deliveries.append(Delivery(t, name, sent, bytes(data)))
        reply = host_on_receive(host, pkt, t)
        if reply is None:
            return
        delay = 0.0
        if reply.lamp_option is not None and reply.lamp_option.kind is OptionKind.ATTACK_ALERT:
            sc = self.scenario
            delay = sc.detection_processing_delay_ms
            if sc.detection_jitter_ms > 0:
                delay += float(self._rng_detect.uniform(0.0, sc.detection_jitter_ms))
        self._push(t + delay, "send", name, reply)

    def _seed_events(self) -> None:
        sc = self.scenario
        if sc.attacker is not None:
            for target in sc.attack_targets:
                dst = self.topology.host(target).ip
                self._push(sc.connect_ms, "send", sc.attacker, None, dst, CONNECT_MARKER)
                self._push(sc.attack_start_ms, "attack", target, 0)
        for i, flow in enumerate(sc.background):
            if flow.count > 0:
                self._push(flow.start_ms, "background", i, 0)

    def run_trial(self, trial_index: int) -> TrialResult:
        sc = self.scenario
        self._reset(trial_index)
        self._log(0.0, "fabric", "trial_start", "-", f"trial{trial_index}")
        self._seed_events()
        period = 1000.0 / sc.attack_rate
        while self._queue:
            t, _, kind, args = heapq.heappop(self._queue)
            if t > sc.horizon_ms:
                raise Nontermination(f"trial {trial_index}: events pending past horizon {sc.horizon_ms} ms")
            if kind == "arrive":
                node, port, data = args
                if node in self.switches:
                    self._on_switch(t, node, port, data)
                else:
                    self._on_host(t, node, data)
            elif kind == "send":
                host = self.hosts[args[0]]
                pkt = args[1] if args[1] is not None else host.make_packet(args[2], args[3])
                self._host_send(t, host, pkt)
            elif kind == "attack":
                target, k = args
                dst = self.topology.host(target).ip
                attacker = self.hosts[sc.attacker]
                self._host_send(t, attacker, attacker.make_packet(dst, INVALID_REQUEST_MARKER + b" seq=%d" % k))
                t_next = sc.attack_start_ms + (k + 1) * period
                if t_next < sc.attack_start_ms + sc.attack_duration_ms:
                    self._push(t_next, "attack", target, k + 1)
            elif kind == "background":
                i, k = args
                flow = sc.background[i]
                src = self.hosts[flow.src]
                dst = self.topology.host(flow.dst).ip
                self._host_send(t, src, src.make_packet(dst, DATA_MARKER + b" seq=%d" % k))
                if k + 1 < flow.count:
                    self._push(flow.start_ms + (k + 1) * 1000.0 / flow.rate, "background", i, k + 1)
            elif kind == "install":
                switch, ip = args
                action_block(self.switches[switch], ip)
                self._log(t, switch, "install", "-", f"block:{int2ip(ip)}")
                if self._block_time is None and ip == self._attacker_ip:
                    self._block_time = t
            else:  # pragma: no cover
                raise SimulationError(f"unknown event {kind}")

        rows = [
            TrialRow(trial_index, sc.mode.value, h.spec.name, h.invalid_received, self._block_time,
                     self._alert_drops)
            for h in self.hosts.values() if h.spec.role is Role.SERVER
        ]
        return TrialResult(
            trial=trial_index,
            rows=rows,
            block_time_ms=self._block_time,
            alert_drops=self._alert_drops,
            packets=self._packets,
            drops_by_reason=self._drops,
            attacker_forwards=dict(self._attacker_fwd),
            blacklisted_drops=dict(self._bl_drops),
            deliveries=self._deliveries,
            trace=self._trace,
        )


def _src_of(data: bytes) -> int | None:
    if len(data) >= 34 and data[12:14] == b"\x08\x00":
        return int.from_bytes(data[26:30], "big")
    return None


def _is_alert_traffic(data: bytes) -> bool:
    return len(data) > 35 and data[12:14] == b"\x08\x00" and (data[14] & 0xF) > 5 and data[34] in (
        int(OptionKind.ATTACK_ALERT), int(OptionKind.FORWARD))


def _describe(pkt: Packet) -> str:
    if pkt.ip is None:
        return "non-ip"
    kind = pkt.lamp_option.kind.name.lower() if pkt.lamp_option else "plain"
    return f"{int2ip(pkt.ip.src_addr)}>{int2ip(pkt.ip.dst_addr)}:{kind}"


def build_fabric(topology: Topology, scenario: ScenarioConfig, **kwargs) -> Fabric:
    scenario.validate()
    validate_topology(topology)
    names = {h.name: h for h in topology.hosts}
    if scenario.attacker is not None:
        if scenario.attacker not in names:
            raise ConfigError(f"scenario.attacker: unknown host {scenario.attacker}")
    for t in scenario.attack_targets:
        if t not in names:
            raise ConfigError(f"scenario.attack_targets: unknown host {t}")
    for f in scenario.background:
        if f.src not in names or f.dst not in names:
            raise ConfigError(f"scenario.background: unknown host in {f.src}->{f.dst}")
        if not f.rate > 0:
            raise ConfigError("scenario.background rate must be > 0")
    return Fabric(topology, scenario, **kwargs)


def run_trial(fabric: Fabric, trial_index: int) -> TrialResult:
    return fabric.run_trial(trial_index)


def _run_one(args: tuple[Fabric, int]) -> TrialResult:
    fabric, i = args
    return fabric.run_trial(i)


def run_scenario(fabric: Fabric, parallel: int = 1) -> Metrics:
    """Run every trial; results are merged in trial order regardless of ``parallel``."""
    n = fabric.scenario.trials
    if parallel > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_one, [(fabric, i) for i in range(n)]))
    else:
        results = [fabric.run_trial(i) for i in range(n)]
    return Metrics(rows=[r for res in results for r in res.rows], trials=results)

