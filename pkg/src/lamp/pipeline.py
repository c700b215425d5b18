"""Per-switch LAMP ingress processing and its hashed registers."""

from __future__ import annotations

import enum
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace

from . import wire
from .match_tables import (
    DROP,
    NextHop,
    SwitchTables,
    exact_lookup,
    lpm_lookup,
)
from .wire import LampOption, OptionKind, Packet

REGISTER_SIZE = 200


class DropReason(str, enum.Enum):
    BLACKLISTED = "Blacklisted"
    NO_ROUTE = "NoRoute"
    INVALID_HEADER = "InvalidHeader"
    TTL_EXPIRED = "TtlExpired"
    UNKNOWN_INGRESS = "UnknownIngress"
    MALFORMED_EXTERNAL = "MalformedExternal"
    MALFORMED_OPTION = "MalformedOption"

    def __str__(self):
        return self.value


class AlertHandling(str, enum.Enum):
    DATAPLANE = "dataplane"
    CONTROLLER = "controller"


class NotAnAlert(ValueError):
    pass


@dataclass(frozen=True)
class Forward:
    egress_port: int
    packet: Packet


@dataclass(frozen=True)
class Drop:
    reason: DropReason


@dataclass(frozen=True)
class BlockInstalled:
    attacker_ip: int


@dataclass(frozen=True)
class PuntToController:
    attacker_ip: int


@dataclass(frozen=True)
class Consume:
    effect: BlockInstalled | PuntToController


Decision = Forward | Drop | Consume


@dataclass
class PacketMetadata:
    ingress_port: int
    check_source_ip: bool = False


def hash_index(addr: int, size: int = REGISTER_SIZE) -> int:
    """CRC-32 of the big-endian address bytes, reduced to a register slot."""
    return zlib.crc32(addr.to_bytes(4, "big")) % size


@dataclass
class SwitchState:
    tables: SwitchTables
    register_size: int = REGISTER_SIZE
    alert_handling: AlertHandling = AlertHandling.DATAPLANE
    counters: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.reset_registers()

    @property
    def swid(self) -> int:
        return self.tables.swid

    def reset_registers(self) -> None:
        n = self.register_size
        self.blacklist = [0] * n
        self.iplist = [0] * n
        self.hash_ip_to_swid = [0] * n
        self.counters.clear()

    def slot(self, addr: int) -> int:
        return hash_index(addr, self.register_size)


def action_add_swid(state: SwitchState, pkt: Packet, meta: PacketMetadata) -> tuple[Packet, PacketMetadata]:
    pkt = wire.attach_option(pkt, LampOption.ingress(state.swid))
    return pkt, replace(meta, check_source_ip=True)


def action_remove_swid(state: SwitchState, pkt: Packet) -> Packet:
    if pkt.lamp_option is None or pkt.lamp_option.kind is not OptionKind.INGRESS_SWITCH_INFO:
        raise wire.NoOption("remove_swid needs an INGRESS_SWITCH_INFO option")
    clean, opt = wire.strip_option(pkt)
    state.hash_ip_to_swid[state.slot(pkt.ip.src_addr)] = opt.swid
    return clean


def action_block(state: SwitchState, attacker_ip: int) -> SwitchState:
    i = state.slot(attacker_ip)
    if state.blacklist[i] and state.iplist[i] != attacker_ip:
        state.counters["blacklist_evictions"] += 1
    state.blacklist[i] = 1
    state.iplist[i] = attacker_ip
    return state


def is_blacklisted(state: SwitchState, addr: int) -> bool:
    i = state.slot(addr)
    return state.blacklist[i] == 1 and state.iplist[i] == addr


def _ipv4_forward(pkt: Packet, hop: NextHop) -> Decision:
    # decrement-on-forward; a packet that would leave with TTL 0 dies here
    if pkt.ip.ttl <= 1:
        return Drop(DropReason.TTL_EXPIRED)
    pkt = replace(pkt, eth=replace(pkt.eth, dst_mac=hop.dst_mac), ip=replace(pkt.ip, ttl=pkt.ip.ttl - 1))
    return Forward(hop.egress_port, wire.finalize(pkt))


def _forward_to_swid(state: SwitchState, pkt: Packet) -> Decision:
    opt = pkt.lamp_option
    action = exact_lookup(state.tables.swid_forward, opt.swid)
    if action.name == "block":
        action_block(state, opt.attacker_ip)
        return Consume(BlockInstalled(opt.attacker_ip))
    if action.name == "ipv4_forward":
        return _ipv4_forward(pkt, action.params[0])
    return Drop(DropReason.NO_ROUTE)


def handle_alert(state: SwitchState, pkt: Packet) -> Decision:
    """Turn an ATTACK_ALERT into a FORWARD aimed at the flow's ingress switch."""
    opt = pkt.lamp_option
    if opt is None or opt.kind is not OptionKind.ATTACK_ALERT:
        raise NotAnAlert(f"expected ATTACK_ALERT, got {opt}")
    if state.alert_handling is AlertHandling.CONTROLLER:
        return Consume(PuntToController(opt.attacker_ip))
    ingress = state.hash_ip_to_swid[state.slot(opt.attacker_ip)]
    if ingress == 0:
        return Drop(DropReason.UNKNOWN_INGRESS)
    pkt = wire.replace_option(pkt, LampOption.forward(opt.attacker_ip, ingress))
    return _forward_to_swid(state, pkt)


def _process(state: SwitchState, port: int, pkt: Packet) -> Decision:
    if pkt.ip is None or pkt.ip.ttl == 0 or not wire.checksum_ok(pkt):
        return Drop(DropReason.INVALID_HEADER)
    meta = PacketMetadata(ingress_port=port)

    add = exact_lookup(state.tables.swid_add, port)
    opt = pkt.lamp_option
    if add.name == "add_swid":
        if opt is not None:
            return Drop(DropReason.MALFORMED_EXTERNAL)
        pkt, meta = action_add_swid(state, pkt, meta)
        if meta.check_source_ip and is_blacklisted(state, pkt.ip.src_addr):
            return Drop(DropReason.BLACKLISTED)
    elif opt is not None and opt.kind is OptionKind.ATTACK_ALERT:
        return handle_alert(state, pkt)
    elif opt is not None and opt.kind is OptionKind.FORWARD:
        return _forward_to_swid(state, pkt)

    action = lpm_lookup(state.tables.ipv4_lpm, pkt.ip.dst_addr)
    if action is None or action is DROP:
        return Drop(DropReason.NO_ROUTE)
    decision = _ipv4_forward(pkt, action)
    if not isinstance(decision, Forward):
        return decision

    out = decision.packet
    kind = out.lamp_option.kind if out.lamp_option is not None else 0
    if exact_lookup(state.tables.swid_remove, (decision.egress_port, int(kind))).name == "remove_swid":
        out = action_remove_swid(state, out)
        decision = Forward(decision.egress_port, out)
    return decision


def process_packet(state: SwitchState, port: int, pkt: Packet) -> Decision:
    """Run one packet through the ingress pipeline.  Never raises on packet content."""
    try:
        decision = _process(state, port, pkt)
    except (wire.HeaderOverflow, wire.OptionAlreadyPresent):
        decision = Drop(DropReason.MALFORMED_OPTION)
    if isinstance(decision, Drop):
        state.counters[f"drop:{decision.reason}"] += 1
    elif isinstance(decision, Forward):
        state.counters["forwarded"] += 1
    else:
        state.counters["consumed"] += 1
    return decision


def process_bytes(state: SwitchState, port: int, data: bytes) -> Decision:
    """Parse then process; parse failures become drops."""
    try:
        pkt = wire.parse_packet(data)
    except wire.MalformedOption:
        state.counters[f"drop:{DropReason.MALFORMED_OPTION}"] += 1
        return Drop(DropReason.MALFORMED_OPTION)
    except wire.WireError:
        state.counters[f"drop:{DropReason.INVALID_HEADER}"] += 1
        return Drop(DropReason.INVALID_HEADER)
    return process_packet(state, port, pkt)
