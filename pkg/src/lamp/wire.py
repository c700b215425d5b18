"""Ethernet/IPv4 encoding with the three LAMP IP options.

Layout of the IPv4 options area produced by :func:`serialize_packet`::

    +------+-----+-------------+------------+---------+-----------------+
    | type | len | attacker_ip | swid       | pad 0x0 | foreign options |
    | 1B   | 1B  | 4B (opt.)   | 4B (opt.)  | 2B      | 4k bytes        |
    +------+-----+-------------+------------+---------+-----------------+

The LAMP option is always first.  Its length byte is the unpadded size (6 or
10) and two zero bytes bring it to a word boundary, so IHL keeps its usual
32-bit word meaning.  Only the first option is examined when parsing; any
other option bytes are carried verbatim as ``foreign_options``.

Addresses (MAC and IPv4) are plain ints throughout.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass, field, replace

ETH_HEADER_LEN = 14
IPV4_MIN_HEADER_LEN = 20
ETHERTYPE_IPV4 = 0x0800
MAX_OPTIONS_LEN = 40
FLAG_MF = 0x1

_ETH = struct.Struct("!6s6sH")
_IPV4 = struct.Struct("!BBHHHBBHII")


class WireError(ValueError):
    """Base class for encoding/decoding failures."""


class HeaderTooShort(WireError):
    pass


class Truncated(WireError):
    pass


class BadVersion(WireError):
    pass


class Fragmented(WireError):
    pass


class MalformedOption(WireError):
    pass


class InvariantViolation(WireError):
    pass


class OptionAlreadyPresent(WireError):
    pass


class HeaderOverflow(WireError):
    pass


class NoOption(WireError):
    pass


class OptionKind(enum.IntEnum):
    """LAMP option numbers.  copy=0/class=0, so these are also the type bytes."""

    ATTACK_ALERT = 31
    INGRESS_SWITCH_INFO = 29
    FORWARD = 27

    @property
    def wire_len(self) -> int:
        return 10 if self is OptionKind.FORWARD else 6

    @property
    def padded_len(self) -> int:
        return (self.wire_len + 3) & ~3


LAMP_TYPE_BYTES = frozenset(int(k) for k in OptionKind)


@dataclass(frozen=True)
class LampOption:
    kind: OptionKind
    swid: int | None = None
    attacker_ip: int | None = None

    def __post_init__(self):
        kind = OptionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        need_swid = kind in (OptionKind.INGRESS_SWITCH_INFO, OptionKind.FORWARD)
        need_ip = kind in (OptionKind.ATTACK_ALERT, OptionKind.FORWARD)
        if need_swid != (self.swid is not None) or need_ip != (self.attacker_ip is not None):
            raise InvariantViolation(f"bad field set for {kind.name}: {self}")
        for v in (self.swid, self.attacker_ip):
            if v is not None and not 0 <= v <= 0xFFFFFFFF:
                raise InvariantViolation(f"32-bit field out of range: {v}")

    @classmethod
    def ingress(cls, swid: int) -> LampOption:
        return cls(OptionKind.INGRESS_SWITCH_INFO, swid=swid)

    @classmethod
    def alert(cls, attacker_ip: int) -> LampOption:
        return cls(OptionKind.ATTACK_ALERT, attacker_ip=attacker_ip)

    @classmethod
    def forward(cls, attacker_ip: int, swid: int) -> LampOption:
        return cls(OptionKind.FORWARD, swid=swid, attacker_ip=attacker_ip)

    def to_bytes(self) -> bytes:
        out = bytearray((int(self.kind), self.kind.wire_len))
        # block_t precedes switch_t on the wire
        if self.attacker_ip is not None:
            out += self.attacker_ip.to_bytes(4, "big")
        if self.swid is not None:
            out += self.swid.to_bytes(4, "big")
        out += bytes(self.kind.padded_len - len(out))
        return bytes(out)


@dataclass(frozen=True)
class EthernetHeader:
    dst_mac: int
    src_mac: int
    ethertype: int = ETHERTYPE_IPV4


@dataclass(frozen=True)
class Ipv4Header:
    src_addr: int
    dst_addr: int
    ihl: int = 5
    total_len: int = 20
    tos: int = 0
    identification: int = 0
    flags: int = 0
    frag_offset: int = 0
    ttl: int = 64
    protocol: int = 6
    checksum: int = 0
    version: int = 4


@dataclass(frozen=True)
class Packet:
    eth: EthernetHeader
    ip: Ipv4Header | None
    lamp_option: LampOption | None = None
    foreign_options: bytes = b""
    payload: bytes = field(default=b"", repr=False)

    @property
    def options_len(self) -> int:
        n = len(self.foreign_options)
        if self.lamp_option is not None:
            n += self.lamp_option.kind.padded_len
        return n

    @property
    def is_ipv4(self) -> bool:
        return self.ip is not None


def ip2int(addr: str) -> int:
    return int(ipaddress.IPv4Address(addr))


def int2ip(addr: int) -> str:
    return str(ipaddress.IPv4Address(addr))


def mac2int(mac: str) -> int:
    parts = mac.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {mac!r}")
    return int("".join(p.zfill(2) for p in parts), 16)


def int2mac(mac: int) -> str:
    return ":".join(f"{b:02x}" for b in mac.to_bytes(6, "big"))


def compute_checksum(header_bytes: bytes) -> int:
    """Ones-complement checksum of 16-bit big-endian words."""
    if len(header_bytes) % 2:
        raise ValueError("header length must be even")
    total = sum(struct.unpack(f"!{len(header_bytes) // 2}H", header_bytes))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _options_bytes(pkt: Packet) -> bytes:
    lamp = pkt.lamp_option.to_bytes() if pkt.lamp_option is not None else b""
    return lamp + pkt.foreign_options


def _header_bytes(ip: Ipv4Header, options: bytes, checksum: int) -> bytes:
    fixed = _IPV4.pack(
        (ip.version << 4) | ip.ihl,
        ip.tos,
        ip.total_len,
        ip.identification,
        (ip.flags << 13) | ip.frag_offset,
        ip.ttl,
        ip.protocol,
        checksum,
        ip.src_addr,
        ip.dst_addr,
    )
    return fixed + options


def header_bytes(pkt: Packet) -> bytes:
    """IPv4 header (options included) with the packet's stored checksum."""
    return _header_bytes(pkt.ip, _options_bytes(pkt), pkt.ip.checksum)


def checksum_ok(pkt: Packet) -> bool:
    return compute_checksum(header_bytes(pkt)) == 0


def check_packet(pkt: Packet) -> None:
    """Raise InvariantViolation unless ``pkt`` can be serialized faithfully."""
    if pkt.ip is None:
        if pkt.eth.ethertype == ETHERTYPE_IPV4:
            raise InvariantViolation("IPv4 ethertype without an IPv4 header")
        if pkt.lamp_option is not None or pkt.foreign_options:
            raise InvariantViolation("options on a non-IP packet")
        return
    ip = pkt.ip
    if pkt.eth.ethertype != ETHERTYPE_IPV4:
        raise InvariantViolation(f"IPv4 header under ethertype {pkt.eth.ethertype:#06x}")
    if ip.version != 4:
        raise InvariantViolation("version must be 4")
    if len(pkt.foreign_options) % 4:
        raise InvariantViolation("foreign options must fill whole words")
    if pkt.options_len > MAX_OPTIONS_LEN:
        raise InvariantViolation(f"options area of {pkt.options_len} bytes exceeds 40")
    if pkt.lamp_option is None and pkt.foreign_options[:1] and pkt.foreign_options[0] in LAMP_TYPE_BYTES:
        raise InvariantViolation("foreign options start with a LAMP type byte")
    if ip.ihl != 5 + pkt.options_len // 4:
        raise InvariantViolation(f"ihl {ip.ihl} does not match options area")
    if ip.total_len != ip.ihl * 4 + len(pkt.payload):
        raise InvariantViolation(f"total_len {ip.total_len} does not match header + payload")
    if ip.total_len > 0xFFFF:
        raise InvariantViolation("total_len exceeds 16 bits")
    if ip.frag_offset or ip.flags & FLAG_MF:
        raise InvariantViolation("fragments are not supported")
    for name, bits in (("tos", 8), ("identification", 16), ("flags", 3), ("ttl", 8), ("protocol", 8),
                       ("src_addr", 32), ("dst_addr", 32)):
        if not 0 <= getattr(ip, name) < (1 << bits):
            raise InvariantViolation(f"{name} out of range")


def finalize(pkt: Packet) -> Packet:
    """Recompute ihl, total_len and checksum from the packet's contents."""
    if pkt.ip is None:
        return pkt
    ihl = 5 + pkt.options_len // 4
    ip = replace(pkt.ip, ihl=ihl, total_len=ihl * 4 + len(pkt.payload), checksum=0)
    csum = compute_checksum(_header_bytes(ip, _options_bytes(pkt), 0))
    return replace(pkt, ip=replace(ip, checksum=csum))


def make_packet(
    src: int,
    dst: int,
    payload: bytes = b"",
    *,
    src_mac: int = 0,
    dst_mac: int = 0,
    lamp_option: LampOption | None = None,
    foreign_options: bytes = b"",
    **ip_fields,
) -> Packet:
    pkt = Packet(
        eth=EthernetHeader(dst_mac=dst_mac, src_mac=src_mac),
        ip=Ipv4Header(src_addr=src, dst_addr=dst, **ip_fields),
        lamp_option=lamp_option,
        foreign_options=foreign_options,
        payload=payload,
    )
    return finalize(pkt)


def serialize_packet(pkt: Packet) -> bytes:
    check_packet(pkt)
    eth = _ETH.pack(pkt.eth.dst_mac.to_bytes(6, "big"), pkt.eth.src_mac.to_bytes(6, "big"), pkt.eth.ethertype)
    if pkt.ip is None:
        return eth + pkt.payload
    options = _options_bytes(pkt)
    csum = compute_checksum(_header_bytes(pkt.ip, options, 0))
    return eth + _header_bytes(pkt.ip, options, csum) + pkt.payload


def _parse_lamp(area: bytes) -> tuple[LampOption, int]:
    kind = OptionKind(area[0])
    if len(area) < 2 or area[1] != kind.wire_len:
        got = area[1] if len(area) > 1 else None
        raise MalformedOption(f"{kind.name} length byte {got}, expected {kind.wire_len}")
    if len(area) < kind.padded_len:
        raise MalformedOption(f"{kind.name} runs past the options area")
    pos = 2
    attacker_ip = swid = None
    if kind in (OptionKind.ATTACK_ALERT, OptionKind.FORWARD):
        attacker_ip = int.from_bytes(area[pos:pos + 4], "big")
        pos += 4
    if kind in (OptionKind.INGRESS_SWITCH_INFO, OptionKind.FORWARD):
        swid = int.from_bytes(area[pos:pos + 4], "big")
        pos += 4
    if any(b not in (0, 1) for b in area[pos:kind.padded_len]):
        raise MalformedOption(f"non-padding bytes after {kind.name}")
    return LampOption(kind, swid=swid, attacker_ip=attacker_ip), kind.padded_len


def parse_packet(data: bytes) -> Packet:
    if len(data) < ETH_HEADER_LEN:
        raise Truncated(f"{len(data)} bytes is shorter than an Ethernet header")
    dst, src, ethertype = _ETH.unpack_from(data)
    eth = EthernetHeader(int.from_bytes(dst, "big"), int.from_bytes(src, "big"), ethertype)
    if ethertype != ETHERTYPE_IPV4:
        return Packet(eth=eth, ip=None, payload=bytes(data[ETH_HEADER_LEN:]))

    body = data[ETH_HEADER_LEN:]
    if len(body) < IPV4_MIN_HEADER_LEN:
        raise Truncated("IPv4 header truncated")
    (ver_ihl, tos, total_len, ident, flags_frag, ttl, proto, csum, saddr, daddr) = _IPV4.unpack_from(body)
    version, ihl = ver_ihl >> 4, ver_ihl & 0xF
    if version != 4:
        raise BadVersion(f"version {version}")
    if ihl < 5:
        raise HeaderTooShort(f"ihl {ihl}")
    if total_len < ihl * 4:
        raise HeaderTooShort(f"total_len {total_len} shorter than header ({ihl * 4})")
    if len(body) < total_len:
        raise Truncated(f"{len(body)} bytes available, total_len says {total_len}")
    flags, frag = flags_frag >> 13, flags_frag & 0x1FFF
    if frag or flags & FLAG_MF:
        raise Fragmented("fragmented packets are not supported")

    ip = Ipv4Header(
        src_addr=saddr, dst_addr=daddr, ihl=ihl, total_len=total_len, tos=tos,
        identification=ident, flags=flags, frag_offset=frag, ttl=ttl, protocol=proto,
        checksum=csum, version=version,
    )
    area = bytes(body[IPV4_MIN_HEADER_LEN:ihl * 4])
    lamp = None
    if area and area[0] in LAMP_TYPE_BYTES:
        lamp, used = _parse_lamp(area)
        area = area[used:]
    return Packet(eth=eth, ip=ip, lamp_option=lamp, foreign_options=area,
                  payload=bytes(body[ihl * 4:total_len]))


def attach_option(pkt: Packet, opt: LampOption) -> Packet:
    if pkt.ip is None:
        raise InvariantViolation("cannot attach an IP option to a non-IP packet")
    if pkt.lamp_option is not None:
        raise OptionAlreadyPresent(f"packet already carries {pkt.lamp_option.kind.name}")
    if pkt.options_len + opt.kind.padded_len > MAX_OPTIONS_LEN:
        raise HeaderOverflow("ihl would exceed 15")
    return finalize(replace(pkt, lamp_option=opt))


def strip_option(pkt: Packet) -> tuple[Packet, LampOption]:
    if pkt.ip is None or pkt.lamp_option is None:
        raise NoOption("packet carries no LAMP option")
    return finalize(replace(pkt, lamp_option=None)), pkt.lamp_option


def replace_option(pkt: Packet, opt: LampOption) -> Packet:
    """Swap the LAMP option for ``opt``; lengths and checksum follow."""
    if pkt.ip is None or pkt.lamp_option is None:
        raise NoOption("packet carries no LAMP option")
    if pkt.options_len - pkt.lamp_option.kind.padded_len + opt.kind.padded_len > MAX_OPTIONS_LEN:
        raise HeaderOverflow("ihl would exceed 15")
    return finalize(replace(pkt, lamp_option=opt))
