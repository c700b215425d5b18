"""Match-action tables and the control-plane loader that fills them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

from .wire import OptionKind, int2ip, ip2int


class TableError(ValueError):
    pass


class InvalidPrefix(TableError):
    pass


class KeyWidthMismatch(TableError):
    pass


class ConfigError(TableError):
    pass


class DuplicateSwid(ConfigError):
    pass


class UnknownPort(ConfigError):
    pass


@dataclass(frozen=True, order=True)
class Prefix:
    value: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= 32:
            raise InvalidPrefix(f"prefix length {self.length}")
        if not 0 <= self.value <= 0xFFFFFFFF:
            raise InvalidPrefix(f"prefix value {self.value:#x}")
        if self.value & ~self.mask & 0xFFFFFFFF:
            raise InvalidPrefix(f"{int2ip(self.value)}/{self.length} has host bits set")

    @property
    def mask(self) -> int:
        return (0xFFFFFFFF << (32 - self.length)) & 0xFFFFFFFF

    def matches(self, addr: int) -> bool:
        return addr & self.mask == self.value

    @classmethod
    def parse(cls, text: str) -> Prefix:
        addr, _, length = text.partition("/")
        return cls(ip2int(addr), int(length) if length else 32)

    def __str__(self):
        return f"{int2ip(self.value)}/{self.length}"


@dataclass(frozen=True)
class NextHop:
    egress_port: int
    dst_mac: int


class _Drop:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "DROP"

    def __reduce__(self):
        return (_Drop, ())


DROP = _Drop()
ForwardingAction = Union[NextHop, _Drop]


class LpmTable:
    """Binary trie keyed on destination address bits, most significant first.

    A node is ``[child0, child1, action]``; ``action`` is None on nodes that
    only exist as a path to longer prefixes.
    """

    def __init__(self):
        self._root: list = [None, None, None]
        self._entries: dict[Prefix, ForwardingAction] = {}

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[tuple[Prefix, ForwardingAction]]:
        return iter(sorted(self._entries.items(), key=lambda kv: (kv[0].value, kv[0].length)))

    def insert(self, prefix: Prefix, action: ForwardingAction) -> LpmTable:
        node = self._root
        for i in range(prefix.length):
            bit = (prefix.value >> (31 - i)) & 1
            if node[bit] is None:
                node[bit] = [None, None, None]
            node = node[bit]
        node[2] = action
        self._entries[prefix] = action
        return self

    def lookup(self, addr: int) -> ForwardingAction | None:
        node = self._root
        best = node[2]
        shift = 31
        while shift >= 0:
            node = node[(addr >> shift) & 1]
            if node is None:
                break
            if node[2] is not None:
                best = node[2]
            shift -= 1
        return best


def lpm_insert(table: LpmTable, prefix: Prefix, action: ForwardingAction) -> LpmTable:
    return table.insert(prefix, action)


def lpm_lookup(table: LpmTable, addr: int) -> ForwardingAction | None:
    """Action of the longest matching prefix, or None on a miss."""
    return table.lookup(addr)


@dataclass(frozen=True)
class ActionDescriptor:
    name: str
    params: tuple = ()

    def __str__(self):
        if not self.params:
            return self.name
        return f"{self.name}({', '.join(_fmt_param(p) for p in self.params)})"


def _fmt_param(p) -> str:
    if isinstance(p, NextHop):
        return f"port={p.egress_port}, mac={p.dst_mac:012x}"
    return str(p)


NO_ACTION = ActionDescriptor("NoAction")


class ExactTable:
    """Exact-match table over a fixed tuple of unsigned fields."""

    def __init__(self, name: str, key_widths: tuple[int, ...], default_action: ActionDescriptor = NO_ACTION):
        self.name = name
        self.key_widths = tuple(key_widths)
        self.default_action = default_action
        self.entries: dict[tuple[int, ...], ActionDescriptor] = {}

    def _key(self, key) -> tuple[int, ...]:
        if isinstance(key, int):
            key = (key,)
        key = tuple(key)
        if len(key) != len(self.key_widths):
            raise KeyWidthMismatch(f"{self.name}: key {key} has {len(key)} fields, want {len(self.key_widths)}")
        for v, w in zip(key, self.key_widths):
            if not 0 <= v < (1 << w):
                raise KeyWidthMismatch(f"{self.name}: {v} does not fit in {w} bits")
        return key

    def add(self, key, action: ActionDescriptor) -> None:
        self.entries[self._key(key)] = action

    def lookup(self, key) -> ActionDescriptor:
        return self.entries.get(self._key(key), self.default_action)

    def __len__(self):
        return len(self.entries)


def exact_lookup(table: ExactTable, key) -> ActionDescriptor:
    return table.lookup(key)


PORT_BITS = 9


@dataclass
class SwitchConfig:
    """Control-plane view of one switch."""

    swid: int
    ports: list[int]
    lpm: list[tuple[Prefix, ForwardingAction]] = field(default_factory=list)
    external_ports: list[int] = field(default_factory=list)
    host_ports: list[int] = field(default_factory=list)
    swid_routes: dict[int, NextHop] = field(default_factory=dict)

    @property
    def trunk_ports(self) -> list[int]:
        classified = set(self.external_ports) | set(self.host_ports)
        return [p for p in self.ports if p not in classified]


@dataclass
class SwitchTables:
    swid: int
    ipv4_lpm: LpmTable
    swid_add: ExactTable
    swid_remove: ExactTable
    swid_forward: ExactTable


def _validate(cfg: SwitchConfig) -> None:
    if not 1 <= cfg.swid <= 0xFFFFFFFF:
        raise ConfigError(f"swid {cfg.swid}: must be in 1..2^32-1 (0 means 'no mapping')")
    ports = set(cfg.ports)
    if len(ports) != len(cfg.ports):
        raise ConfigError(f"switch {cfg.swid}: duplicate port in {cfg.ports}")
    for p in ports:
        if not 0 <= p < (1 << PORT_BITS):
            raise ConfigError(f"switch {cfg.swid}: port {p} out of range")

    def known(port, what):
        if port not in ports:
            raise UnknownPort(f"switch {cfg.swid}: {what} references unknown port {port}")

    for p in cfg.external_ports:
        known(p, "external_ports")
    for p in cfg.host_ports:
        known(p, "host_ports")
    both = set(cfg.external_ports) & set(cfg.host_ports)
    if both:
        raise ConfigError(f"switch {cfg.swid}: ports {sorted(both)} classified as both external and host-facing")
    for prefix, action in cfg.lpm:
        if isinstance(action, NextHop):
            known(action.egress_port, f"lpm entry {prefix}")
    for dest, hop in cfg.swid_routes.items():
        if dest != cfg.swid:
            known(hop.egress_port, f"swid route to {dest}")


def build_switch_tables(cfg: SwitchConfig) -> SwitchTables:
    _validate(cfg)
    lpm = LpmTable()
    for prefix, action in cfg.lpm:
        lpm.insert(prefix, action)

    swid_add = ExactTable("swid_add", (PORT_BITS,))
    for port in cfg.external_ports:
        swid_add.add(port, ActionDescriptor("add_swid", (cfg.swid,)))

    swid_remove = ExactTable("swid_remove", (PORT_BITS, 5))
    for port in cfg.host_ports:
        swid_remove.add((port, int(OptionKind.INGRESS_SWITCH_INFO)), ActionDescriptor("remove_swid"))

    swid_forward = ExactTable("swid_forward", (32,))
    for dest, hop in cfg.swid_routes.items():
        if dest != cfg.swid:
            swid_forward.add(dest, ActionDescriptor("ipv4_forward", (hop,)))
    swid_forward.add(cfg.swid, ActionDescriptor("block"))

    return SwitchTables(cfg.swid, lpm, swid_add, swid_remove, swid_forward)


def load_control_plane(configs: Iterable[SwitchConfig]) -> dict[int, SwitchTables]:
    """Populate the four tables of every switch, keyed by swid."""
    out: dict[int, SwitchTables] = {}
    for cfg in configs:
        if cfg.swid in out:
            raise DuplicateSwid(f"swid {cfg.swid} assigned to more than one switch")
        out[cfg.swid] = build_switch_tables(cfg)
    return out
