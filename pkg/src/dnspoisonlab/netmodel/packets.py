"""IPv4 / UDP / ICMP unit models exchanged across the fabric."""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

from .checksum import (
    PROTO_ICMP,
    PROTO_UDP,
    internet_checksum,
    udp_checksum_bytes,
    verify_udp_bytes,
)

IP_HEADER_LEN = 20
MAX_IP_LEN = 65535
MAX_FRAGMENT_END = MAX_IP_LEN - IP_HEADER_LEN  # 65515


def ip_int(addr: str | int) -> int:
    if isinstance(addr, int):
        return addr
    return int(ipaddress.IPv4Address(addr))


def ip_str(addr: int) -> str:
    return str(ipaddress.IPv4Address(addr))


@dataclass(slots=True)
class SimPacket:
    src_ip: int
    dst_ip: int
    protocol: int
    ipid: int
    payload: bytes
    dont_fragment: bool = False
    ttl: int = 64

    def __post_init__(self):
        if IP_HEADER_LEN + len(self.payload) > MAX_IP_LEN:
            raise ValueError("IPv4 packet longer than 65535 bytes")

    @property
    def total_length(self) -> int:
        return IP_HEADER_LEN + len(self.payload)

    def header_bytes(self, offset_units: int = 0, more_fragments: bool = False,
                     total_length: int | None = None) -> bytes:
        flags = (0x4000 if self.dont_fragment else 0) | (0x2000 if more_fragments else 0)
        tl = self.total_length if total_length is None else total_length
        hdr = struct.pack("!BBHHHBBHII", 0x45, 0, tl, self.ipid & 0xFFFF,
                          flags | (offset_units & 0x1FFF), self.ttl, self.protocol, 0,
                          self.src_ip, self.dst_ip)
        csum = internet_checksum(hdr)
        return hdr[:10] + struct.pack("!H", csum) + hdr[12:]


@dataclass(slots=True)
class Fragment:
    src_ip: int
    dst_ip: int
    protocol: int
    ipid: int
    offset_units: int
    more_fragments: bool
    data: bytes
    arrival_time: int = 0

    def __post_init__(self):
        if self.more_fragments and len(self.data) % 8:
            raise ValueError("non-final fragment data must be a multiple of 8 bytes")
        if self.offset_units * 8 + len(self.data) > MAX_FRAGMENT_END:
            raise ValueError("fragment extends past 65515 bytes")

    @property
    def start(self) -> int:
        return self.offset_units * 8

    @property
    def end(self) -> int:
        return self.offset_units * 8 + len(self.data)

    @property
    def is_whole(self) -> bool:
        return self.offset_units == 0 and not self.more_fragments

    def key(self) -> tuple[int, int, int, int]:
        return (self.src_ip, self.dst_ip, self.protocol, self.ipid)


@dataclass(slots=True, frozen=True)
class UdpDatagram:
    sport: int
    dport: int
    length: int
    checksum: int
    body: bytes

    @classmethod
    def build(cls, src_ip: int, dst_ip: int, sport: int, dport: int, body: bytes) -> "UdpDatagram":
        return cls(sport, dport, 8 + len(body),
                   udp_checksum_bytes(src_ip, dst_ip, sport, dport, body), body)

    def to_bytes(self) -> bytes:
        return struct.pack("!HHHH", self.sport, self.dport, self.length, self.checksum) + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "UdpDatagram":
        if len(data) < 8:
            raise ValueError("truncated UDP header")
        sport, dport, length, checksum = struct.unpack_from("!HHHH", data)
        if length != len(data):
            raise ValueError(f"UDP length field {length} != datagram size {len(data)}")
        return cls(sport, dport, length, checksum, bytes(data[8:]))

    def verify(self, src_ip: int, dst_ip: int) -> bool:
        return verify_udp_bytes(src_ip, dst_ip, self.to_bytes())


def udp_packet(src_ip: int, dst_ip: int, sport: int, dport: int, body: bytes,
               ipid: int = 0, dont_fragment: bool = False) -> SimPacket:
    dg = UdpDatagram.build(src_ip, dst_ip, sport, dport, body)
    return SimPacket(src_ip, dst_ip, PROTO_UDP, ipid, dg.to_bytes(), dont_fragment)


class IcmpKind(Enum):
    PORT_UNREACHABLE = (3, 3)
    FRAGMENTATION_NEEDED = (3, 4)
    ECHO_REQUEST = (8, 0)
    ECHO_REPLY = (0, 0)


_BY_TYPE_CODE = {k.value: k for k in IcmpKind}


@dataclass(slots=True, frozen=True)
class IcmpMessage:
    kind: IcmpKind
    mtu: int = 0
    quoted: bytes = b""

    def to_bytes(self) -> bytes:
        t, c = self.kind.value
        rest = struct.pack("!HH", 0, self.mtu) if self.kind is IcmpKind.FRAGMENTATION_NEEDED else b"\0\0\0\0"
        body = struct.pack("!BBH", t, c, 0) + rest + self.quoted
        csum = internet_checksum(body)
        return body[:2] + struct.pack("!H", csum) + body[4:]

    @classmethod
    def from_bytes(cls, data: bytes) -> "IcmpMessage":
        t, c = data[0], data[1]
        kind = _BY_TYPE_CODE.get((t, c))
        if kind is None:
            raise ValueError(f"unsupported ICMP type/code {t}/{c}")
        mtu = struct.unpack_from("!H", data, 6)[0] if kind is IcmpKind.FRAGMENTATION_NEEDED else 0
        return cls(kind, mtu, bytes(data[8:]))

    def quoted_addresses(self) -> tuple[int, int]:
        """(src, dst) of the offending packet's quoted IPv4 header."""
        if len(self.quoted) < 20:
            raise ValueError("quoted header too short")
        return struct.unpack_from("!II", self.quoted, 12)


def quote_of(packet: SimPacket) -> bytes:
    """First 28 bytes of ``packet`` (IPv4 header plus 8 payload bytes)."""
    return packet.header_bytes() + packet.payload[:8]


def icmp_packet(src_ip: int, dst_ip: int, msg: IcmpMessage, ipid: int = 0) -> SimPacket:
    return SimPacket(src_ip, dst_ip, PROTO_ICMP, ipid, msg.to_bytes())


@dataclass(slots=True)
class Batch:
    """Several units sent back-to-back by one host to the same destination."""

    units: list
    dst_ip: int

    def __len__(self) -> int:
        return len(self.units)


@dataclass(slots=True)
class TxidSweep:
    """Compact train of spoofed DNS responses that differ only in TXID.

    Packet ``i`` carries TXID ``txids[i]``; all share addressing and the
    response template.  ``interval`` spaces consecutive packets in time.
    ``lost`` holds indices dropped in transit (filled in by the fabric).
    """

    src_ip: int
    dst_ip: int
    sport: int
    dport: int
    template: object  # DnsMessage; kept untyped to avoid an import cycle
    txids: range
    interval: int = 0
    lost: frozenset = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.txids)

    def packet_for(self, index: int) -> SimPacket:
        msg = replace(self.template, txid=self.txids[index])
        return udp_packet(self.src_ip, self.dst_ip, self.sport, self.dport, msg.encode())


def unit_count(unit) -> int:
    if isinstance(unit, (Batch, TxidSweep)):
        return len(unit)
    return 1


def unit_dst(unit) -> int:
    return unit.dst_ip
