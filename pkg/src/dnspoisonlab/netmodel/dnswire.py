"""RFC 1035 wire encoding for DNS messages, with name compression.

Compression matches suffixes case-sensitively so that 0x20-mangled names
survive a round trip byte for byte.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from enum import IntEnum

MAX_LABEL = 63
MAX_NAME_WIRE = 255


class QType(IntEnum):
    A = 1
    NS = 2
    CNAME = 5
    MX = 15
    TXT = 16
    SRV = 33
    NAPTR = 35
    OPT = 41
    IPSECKEY = 45
    ANY = 255


class Rcode(IntEnum):
    NOERROR = 0
    SERVFAIL = 2
    NXDOMAIN = 3
    REFUSED = 5


class DnsFormatError(ValueError):
    pass


def split_name(name: str) -> list[str]:
    name = name.rstrip(".")
    if not name:
        return []
    return name.split(".")


def validate_name(name: str) -> None:
    if not name.isascii():
        raise DnsFormatError(f"non-ASCII name {name!r}")
    labels = split_name(name)
    wire = 1
    for label in labels:
        n = len(label)
        if not n:
            raise DnsFormatError(f"empty label in {name!r}")
        if n > MAX_LABEL:
            raise DnsFormatError(f"label longer than {MAX_LABEL} bytes in {name!r}")
        wire += n + 1
    if wire > MAX_NAME_WIRE:
        raise DnsFormatError(f"name longer than {MAX_NAME_WIRE} bytes on the wire")


def name_wire_length(name: str) -> int:
    return 1 + sum(len(label) + 1 for label in split_name(name))


def encode_name_plain(name: str) -> bytes:
    validate_name(name)
    out = bytearray()
    for label in split_name(name):
        b = label.encode("ascii")
        out.append(len(b))
        out += b
    out.append(0)
    return bytes(out)


def a_rdata(addr: str) -> bytes:
    return ipaddress.IPv4Address(addr).packed


def txt_rdata(text: bytes) -> bytes:
    out = bytearray()
    for i in range(0, len(text), 255):
        chunk = text[i:i + 255]
        out.append(len(chunk))
        out += chunk
    if not text:
        out.append(0)
    return bytes(out)


def mx_rdata(pref: int, host: str) -> bytes:
    return struct.pack("!H", pref) + encode_name_plain(host)


def srv_rdata(prio: int, weight: int, port: int, target: str) -> bytes:
    return struct.pack("!HHH", prio, weight, port) + encode_name_plain(target)


@dataclass(frozen=True, slots=True)
class ResourceRecord:
    name: str
    rtype: int
    ttl: int
    rdata: bytes
    rclass: int = 1


@dataclass(slots=True)
class DnsMessage:
    txid: int
    is_response: bool
    qname: str
    qtype: int
    answer: list = field(default_factory=list)
    authority: list = field(default_factory=list)
    additional: list = field(default_factory=list)
    edns_udp_size: int | None = None
    rcode: int = 0
    tc: bool = False
    aa: bool = False
    rd: bool = True
    ra: bool = False

    def flags(self) -> int:
        f = 0
        if self.is_response:
            f |= 0x8000
        if self.aa:
            f |= 0x0400
        if self.tc:
            f |= 0x0200
        if self.rd:
            f |= 0x0100
        if self.ra:
            f |= 0x0080
        return f | (self.rcode & 0xF)

    def records(self) -> list:
        return [*self.answer, *self.authority, *self.additional]

    def encode(self) -> bytes:
        return self.encode_with_offsets()[0]

    def encode_with_offsets(self) -> tuple[bytes, list[int]]:
        """Wire bytes plus the rdata offset of every record in section order."""
        validate_name(self.qname)
        out = bytearray()
        arcount = len(self.additional) + (1 if self.edns_udp_size is not None else 0)
        out += struct.pack("!HHHHHH", self.txid & 0xFFFF, self.flags(), 1,
                           len(self.answer), len(self.authority), arcount)
        table: dict[tuple, int] = {}
        _put_name(out, self.qname, table)
        out += struct.pack("!HH", self.qtype, 1)
        offsets = []
        for rr in self.records():
            _put_name(out, rr.name, table)
            out += struct.pack("!HHIH", rr.rtype, rr.rclass, rr.ttl & 0xFFFFFFFF, len(rr.rdata))
            offsets.append(len(out))
            out += rr.rdata
        if self.edns_udp_size is not None:
            out += b"\x00" + struct.pack("!HHIH", QType.OPT, self.edns_udp_size, 0, 0)
        return bytes(out), offsets

    @classmethod
    def decode(cls, data: bytes) -> "DnsMessage":
        if len(data) < 12:
            raise DnsFormatError("short header")
        txid, flags, qd, an, ns, ar = struct.unpack_from("!HHHHHH", data)
        if qd != 1:
            raise DnsFormatError("exactly one question supported")
        qname, pos = _get_name(data, 12)
        if pos + 4 > len(data):
            raise DnsFormatError("truncated question")
        qtype, _qclass = struct.unpack_from("!HH", data, pos)
        pos += 4
        sections = []
        edns = None
        for count in (an, ns, ar):
            recs = []
            for _ in range(count):
                name, pos = _get_name(data, pos)
                if pos + 10 > len(data):
                    raise DnsFormatError("truncated record header")
                rtype, rclass, ttl, rdlen = struct.unpack_from("!HHIH", data, pos)
                pos += 10
                if pos + rdlen > len(data):
                    raise DnsFormatError("truncated rdata")
                rdata = bytes(data[pos:pos + rdlen])
                pos += rdlen
                if rtype == QType.OPT:
                    edns = rclass
                    continue
                recs.append(ResourceRecord(name, rtype, ttl, rdata, rclass))
            sections.append(recs)
        if pos != len(data):
            raise DnsFormatError("trailing bytes after message")
        return cls(
            txid=txid,
            is_response=bool(flags & 0x8000),
            qname=qname,
            qtype=qtype,
            answer=sections[0],
            authority=sections[1],
            additional=sections[2],
            edns_udp_size=edns,
            rcode=flags & 0xF,
            tc=bool(flags & 0x0200),
            aa=bool(flags & 0x0400),
            rd=bool(flags & 0x0100),
            ra=bool(flags & 0x0080),
        )


def _put_name(out: bytearray, name: str, table: dict) -> None:
    labels = split_name(name)
    for i in range(len(labels)):
        suffix = tuple(labels[i:])
        ptr = table.get(suffix)
        if ptr is not None:
            out += struct.pack("!H", 0xC000 | ptr)
            return
        if len(out) < 0x4000:
            table[suffix] = len(out)
        b = labels[i].encode("ascii")
        out.append(len(b))
        out += b
    out.append(0)


def _get_name(data: bytes, pos: int) -> tuple[str, int]:
    labels = []
    end = None
    hops = 0
    while True:
        if pos >= len(data):
            raise DnsFormatError("name runs past end of message")
        n = data[pos]
        if n & 0xC0 == 0xC0:
            if pos + 1 >= len(data):
                raise DnsFormatError("truncated pointer")
            if end is None:
                end = pos + 2
            pos = ((n & 0x3F) << 8) | data[pos + 1]
            hops += 1
            if hops > 64:
                raise DnsFormatError("compression loop")
            continue
        if n & 0xC0:
            raise DnsFormatError("unsupported label type")
        pos += 1
        if n == 0:
            break
        labels.append(data[pos:pos + n].decode("ascii"))
        pos += n
    name = ".".join(labels)
    validate_name(name)
    return name, (end if end is not None else pos)
