"""Internet ones'-complement arithmetic (RFC 1071) for UDP over IPv4.

Because 2**16 == 1 (mod 0xFFFF), the folded ones'-complement sum of a
big-endian word sequence equals the whole byte string read as one integer,
reduced mod 0xFFFF (with 0xFFFF standing in for a non-zero multiple).
"""

from __future__ import annotations

import struct

PROTO_ICMP = 1
PROTO_UDP = 17


def ones_sum(data: bytes) -> int:
    """Folded 16-bit ones'-complement sum; odd input is padded with a zero byte."""
    if len(data) & 1:
        data = bytes(data) + b"\x00"
    v = int.from_bytes(data, "big")
    if v == 0:
        return 0
    return v % 0xFFFF or 0xFFFF


def ones_add(a: int, b: int) -> int:
    s = a + b
    s = (s & 0xFFFF) + (s >> 16)
    return s


def ones_sub(a: int, b: int) -> int:
    """``a - b`` in ones'-complement arithmetic."""
    return ones_add(a, (~b) & 0xFFFF)


def internet_checksum(data: bytes) -> int:
    return (~ones_sum(data)) & 0xFFFF


def pseudo_header(src_ip: int, dst_ip: int, udp_length: int, protocol: int = PROTO_UDP) -> bytes:
    return struct.pack("!IIBBH", src_ip, dst_ip, 0, protocol, udp_length)


def udp_checksum_bytes(src_ip: int, dst_ip: int, sport: int, dport: int, body: bytes) -> int:
    length = 8 + len(body)
    header = struct.pack("!HHHH", sport, dport, length, 0)
    c = internet_checksum(pseudo_header(src_ip, dst_ip, length) + header + body)
    return c or 0xFFFF


def verify_udp_bytes(src_ip: int, dst_ip: int, datagram: bytes) -> bool:
    """Receiver-side check over a complete UDP datagram (header + body).

    A zero checksum field means the sender did not compute one (legal in
    IPv4) and is accepted.
    """
    if len(datagram) < 8:
        return False
    if datagram[6] == 0 and datagram[7] == 0:
        return True
    return ones_sum(pseudo_header(src_ip, dst_ip, len(datagram)) + datagram) == 0xFFFF
