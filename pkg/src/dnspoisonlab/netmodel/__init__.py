"""Byte-level packet, fragment, ICMP and DNS models plus the routing fabric."""

from .checksum import (
    PROTO_ICMP,
    PROTO_UDP,
    internet_checksum,
    ones_add,
    ones_sub,
    ones_sum,
    pseudo_header,
    udp_checksum_bytes,
    verify_udp_bytes,
)
from .dnswire import (
    DnsFormatError,
    DnsMessage,
    QType,
    Rcode,
    ResourceRecord,
    a_rdata,
    mx_rdata,
    srv_rdata,
    encode_name_plain,
    split_name,
    name_wire_length,
    txt_rdata,
    validate_name,
)
from .fabric import Host, Link, RoutingFabric
from .fragmentation import (
    DEFAULT_DEFRAG_CAPACITY,
    DEFAULT_DEFRAG_TIMEOUT,
    FragmentationNeeded,
    ReassemblyBuffer,
    fragment_packet,
    fragment_payload_size,
    reassemble,
)
from .packets import (
    Batch,
    Fragment,
    IcmpKind,
    IcmpMessage,
    SimPacket,
    TxidSweep,
    UdpDatagram,
    icmp_packet,
    ip_int,
    ip_str,
    quote_of,
    udp_packet,
    unit_count,
)


def udp_checksum(src_ip: int, dst_ip: int, datagram: UdpDatagram) -> int:
    """Checksum ``datagram`` would carry; its own checksum field is ignored."""
    return udp_checksum_bytes(src_ip, dst_ip, datagram.sport, datagram.dport, datagram.body)


deliver = RoutingFabric.deliver
