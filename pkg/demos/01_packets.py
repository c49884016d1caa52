"""Packets on the wire: checksums, fragmentation and who wins reassembly.

Run with ``python demos/01_packets.py``.
"""

from dnspoisonlab.netmodel import (
    PROTO_UDP,
    Fragment,
    ReassemblyBuffer,
    SimPacket,
    UdpDatagram,
    fragment_packet,
    ip_int,
    reassemble,
    verify_udp_bytes,
)

src, dst = ip_int("192.0.2.53"), ip_int("10.0.0.53")

# %% A UDP datagram carries a ones'-complement checksum over a pseudo header.
dg = UdpDatagram.build(src, dst, 53, 33333, b"hello resolver")
print("checksum", hex(dg.checksum), "valid:", dg.verify(src, dst))

wire = bytearray(dg.to_bytes())
wire[10] ^= 0x01
print("one flipped bit still valid?", verify_udp_bytes(src, dst, bytes(wire)))

# %% A 1200-byte packet sent over a 548-byte path is cut into three pieces.
pkt = SimPacket(src, dst, PROTO_UDP, 4242, bytes(1200))
frags = fragment_packet(pkt, 548)
for f in frags:
    print(f"  offset {f.start:5d}  bytes {len(f.data):4d}  more={f.more_fragments}")

# %% Whoever arrives first at an offset keeps it.  A forged second fragment
# that is already waiting in the buffer is what the real first fragment meets.
first, second = frags[0], frags[1]
forged = Fragment(second.src_ip, second.dst_ip, second.protocol, second.ipid,
                  second.offset_units, second.more_fragments, b"\xee" * len(second.data))
buf = ReassemblyBuffer()
reassemble(buf, forged, 0)
reassemble(buf, first, 0)
out = reassemble(buf, frags[2], 0)
print("reassembled", len(out.payload), "bytes; forged bytes inside:", out.payload[528:532].hex())
