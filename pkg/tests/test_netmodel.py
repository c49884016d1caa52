"""Checksums, fragmentation, DNS wire format and routing."""

import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnspoisonlab.netmodel import (
    PROTO_UDP,
    Batch,
    DnsFormatError,
    DnsMessage,
    Fragment,
    FragmentationNeeded,
    Host,
    IcmpKind,
    IcmpMessage,
    QType,
    ReassemblyBuffer,
    ResourceRecord,
    RoutingFabric,
    SimPacket,
    UdpDatagram,
    fragment_packet,
    ip_int,
    quote_of,
    reassemble,
    udp_checksum,
    udp_packet,
    verify_udp_bytes,
)
from dnspoisonlab.simcore import Engine, SeededRng, millis


# -- independent checksum oracle ----------------------------------------------

def ref_udp_checksum(src, dst, sport, dport, body):
    """RFC 1071 word loop with end-around carry, kept apart from the package."""
    length = 8 + len(body)
    data = (struct.pack("!IIBBH", src, dst, 0, 17, length)
            + struct.pack("!HHHH", sport, dport, length, 0) + body)
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        while total > 0xFFFF:
            total = (total & 0xFFFF) + (total >> 16)
    c = ~total & 0xFFFF
    return 0xFFFF if c == 0 else c


def test_checksum_all_zero_datagram():
    # pseudo-header carries 17 + 8, UDP header carries 8: sum 0x21
    assert ref_udp_checksum(0, 0, 0, 0, b"") == 0xFFDE
    assert udp_checksum(0, 0, UdpDatagram(0, 0, 8, 0, b"")) == 0xFFDE


def test_checksum_matches_reference_10k():
    rnd = random.Random(9)
    for _ in range(10_000):
        src, dst = rnd.getrandbits(32), rnd.getrandbits(32)
        sport, dport = rnd.getrandbits(16), rnd.getrandbits(16)
        body = rnd.randbytes(rnd.randrange(0, 600))
        dg = UdpDatagram.build(src, dst, sport, dport, body)
        assert dg.checksum == ref_udp_checksum(src, dst, sport, dport, body)
        assert dg.verify(src, dst)


def test_single_bit_flip_detected_1000():
    rnd = random.Random(10)
    for _ in range(1000):
        src, dst = rnd.getrandbits(32), rnd.getrandbits(32)
        body = rnd.randbytes(rnd.randrange(1, 300))
        wire = bytearray(UdpDatagram.build(src, dst, 1234, 53, body).to_bytes())
        bit = rnd.randrange(8 * len(body))
        wire[8 + bit // 8] ^= 1 << (bit % 8)
        assert not verify_udp_bytes(src, dst, bytes(wire))


@given(st.binary(max_size=200), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_checksum_round_trip(body, src, dst):
    dg = UdpDatagram.build(src, dst, 5353, 53, body)
    assert verify_udp_bytes(src, dst, dg.to_bytes())
    assert dg.length == 8 + len(body)


# -- fragmentation --------------------------------------------------------------

def _packet(n, ipid=7, df=False):
    return SimPacket(ip_int("192.0.2.53"), ip_int("10.0.0.1"), PROTO_UDP, ipid, bytes(range(256)) * (n // 256)
                     + bytes(n % 256), dont_fragment=df)


def test_fragment_sizes_1508_at_548():
    frags = fragment_packet(_packet(1508), 548)
    assert [len(f.data) for f in frags] == [528, 528, 452]
    assert [f.offset_units for f in frags] == [0, 66, 132]
    assert [f.more_fragments for f in frags] == [True, True, False]


def test_fragment_small_packet_whole():
    frags = fragment_packet(_packet(100), 548)
    assert len(frags) == 1 and not frags[0].more_fragments and frags[0].offset_units == 0


def test_fragment_600_at_292():
    frags = fragment_packet(_packet(600), 292)
    assert len(frags[0].data) == 272
    assert [f.offset_units for f in frags] == [0, 34, 68]


def test_dont_fragment_signals():
    with pytest.raises(FragmentationNeeded) as exc:
        fragment_packet(_packet(1000, df=True), 548)
    assert exc.value.mtu == 548


def test_fragment_invariants_and_round_trip_10k():
    rnd = random.Random(11)
    for i in range(10_000):
        size = rnd.randrange(8, 3000)
        mtu = rnd.randrange(292, 1500)
        pkt = SimPacket(rnd.getrandbits(32), rnd.getrandbits(32), PROTO_UDP, rnd.getrandbits(16),
                        rnd.randbytes(size))
        frags = fragment_packet(pkt, mtu)
        assert all(20 + len(f.data) <= mtu for f in frags)
        assert all(len(f.data) % 8 == 0 for f in frags[:-1])
        assert b"".join(f.data for f in frags) == pkt.payload
        assert len({f.ipid for f in frags}) == 1
        pos = 0
        for f in frags:
            assert f.start == pos
            pos = f.end
        rnd.shuffle(frags)
        buf = ReassemblyBuffer()
        outs = [reassemble(buf, f, 0) for f in frags]
        assert all(o is None for o in outs[:-1])
        assert outs[-1].payload == pkt.payload and outs[-1].ipid == pkt.ipid
        assert len(buf) == 0


def test_first_arrival_wins_planted_fragment():
    pkt = _packet(1000, ipid=99)
    a, b = fragment_packet(pkt, 548)
    forged = Fragment(b.src_ip, b.dst_ip, b.protocol, b.ipid, b.offset_units, False, b"X" * len(b.data))
    buf = ReassemblyBuffer()
    assert reassemble(buf, forged, 0) is None
    out = reassemble(buf, a, 1)
    assert out.payload == a.data + forged.data
    # the genuine second fragment now opens a fresh, never-completed entry
    assert reassemble(buf, b, 2) is None


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_overlap_winner_decided_by_arrival_order(seed, extra):
    rnd = random.Random(seed)
    pkt = SimPacket(1, 2, PROTO_UDP, 5, rnd.randbytes(1200))
    frags = fragment_packet(pkt, 548)
    dupes = [Fragment(f.src_ip, f.dst_ip, f.protocol, f.ipid, f.offset_units, f.more_fragments,
                      rnd.randbytes(len(f.data))) for f in frags[1:]][:extra]
    order = frags[1:] + dupes
    rnd.shuffle(order)
    buf = ReassemblyBuffer()
    for f in order:
        reassemble(buf, f, 0)
    out = reassemble(buf, frags[0], 0)
    expect = bytearray(frags[0].data + bytes(len(pkt.payload) - len(frags[0].data)))
    for f in reversed(order):
        expect[f.start:f.end] = f.data
    assert out.payload == bytes(expect)


def test_capacity_evicts_oldest():
    buf = ReassemblyBuffer(capacity=64)
    for ipid in range(65):
        reassemble(buf, Fragment(1, 2, PROTO_UDP, ipid, 1, False, b"x" * 8), 0)
    assert len(buf) == 64
    assert (1, 2, PROTO_UDP, 0) not in buf.entries
    assert buf.evictions == 1


def test_expired_entries_purged():
    buf = ReassemblyBuffer(capacity=2, timeout=10)
    reassemble(buf, Fragment(1, 2, PROTO_UDP, 1, 1, False, b"x" * 8), 0)
    reassemble(buf, Fragment(1, 2, PROTO_UDP, 2, 1, False, b"x" * 8), 0)
    reassemble(buf, Fragment(1, 2, PROTO_UDP, 3, 1, False, b"x" * 8), 20)
    assert buf.evictions == 0 and buf.expirations == 2


def test_unfragmented_packet_returned_unchanged():
    pkt = _packet(80)
    (frag,) = fragment_packet(pkt, 548)
    assert reassemble(ReassemblyBuffer(), frag, 0).payload == pkt.payload


# -- DNS wire -------------------------------------------------------------------

label = st.text(alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-", min_size=1, max_size=63)
name = st.lists(label, min_size=1, max_size=4).map(".".join).filter(lambda n: len(n) + 2 <= 255)


@st.composite
def messages(draw):
    qn = draw(name)
    recs = [ResourceRecord(draw(st.one_of(st.just(qn), name)), draw(st.sampled_from([1, 16, 99])),
                           draw(st.integers(0, 2**31)), draw(st.binary(max_size=40)))
            for _ in range(draw(st.integers(0, 4)))]
    return DnsMessage(draw(st.integers(0, 0xFFFF)), draw(st.booleans()), qn,
                      draw(st.sampled_from(list(QType)).filter(lambda t: t != QType.OPT)),
                      answer=recs[:2], authority=recs[2:3], additional=recs[3:],
                      edns_udp_size=draw(st.one_of(st.none(), st.integers(512, 4096))),
                      rcode=draw(st.sampled_from([0, 2, 3])), tc=draw(st.booleans()),
                      aa=draw(st.booleans()), rd=draw(st.booleans()))


@given(messages())
def test_dns_round_trip_bit_exact(msg):
    wire = msg.encode()
    back = DnsMessage.decode(wire)
    assert back.encode() == wire
    assert back.qname == msg.qname and back.txid == msg.txid
    assert back.answer == msg.answer and back.edns_udp_size == msg.edns_udp_size


def test_label_and_name_limits():
    DnsMessage(1, False, "a" * 63 + ".example", 1).encode()
    with pytest.raises(DnsFormatError):
        DnsMessage(1, False, "a" * 64 + ".example", 1).encode()
    long_name = ".".join(["a" * 63] * 4)  # 4 * 64 + 1 = 257 bytes on the wire
    with pytest.raises(DnsFormatError):
        DnsMessage(1, False, long_name, 1).encode()


def test_decode_rejects_garbage():
    with pytest.raises(DnsFormatError):
        DnsMessage.decode(b"\x00" * 5)
    wire = DnsMessage(1, False, "www.example", 1).encode()
    with pytest.raises(DnsFormatError):
        DnsMessage.decode(wire + b"\x00")


def test_icmp_round_trip():
    pkt = udp_packet(1, 2, 53, 4444, b"hello")
    for kind, mtu in ((IcmpKind.PORT_UNREACHABLE, 0), (IcmpKind.FRAGMENTATION_NEEDED, 548)):
        msg = IcmpMessage(kind, mtu, quote_of(pkt))
        back = IcmpMessage.from_bytes(msg.to_bytes())
        assert back == msg
        assert len(back.quoted) == 28
        assert back.quoted_addresses() == (1, 2)


# -- routing ----------------------------------------------------------------------

class Sink(Host):
    def __init__(self, name, ip):
        super().__init__(name, ip)
        self.got = []

    def receive(self, unit):
        self.got.append((self.now, unit))


def _fabric(latency=millis(5), loss=0.0):
    eng = Engine()
    return eng, RoutingFabric(eng, SeededRng(1), latency, loss)


def test_override_more_specific_wins():
    eng, fab = _fabric()
    r, att = Sink("R", "10.0.0.1"), Sink("attacker", "6.6.6.6")
    fab.add_host(r, SeededRng(2), prefix="10.0.0.0/8")
    fab.add_host(att, SeededRng(3))
    fab.add_override("10.1.0.0/16", "attacker")
    assert fab.lookup(ip_int("10.1.2.3")) == "attacker"
    assert fab.lookup(ip_int("10.2.2.3")) == "R"
    assert fab.lookup(ip_int("10.1.2.3"), use_overrides=False) == "R"


def test_latency_exact_and_loss_one():
    eng, fab = _fabric()
    a, b = Sink("a", "1.1.1.1"), Sink("b", "2.2.2.2")
    fab.add_host(a, SeededRng(1))
    fab.add_host(b, SeededRng(2))
    a.send(udp_packet(a.ip, b.ip, 1, 2, b""))
    eng.run()
    assert b.got[0][0] == millis(5)
    fab.set_link("a", "b", millis(5), 1.0)
    assert a.send(udp_packet(a.ip, b.ip, 1, 2, b"")) is None
    assert fab.dropped[("a", "b")] == 1


def test_no_route_counted():
    eng, fab = _fabric()
    a = Sink("a", "1.1.1.1")
    fab.add_host(a, SeededRng(1))
    assert a.send(udp_packet(a.ip, ip_int("9.9.9.9"), 1, 2, b"")) is None
    assert fab.no_route["a"] == 1


def test_batch_counts_each_packet():
    eng, fab = _fabric()
    a, b = Sink("a", "1.1.1.1"), Sink("b", "2.2.2.2")
    fab.add_host(a, SeededRng(1))
    fab.add_host(b, SeededRng(2))
    a.send(Batch([udp_packet(a.ip, b.ip, 1, p, b"") for p in range(10)], b.ip))
    assert fab.sent_by("a") == 10


@settings(max_examples=80)
@given(st.lists(st.tuples(st.integers(0, 2**32 - 1), st.integers(1, 32)), min_size=1, max_size=12),
       st.integers(0, 2**32 - 1))
def test_longest_prefix_match_property(prefixes, dst):
    eng, fab = _fabric()
    table = {}
    for i, (addr, length) in enumerate(prefixes):
        net = addr & ((0xFFFFFFFF << (32 - length)) & 0xFFFFFFFF)
        table[(net, length)] = f"h{i}"
        fab.add_route(f"{net >> 24}.{net >> 16 & 255}.{net >> 8 & 255}.{net & 255}/{length}", f"h{i}")
    best = None
    for (net, length), actor in table.items():
        mask = (0xFFFFFFFF << (32 - length)) & 0xFFFFFFFF
        if dst & mask == net and (best is None or length > best[0]):
            best = (length, actor)
    assert fab.lookup(dst) == (best[1] if best else None)
