"""Authoritative nameserver with RRL, PMTUD and configurable IPID allocation."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from ..netmodel import (
    PROTO_ICMP,
    PROTO_UDP,
    Batch,
    DnsFormatError,
    DnsMessage,
    Fragment,
    Host,
    IcmpKind,
    IcmpMessage,
    QType,
    Rcode,
    ResourceRecord,
    SimPacket,
    fragment_packet,
    split_name,
    udp_packet,
    verify_udp_bytes,
)
from ..simcore import NS_PER_SEC, seconds
from .resolver import DNS_PORT, in_bailiwick

MIN_PMTU = 292
IPID_POLICIES = ("global", "per-destination", "random")
PAD_OWNER = "_pad"


def exact_txt_rdata(length: int) -> bytes:
    """TXT rdata of exactly ``length`` bytes (character-strings of 'x')."""
    out = bytearray()
    left = length
    while left > 0:
        c = min(255, left - 1)
        out.append(c)
        out += b"x" * c
        left -= c + 1
    return bytes(out)


@dataclass
class NameserverConfig:
    zone_name: str = "victim.example"
    records: list = field(default_factory=list)  # ResourceRecord, owner names lower-case
    response_order_random: bool = False
    rrl_threshold: int | None = None  # responses per second; None disables RRL
    rrl_mute: int = seconds(1)
    honor_pmtud: bool = True
    link_mtu: int = 1500
    min_pmtu: int = MIN_PMTU
    per_dst_mtu: dict = field(default_factory=dict)
    ipid_policy: str = "global"
    ipid_start: int = 0
    cross_traffic_rate: float = 0.0  # other clients' packets per second drawn from the global counter
    base_response_padding: int = 0
    edns_udp_size: int = 4096

    def __post_init__(self):
        if self.ipid_policy not in IPID_POLICIES:
            raise ValueError(f"unknown ipid policy {self.ipid_policy!r}")
        if self.rrl_threshold is not None and self.rrl_threshold < 0:
            raise ValueError("rrl_threshold must be non-negative")
        if self.cross_traffic_rate < 0:
            raise ValueError("cross_traffic_rate must be non-negative")


class Zone:
    """Records indexed by owner name and type, with single-label wildcards."""

    def __init__(self, name: str, records: list[ResourceRecord]):
        self.name = name.lower().rstrip(".")
        self.names: dict[str, dict[int, list[ResourceRecord]]] = {}
        for rr in records:
            owner = rr.name.lower().rstrip(".")
            if not in_bailiwick(owner, self.name):
                raise ValueError(f"record {owner} outside zone {self.name}")
            self.names.setdefault(owner, {}).setdefault(rr.rtype, []).append(rr)
        self.apex_ns = list(self.names.get(self.name, {}).get(QType.NS, []))
        self.ns_hosts = [_rdata_name(rr.rdata) for rr in self.apex_ns]

    def is_genuine(self, name: str, rtype: int, rdata: bytes) -> bool:
        """Whether the zone (or its padding record) could have produced this record."""
        owner = name.lower().rstrip(".")
        if owner == f"{PAD_OWNER}.{self.name}" and rtype == QType.TXT:
            return True
        node, _ = self.find(owner)
        if node is None:
            return False
        return any(rr.rdata == rdata for rr in node.get(rtype, ()))

    def find(self, qname: str) -> tuple[dict[int, list] | None, bool]:
        """(types at the node, was_wildcard); ``None`` when no node matches."""
        q = qname.lower().rstrip(".")
        node = self.names.get(q)
        if node is not None:
            return node, False
        labels = split_name(q)
        zlen = len(split_name(self.name))
        for i in range(1, len(labels) - zlen + 1):
            node = self.names.get("*." + ".".join(labels[i:]))
            if node is not None:
                return node, True
        return None, False


def _rdata_name(rdata: bytes) -> str:
    labels, i = [], 0
    while rdata[i]:
        n = rdata[i]
        labels.append(rdata[i + 1:i + 1 + n].decode("ascii"))
        i += n + 1
    return ".".join(labels).lower()


@dataclass
class RateLimiter:
    """Fixed one-second windows; exceeding the threshold mutes for a while."""

    threshold: int
    mute: int
    window: int = NS_PER_SEC
    window_start: int = -(1 << 62)
    count: int = 0
    muted_until: int = -1

    def admit(self, now: int) -> bool:
        if now >= self.window_start + self.window:
            self.window_start = now
            self.count = 0
        self.count += 1
        if self.count > self.threshold:
            self.muted_until = max(self.muted_until, now + self.mute)
        return now >= self.muted_until


class Nameserver(Host):
    def __init__(self, actor_id: str, ip, config: NameserverConfig, zone: Zone | None = None):
        super().__init__(actor_id, ip)
        self.config = config
        self.zone = zone if zone is not None else Zone(config.zone_name, config.records)
        self.per_dst_mtu = dict(config.per_dst_mtu)
        self.rrl = RateLimiter(config.rrl_threshold, config.rrl_mute) if config.rrl_threshold is not None else None
        self.stats: Counter = Counter()
        self._global_ipid = config.ipid_start & 0xFFFF
        self._last_emit = 0
        self._dst_ipid: dict[int, int] = {}
        self._pad = self._pad_record(config.base_response_padding)

    def _pad_record(self, padding: int) -> ResourceRecord | None:
        # owner "_pad" + pointer (7) + fixed fields (10) + rdata
        overhead = 1 + len(PAD_OWNER) + 2 + 10
        if padding <= overhead:
            return None
        return ResourceRecord(f"{PAD_OWNER}.{self.zone.name}", QType.TXT, 300,
                              exact_txt_rdata(padding - overhead))

    # -- packet entry ------------------------------------------------------
    def receive(self, unit) -> None:
        if isinstance(unit, Batch):
            for u in unit.units:
                self.receive(u)
            return
        if isinstance(unit, Fragment):
            if not unit.is_whole:
                return
            unit = SimPacket(unit.src_ip, unit.dst_ip, unit.protocol, unit.ipid, unit.data)
        if unit.protocol == PROTO_ICMP:
            if unit.payload[:2] != b"\x03\x04":  # only Fragmentation Needed matters here
                return
            try:
                msg = IcmpMessage.from_bytes(unit.payload)
            except ValueError:
                return
            self.handle_icmp(msg, unit.src_ip)
            return
        if unit.protocol != PROTO_UDP or not verify_udp_bytes(unit.src_ip, unit.dst_ip, unit.payload):
            return
        data = unit.payload
        if (data[2] << 8 | data[3]) != DNS_PORT:
            return
        sport = data[0] << 8 | data[1]
        self.handle_query(unit.src_ip, sport, data[8:])

    # -- queries -----------------------------------------------------------
    def handle_query(self, src_ip: int, sport: int, body: bytes) -> list | None:
        try:
            q = DnsMessage.decode(body)
        except DnsFormatError:
            self.stats["format_error"] += 1
            return None
        if q.is_response:
            return None
        self.stats["queries"] += 1
        if self.rrl is not None and not self.rrl.admit(self.now):
            self.stats["muted"] += 1
            return None
        _, wire = self._respond(q)
        pkt = udp_packet(self.ip, src_ip, DNS_PORT, sport, wire)
        return self.emit(pkt)

    def build_response(self, q: DnsMessage) -> DnsMessage:
        return self._respond(q)[0]

    def _respond(self, q: DnsMessage) -> tuple[DnsMessage, bytes]:
        zone = self.zone
        resp = DnsMessage(q.txid, True, q.qname, q.qtype, aa=True, rd=q.rd,
                          edns_udp_size=self.config.edns_udp_size if q.edns_udp_size is not None else None)
        if not in_bailiwick(q.qname, zone.name):
            resp.aa = False
            resp.rcode = Rcode.REFUSED
            return resp, resp.encode()
        node, _wild = zone.find(q.qname)
        if node is None:
            resp.rcode = Rcode.NXDOMAIN
        else:
            types = sorted(node) if q.qtype == QType.ANY else [q.qtype]
            for t in types:
                rrset = [ResourceRecord(q.qname, rr.rtype, rr.ttl, rr.rdata) for rr in node.get(t, ())]
                resp.answer += self._order(rrset)
        resp.authority = self._order(list(zone.apex_ns))
        if self._pad is not None:
            resp.additional.append(self._pad)
        for host in zone.ns_hosts:
            glue = zone.names.get(host, {}).get(QType.A)
            if glue:
                resp.additional += self._order(list(glue))
        limit = max(512, q.edns_udp_size or 512)
        wire = resp.encode()
        if len(wire) > limit:
            self.stats["truncated"] += 1
            resp.answer, resp.authority, resp.additional = [], [], []
            resp.tc = True
            wire = resp.encode()
        return resp, wire

    def _order(self, rrset: list) -> list:
        # cyclic rotation, so an RRset of n records has n equally likely orders
        if self.config.response_order_random and len(rrset) > 1:
            k = self.rng.uniform_int(0, len(rrset) - 1)
            rrset = rrset[k:] + rrset[:k]
        return rrset

    # -- emission ----------------------------------------------------------
    def next_ipid(self, dst_ip: int) -> int:
        policy = self.config.ipid_policy
        if policy == "random":
            return self.rng.uniform_int(0, 0xFFFF)
        if policy == "per-destination":
            cur = self._dst_ipid.get(dst_ip)
            if cur is None:
                cur = self.rng.uniform_int(0, 0xFFFF)
            self._dst_ipid[dst_ip] = (cur + 1) & 0xFFFF
            return cur
        now = self.now
        rate = self.config.cross_traffic_rate
        if rate > 0.0 and now > self._last_emit:
            other = self.rng.poisson(rate * (now - self._last_emit) / NS_PER_SEC)
            self._global_ipid = (self._global_ipid + other) & 0xFFFF
        self._last_emit = now
        ipid = self._global_ipid
        self._global_ipid = (ipid + 1) & 0xFFFF
        return ipid

    def emit(self, pkt: SimPacket) -> list:
        pkt.ipid = self.next_ipid(pkt.dst_ip)
        mtu = self.per_dst_mtu.get(pkt.dst_ip, self.config.link_mtu)
        units = fragment_packet(pkt, mtu) if pkt.total_length > mtu else [pkt]
        if len(units) > 1:
            self.stats["fragmented"] += 1
        for u in units:
            self.fabric.deliver(self.actor_id, u)
        return units

    # -- ICMP --------------------------------------------------------------
    def handle_icmp(self, msg: IcmpMessage, src_ip: int) -> int | None:
        """Apply a Fragmentation Needed message; returns the new MTU if any."""
        if msg.kind is not IcmpKind.FRAGMENTATION_NEEDED:
            return None
        if not self.config.honor_pmtud:
            self.stats["pmtud_ignored"] += 1
            return None
        try:
            qsrc, qdst = msg.quoted_addresses()
        except ValueError:
            return None
        if qsrc != self.ip:
            return None
        mtu = min(max(msg.mtu, self.config.min_pmtu), self.config.link_mtu)
        self.per_dst_mtu[qdst] = mtu
        self.stats["pmtu_updates"] += 1
        return mtu


def nameserver_handle_query(state: Nameserver, packet: SimPacket, now: int | None = None):
    data = packet.payload
    return state.handle_query(packet.src_ip, data[0] << 8 | data[1], data[8:])


def nameserver_handle_icmp(state: Nameserver, icmp: IcmpMessage, sender: int = 0, now: int | None = None):
    return state.handle_icmp(icmp, sender)
