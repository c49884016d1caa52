"""Recursive resolver state machine."""

from __future__ import annotations

import string
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

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
    ReassemblyBuffer,
    ResourceRecord,
    SimPacket,
    TxidSweep,
    icmp_packet,
    quote_of,
    udp_packet,
    verify_udp_bytes,
)
from ..simcore import NS_PER_SEC, seconds

DNS_PORT = 53


class Provenance(Enum):
    GENUINE = "genuine"
    POISONED = "poisoned"


@dataclass
class ResolverConfig:
    port_policy: str = "random"  # "random" | "fixed"
    fixed_port: int = 33333
    port_range: tuple[int, int] = (1024, 65535)
    txid_random: bool = True
    use_0x20: bool = False
    edns_udp_size: int = 4000
    accept_fragments: bool = True
    defrag_capacity: int = 64
    defrag_timeout: int = seconds(30)
    icmp_limit: int = 50
    icmp_window: int = seconds(1)
    any_caching: bool = True
    query_timeout: int = seconds(2)
    retries: int = 1
    max_trigger_rate: float = 2.0
    ttl_cap: int = 86400

    def __post_init__(self):
        if self.port_policy not in ("random", "fixed"):
            raise ValueError(f"unknown port policy {self.port_policy!r}")
        if not 0 < self.edns_udp_size <= 65535:
            raise ValueError("edns_udp_size outside (0, 65535]")
        lo, hi = self.port_range
        if not 1 <= lo <= hi <= 65535:
            raise ValueError("bad port range")


@dataclass(slots=True)
class CacheEntry:
    name: str
    rtype: int
    rdata: bytes
    ttl: int
    expiry: int
    provenance: Provenance


@dataclass(slots=True)
class PendingQuery:
    qname: str  # as sent, possibly 0x20-mangled
    qtype: int
    txid: int
    sport: int
    upstream: int
    deadline: int
    zone: str
    clients: list = field(default_factory=list)  # (ip, port, txid, qname)
    attempts: int = 1
    timer: object = None
    active: bool = True


@dataclass
class IcmpRateLimiter:
    """One global budget of ICMP errors per fixed-length window.

    The window opens on the first error after the previous one expired.
    """

    limit: int = 50
    window: int = seconds(1)
    window_start: int = -(1 << 62)
    remaining: int = 0

    def allow(self, now: int) -> bool:
        if now >= self.window_start + self.window:
            self.window_start = now
            self.remaining = self.limit
        if self.remaining > 0:
            self.remaining -= 1
            return True
        return False


def mangle_0x20(name: str, rng) -> str:
    out = []
    for ch in name:
        if ch in string.ascii_letters:
            out.append(ch.upper() if rng.next_u64() & 1 else ch.lower())
        else:
            out.append(ch)
    return "".join(out)


def in_bailiwick(name: str, zone: str) -> bool:
    name = name.lower().rstrip(".")
    zone = zone.lower().rstrip(".")
    return name == zone or name.endswith("." + zone)


class Resolver(Host):
    """Caching recursive resolver with the challenge checks of RFC 5452.

    ``truth(name, rtype, rdata)`` tells whether a record is genuine; it is
    used only to label cache entries for bookkeeping and never affects
    behaviour.
    """

    def __init__(self, actor_id: str, ip, config: ResolverConfig,
                 upstreams: dict[str, int], truth: Callable[[str, int, bytes], bool] | None = None):
        super().__init__(actor_id, ip)
        self.config = config
        self.upstreams = {z.lower().rstrip("."): u for z, u in upstreams.items()}
        self.truth = truth
        self.cache: dict[tuple[str, int], list[CacheEntry]] = {}
        self.pending: dict[int, list[PendingQuery]] = {}
        self.by_question: dict[tuple[str, int], PendingQuery] = {}
        self.limiter = IcmpRateLimiter(config.icmp_limit, config.icmp_window)
        self.defrag = ReassemblyBuffer(config.defrag_capacity, config.defrag_timeout)
        self.client_times: deque = deque()
        self.stats: Counter = Counter()
        self.cache_listeners: list[Callable[[CacheEntry], None]] = []
        self._txid_counter = 0
        self._ipid = 0
        self._outbox: dict | None = None

    # -- packet entry point ------------------------------------------------
    def receive(self, unit) -> None:
        if type(unit) is Batch:
            # replies provoked by one burst leave as one burst per destination
            self._outbox = {}
            try:
                self._receive_units(unit.units)
            finally:
                out, self._outbox = self._outbox, None
                for dst, pkts in out.items():
                    self.fabric.deliver(self.actor_id, pkts[0] if len(pkts) == 1 else Batch(pkts, dst))
            return
        self._receive_units((unit,))

    def _receive_units(self, units) -> None:
        for u in units:
            if type(u) is Fragment:
                if not self.config.accept_fragments and not u.is_whole:
                    self.stats["fragments_blocked"] += 1
                    continue
                packet = self.defrag.insert(u, self.engine.now)
                if packet is None:
                    continue
                if not u.is_whole:
                    self.stats["reassembled"] += 1
                self._receive_packet(packet)
            elif type(u) is TxidSweep:
                self._receive_sweep(u)
            else:
                self._receive_packet(u)

    def _receive_packet(self, pkt: SimPacket) -> None:
        if pkt.protocol == PROTO_ICMP:
            self._receive_icmp(pkt)
            return
        if pkt.protocol != PROTO_UDP:
            return
        data = pkt.payload
        if not verify_udp_bytes(pkt.src_ip, pkt.dst_ip, data):
            self.stats["bad_checksum"] += 1
            return
        sport = (data[0] << 8) | data[1]
        dport = (data[2] << 8) | data[3]
        if dport == DNS_PORT:
            self._client_query(pkt.src_ip, sport, data[8:])
            return
        live = self._live_for(dport, pkt.src_ip)
        if not live:
            self.handle_udp_probe(pkt)
            return
        self._upstream_response(live, data[8:])

    def _live_for(self, port: int, src_ip: int) -> list:
        # connected-socket semantics: only the queried upstream reaches the port
        return [pq for pq in self.pending.get(port, ()) if pq.upstream == src_ip]

    def _receive_icmp(self, pkt: SimPacket) -> None:
        try:
            msg = IcmpMessage.from_bytes(pkt.payload)
        except ValueError:
            return
        if msg.kind is IcmpKind.ECHO_REQUEST:
            self._send(icmp_packet(self.ip, pkt.src_ip, IcmpMessage(IcmpKind.ECHO_REPLY, quoted=msg.quoted)))

    # -- side channel --------------------------------------------------------
    def handle_udp_probe(self, pkt: SimPacket) -> IcmpMessage | None:
        """Answer a datagram to a closed port, subject to the global limit."""
        dport = (pkt.payload[2] << 8) | pkt.payload[3]
        if self._live_for(dport, pkt.src_ip):
            return None
        if not self.limiter.allow(self.now):
            self.stats["icmp_suppressed"] += 1
            return None
        msg = IcmpMessage(IcmpKind.PORT_UNREACHABLE, quoted=quote_of(pkt))
        self.stats["icmp_sent"] += 1
        self._send(icmp_packet(self.ip, pkt.src_ip, msg))
        return msg

    def _receive_sweep(self, sweep: TxidSweep) -> None:
        n = len(sweep)
        live = self._live_for(sweep.dport, sweep.src_ip)
        if not live:
            self._closed_port_burst(sweep, 0, n)
            return
        want = {pq.txid for pq in live}
        hit = None
        for txid in want:
            idx = txid - sweep.txids.start if sweep.txids.step == 1 else None
            if idx is None:
                try:
                    idx = sweep.txids.index(txid)
                except ValueError:
                    continue
            if 0 <= idx < n and idx not in sweep.lost and (hit is None or idx < hit):
                hit = idx
        if hit is None:
            self.stats["mismatch_dropped"] += n - len(sweep.lost)
            return
        self.stats["mismatch_dropped"] += hit - sum(1 for i in sweep.lost if i < hit)
        if sweep.interval:
            self.set_timer(hit * sweep.interval, self._sweep_hit, sweep, hit)
        else:
            self._sweep_hit(sweep, hit)

    def _sweep_hit(self, sweep: TxidSweep, hit: int) -> None:
        self._receive_packet(sweep.packet_for(hit))
        rest = len(sweep) - hit - 1
        if rest:
            if self._live_for(sweep.dport, sweep.src_ip):
                self.stats["mismatch_dropped"] += rest
            else:
                self._closed_port_burst(sweep, hit + 1, len(sweep))

    def _closed_port_burst(self, sweep: TxidSweep, lo: int, hi: int) -> None:
        sample = None
        for i in range(lo, hi):
            if i in sweep.lost:
                continue
            if not self.limiter.allow(self.now):
                self.stats["icmp_suppressed"] += hi - i - sum(1 for j in sweep.lost if i <= j < hi)
                return
            if sample is None:
                sample = sweep.packet_for(i)
            self.stats["icmp_sent"] += 1
            self._send(icmp_packet(self.ip, sweep.src_ip,
                                   IcmpMessage(IcmpKind.PORT_UNREACHABLE, quoted=quote_of(sample))))

    # -- client side ---------------------------------------------------------
    def _client_query(self, client_ip: int, client_port: int, body: bytes) -> None:
        try:
            msg = DnsMessage.decode(body)
        except DnsFormatError:
            self.stats["client_format_error"] += 1
            return
        if msg.is_response:
            return
        self.handle_client_query(msg.qname, msg.qtype, client=(client_ip, client_port, msg.txid))

    def handle_client_query(self, qname: str, qtype: int, client=None) -> str:
        """Serve from cache or start an upstream query.

        Returns ``"cache"``, ``"upstream"``, ``"joined"`` or ``"servfail"``.
        """
        now = self.now
        window = NS_PER_SEC
        times = self.client_times
        while times and times[0] <= now - window:
            times.popleft()
        if len(times) >= self.config.max_trigger_rate:
            self.stats["rate_servfail"] += 1
            self._answer_client(client, qname, qtype, Rcode.SERVFAIL, [])
            return "servfail"
        times.append(now)
        self.stats["client_queries"] += 1
        cached = self.lookup(qname, qtype)
        if cached:
            self.stats["cache_hits"] += 1
            self._answer_client(client, qname, qtype, Rcode.NOERROR, cached)
            return "cache"
        key = (qname.lower(), qtype)
        pq = self.by_question.get(key)
        if pq is not None and pq.active:
            if client:
                pq.clients.append(client)
            return "joined"
        zone = self._zone_for(qname)
        if zone is None:
            self._answer_client(client, qname, qtype, Rcode.SERVFAIL, [])
            return "servfail"
        self._start_query(qname, qtype, zone, [client] if client else [], attempts=1)
        return "upstream"

    def lookup(self, qname: str, qtype: int) -> list[CacheEntry]:
        entries = self.cache.get((qname.lower(), qtype))
        if not entries:
            return []
        now = self.now
        live = [e for e in entries if e.expiry > now]
        if not live:
            del self.cache[(qname.lower(), qtype)]
        return live

    def _zone_for(self, qname: str) -> str | None:
        best = None
        for zone in self.upstreams:
            if in_bailiwick(qname, zone) and (best is None or len(zone) > len(best)):
                best = zone
        return best

    def _fresh_port(self) -> int:
        cfg = self.config
        if cfg.port_policy == "fixed":
            return cfg.fixed_port
        lo, hi = cfg.port_range
        while True:
            p = self.rng.uniform_int(lo, hi)
            if p != DNS_PORT and p not in self.pending:
                return p

    def _fresh_txid(self) -> int:
        if self.config.txid_random:
            return self.rng.uniform_int(0, 0xFFFF)
        self._txid_counter = (self._txid_counter + 1) & 0xFFFF
        return self._txid_counter

    def _start_query(self, qname: str, qtype: int, zone: str, clients: list, attempts: int) -> PendingQuery:
        cfg = self.config
        sport = self._fresh_port()
        txid = self._fresh_txid()
        sent_name = mangle_0x20(qname, self.rng) if cfg.use_0x20 else qname
        upstream = self.upstreams[zone]
        pq = PendingQuery(sent_name, qtype, txid, sport, upstream, self.now + cfg.query_timeout,
                          zone, clients, attempts)
        self.pending.setdefault(sport, []).append(pq)
        self.by_question[(qname.lower(), qtype)] = pq
        query = DnsMessage(txid, False, sent_name, qtype, edns_udp_size=cfg.edns_udp_size, rd=False)
        self.stats["upstream_queries"] += 1
        self._send(udp_packet(self.ip, upstream, sport, DNS_PORT, query.encode(), ipid=self._next_ipid()))
        pq.timer = self.set_timer(cfg.query_timeout, self._timeout, pq)
        return pq

    def _close(self, pq: PendingQuery) -> None:
        pq.active = False
        if pq.timer is not None:
            pq.timer.cancel()
        lst = self.pending.get(pq.sport)
        if lst is not None:
            if pq in lst:
                lst.remove(pq)
            if not lst:
                del self.pending[pq.sport]
        key = (pq.qname.lower(), pq.qtype)
        if self.by_question.get(key) is pq:
            del self.by_question[key]

    def _timeout(self, pq: PendingQuery) -> None:
        if not pq.active:
            return
        self._close(pq)
        self.stats["timeouts"] += 1
        if pq.attempts <= self.config.retries:
            self._start_query(pq.qname.lower() if self.config.use_0x20 else pq.qname, pq.qtype, pq.zone,
                              pq.clients, pq.attempts + 1)
            return
        for c in pq.clients:
            self._answer_client(c, pq.qname, pq.qtype, Rcode.SERVFAIL, [])

    # -- upstream responses ---------------------------------------------------
    def _upstream_response(self, live: list, body: bytes) -> None:
        try:
            msg = DnsMessage.decode(body)
        except DnsFormatError:
            self.stats["format_error"] += 1
            return
        pq = None
        for cand in live:
            if self._matches(cand, msg):
                pq = cand
                break
        if pq is None:
            self.stats["mismatch_dropped"] += 1
            return
        self._close(pq)
        self.handle_response(pq, msg)

    def _matches(self, pq: PendingQuery, msg: DnsMessage) -> bool:
        if not msg.is_response or msg.txid != pq.txid or msg.qtype != pq.qtype:
            return False
        if self.config.use_0x20:
            return msg.qname == pq.qname
        return msg.qname.lower() == pq.qname.lower()

    def handle_response(self, pq: PendingQuery, msg: DnsMessage) -> None:
        """Process a response that already passed the challenge checks."""
        if msg.tc:
            # TCP fallback is not modelled; the lookup fails.
            self.stats["truncated"] += 1
            for c in pq.clients:
                self._answer_client(c, pq.qname, pq.qtype, Rcode.SERVFAIL, [])
            return
        self.stats["accepted"] += 1
        if msg.rcode == Rcode.NOERROR:
            self._cache_response(pq, msg)
        answer = self.lookup(pq.qname, pq.qtype) if msg.rcode == Rcode.NOERROR else []
        for c in pq.clients:
            self._answer_client(c, pq.qname, pq.qtype, msg.rcode, answer)

    def _cache_response(self, pq: PendingQuery, msg: DnsMessage) -> None:
        groups: dict[tuple[str, int], list[ResourceRecord]] = {}
        for section, recs in (("an", msg.answer), ("ns", msg.authority), ("ar", msg.additional)):
            for rr in recs:
                if not in_bailiwick(rr.name, pq.zone):
                    continue
                key = (rr.name.lower(), rr.rtype)
                if pq.qtype == QType.ANY and section == "an" and not self.config.any_caching:
                    key = (rr.name.lower(), QType.ANY)
                groups.setdefault(key, []).append(rr)
        now = self.now
        cap = self.config.ttl_cap
        for key, recs in groups.items():
            entries = []
            for rr in recs:
                ttl = min(rr.ttl, cap)
                genuine = True if self.truth is None else self.truth(rr.name, rr.rtype, rr.rdata)
                entries.append(CacheEntry(key[0], rr.rtype, rr.rdata, ttl, now + ttl * NS_PER_SEC,
                                          Provenance.GENUINE if genuine else Provenance.POISONED))
            self.cache[key] = entries
            for e in entries:
                for listener in self.cache_listeners:
                    listener(e)

    def _answer_client(self, client, qname: str, qtype: int, rcode: int, entries: list) -> None:
        if not client:
            return
        ip, port, txid = client
        now = self.now
        answer = [ResourceRecord(qname, e.rtype, max(0, (e.expiry - now) // NS_PER_SEC), e.rdata)
                  for e in entries]
        msg = DnsMessage(txid, True, qname, qtype, answer=answer, rcode=rcode, ra=True)
        self._send(udp_packet(self.ip, ip, DNS_PORT, port, msg.encode(), ipid=self._next_ipid()))

    # -- helpers ---------------------------------------------------------------
    def _next_ipid(self) -> int:
        self._ipid = (self._ipid + 1) & 0xFFFF
        return self._ipid

    def _send(self, pkt: SimPacket) -> None:
        if self._outbox is not None:
            self._outbox.setdefault(pkt.dst_ip, []).append(pkt)
        else:
            self.fabric.deliver(self.actor_id, pkt)

    def poisoned_entries(self) -> list[CacheEntry]:
        return [e for es in self.cache.values() for e in es if e.provenance is Provenance.POISONED]


def resolver_handle_client_query(state: Resolver, qname: str, qtype: int, now: int | None = None,
                                 client=None) -> str:
    return state.handle_client_query(qname, qtype, client)


def resolver_handle_udp_probe(state: Resolver, packet: SimPacket, now: int | None = None):
    return state.handle_udp_probe(packet)
