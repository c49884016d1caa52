"""BGP prefix hijack: become the route to the nameserver and answer directly.

With the nameserver's traffic arriving at the attacker, every challenge
value is visible, so one forged response suffices.
"""

from __future__ import annotations

import json
from functools import lru_cache

from .. import bgpsim
from ..netmodel import PROTO_UDP, DnsFormatError, DnsMessage, ResourceRecord, SimPacket, ip_str, udp_packet
from ..scenario import build_world, compile_scenario, malicious_rdata, qtype_code
from ..simcore import SeededRng, seconds
from .common import AttackerHost, FailureReason, PreconditionError, TrialResult, collect_result

HIJACK_KINDS = ("subprefix", "same-prefix")


@lru_cache(maxsize=8)
def _topology(spec_json: str) -> bgpsim.AsTopology:
    spec = json.loads(spec_json)
    if "file" in spec:
        return bgpsim.load_topology(spec["file"])
    return bgpsim.synthetic_topology(**spec.get("synthetic", {}))


@lru_cache(maxsize=64)
def _same_prefix(spec_json: str, attacker: int, victim: int, observer: int, prefix: str) -> bool:
    return bgpsim.same_prefix_verdict(_topology(spec_json), attacker, victim, observer, prefix)


def routing_verdict(cfg: dict, nameserver_ip: int, seed: int) -> tuple[bool, str | None, FailureReason]:
    """(intercepts, prefix to announce, reason if not) for the hijack section ``cfg``."""
    kind = cfg["kind"]
    legit = cfg["legit_prefix"]
    if kind == "subprefix":
        if not bgpsim.subprefix_verdict([legit], nameserver_ip):
            return False, None, FailureReason.FILTERED_MORE_SPECIFIC
        return True, bgpsim.hijack_prefix_for(legit, nameserver_ip), FailureReason.NONE
    if kind != "same-prefix":
        raise PreconditionError(f"unknown hijack kind {kind!r}; expected one of {HIJACK_KINDS}")
    spec_json = json.dumps(cfg["topology"], sort_keys=True)
    topo = _topology(spec_json)
    roles = [cfg["attacker_as"], cfg["victim_as"], cfg["observer_as"]]
    if None in roles:
        picks = SeededRng(seed, 0x48).sample_distinct(0, len(topo.nodes) - 1, 3)
        roles = [r if r is not None else topo.nodes[p] for r, p in zip(roles, picks)]
    attacker, victim, observer = (int(r) for r in roles)
    if _same_prefix(spec_json, attacker, victim, observer, legit):
        return True, legit, FailureReason.NONE
    return False, legit, FailureReason.NOT_INTERCEPTED


class HijackDnsAttack:
    def __init__(self, world, attacker: AttackerHost):
        self.world = world
        self.host = attacker
        attacker.strategy = self
        comp = world.compiled
        self.cfg = comp.attacker
        self.trigger = comp.trigger
        self.qname = comp.target["qname"].lower()
        self.qtype = qtype_code(comp.target["qtype"])
        self.ns_ip = world.ips["nameserver"]
        self.answered = 0
        self.relayed = 0
        self.queries = 0
        self.reason: FailureReason | None = None
        self.intercepts, self.prefix, reason = routing_verdict(self.cfg, self.ns_ip, comp.scenario.seed)
        if not self.intercepts:
            self.reason = reason

    def start(self) -> None:
        fab = self.world.fabric
        if self.prefix is not None:
            # the announcement itself is one control-plane message
            fab.record_control(self.host.actor_id, 1)
            if self.intercepts:
                fab.add_override(self.prefix, self.host.actor_id)
        try:
            self.world.client.trigger(self.trigger, self.qname, self.qtype)
            self.queries += 1
        except ValueError:
            self.reason = FailureReason.TRIGGER_REFUSED
        budget = seconds(float(self.cfg["budget_s"]))
        self.host.set_timer(budget, self.world.engine.stop)

    def on_packet(self, unit) -> None:
        if isinstance(unit, SimPacket) and unit.protocol == PROTO_UDP and unit.dst_ip == self.ns_ip:
            data = unit.payload
            if (data[2] << 8 | data[3]) == 53:
                try:
                    q = DnsMessage.decode(data[8:])
                except DnsFormatError:
                    q = None
                if q is not None and not q.is_response:
                    self._answer(unit.src_ip, data[0] << 8 | data[1], q)
                    return
        # anything else continues to its real destination
        self.relayed += 1
        self.host.send_spoofed(unit, bypass_overrides=True)

    def _answer(self, src_ip: int, sport: int, q: DnsMessage) -> None:
        # echo port, TXID and the exact query-name case
        rr = ResourceRecord(q.qname, q.qtype, int(self.cfg["poison_ttl"]),
                            malicious_rdata(q.qtype, ip_str(self.host.ip)))
        resp = DnsMessage(q.txid, True, q.qname, q.qtype, answer=[rr], aa=True, rd=q.rd,
                          edns_udp_size=q.edns_udp_size and 4096)
        self.answered += 1
        self.host.send_spoofed(udp_packet(self.ns_ip, src_ip, 53, sport, resp.encode()))


def run_compiled(compiled, trial: int) -> TrialResult:
    legit = compiled.attacker["legit_prefix"]
    world = build_world(compiled, trial, nameserver_prefix=legit)
    host = AttackerHost(world.ips["attacker"])
    world.add_attacker(host)
    attack = HijackDnsAttack(world, host)
    attack.start()
    world.engine.run()
    return collect_result(world, host, 1, attack.queries, attack.reason)


def run_hijackdns(scenario, trial: int = 0) -> TrialResult:
    """One prefix-hijack trial of ``scenario``."""
    if scenario.method != "hijack":
        raise PreconditionError(f"scenario method is {scenario.method!r}, not 'hijack'")
    return run_compiled(compile_scenario(scenario), trial)
