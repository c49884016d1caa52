"""Query-trigger clients and an open forwarder."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable

from ..netmodel import PROTO_UDP, DnsFormatError, DnsMessage, Host, SimPacket, udp_packet, verify_udp_bytes
from ..simcore import millis
from .resolver import DNS_PORT

TRIGGER_KINDS = ("direct", "on-demand", "bounce", "timer", "third-party")


class ScenarioError(ValueError):
    """Scenario asks for something its application profile does not allow."""


@dataclass(frozen=True)
class Trigger:
    kind: str = "direct"
    period: int = 0  # timer only
    delay: int = millis(200)  # bounce processing time

    def __post_init__(self):
        if self.kind not in TRIGGER_KINDS:
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        if self.kind == "timer" and self.period <= 0:
            raise ValueError("timer trigger needs a positive period")

    def fire_time(self, now: int) -> int:
        if self.kind == "bounce":
            return now + self.delay
        if self.kind == "timer":
            return -(-now // self.period) * self.period
        return now


class TriggerClient(Host):
    """A client inside the victim's network that makes the resolver look things up.

    The attacker cannot see the resolver, but it can cause this client to
    query (by mail bounce, a timer, or a direct request).  Answers are handed
    to ``answer_listeners``.
    """

    def __init__(self, actor_id: str, ip, resolver_ip, forwarder_ip=None,
                 allowed: tuple[str, ...] | None = None):
        super().__init__(actor_id, ip)
        self.resolver_ip = resolver_ip
        self.forwarder_ip = forwarder_ip
        self.allowed = allowed
        self.answer_listeners: list[Callable[[DnsMessage], None]] = []
        self.issued = 0
        self.stats: Counter = Counter()

    def trigger(self, trigger: Trigger, qname: str, qtype: int) -> int:
        """Schedule a query for ``qname``; returns the time it will be sent."""
        if self.allowed is not None and trigger.kind not in self.allowed:
            raise ScenarioError(f"trigger {trigger.kind!r} not permitted (allowed: {', '.join(self.allowed)})")
        if trigger.kind == "third-party" and self.forwarder_ip is None:
            raise ScenarioError("third-party trigger needs a forwarder")
        when = trigger.fire_time(self.now)
        dst = self.forwarder_ip if trigger.kind == "third-party" else self.resolver_ip
        self.issued += 1
        self.set_timer_at(when, self._send_query, dst, qname, qtype)
        return when

    def _send_query(self, dst: int, qname: str, qtype: int) -> None:
        txid = self.rng.uniform_int(0, 0xFFFF)
        sport = self.rng.uniform_int(1024, 65535)
        msg = DnsMessage(txid, False, qname, qtype)
        self.stats["queries"] += 1
        self.fabric.deliver(self.actor_id, udp_packet(self.ip, dst, sport, DNS_PORT, msg.encode()))

    def receive(self, unit) -> None:
        if not isinstance(unit, SimPacket) or unit.protocol != PROTO_UDP:
            return
        if not verify_udp_bytes(unit.src_ip, unit.dst_ip, unit.payload):
            return
        try:
            msg = DnsMessage.decode(unit.payload[8:])
        except DnsFormatError:
            return
        self.stats["answers"] += 1
        for fn in self.answer_listeners:
            fn(msg)


class OpenForwarder(Host):
    """Relays client queries to one upstream resolver and maps answers back."""

    def __init__(self, actor_id: str, ip, resolver_ip):
        super().__init__(actor_id, ip)
        self.resolver_ip = resolver_ip
        self._pending: dict[tuple[int, int], tuple[int, int, int]] = {}
        self.stats: Counter = Counter()

    def receive(self, unit) -> None:
        if not isinstance(unit, SimPacket) or unit.protocol != PROTO_UDP:
            return
        data = unit.payload
        if not verify_udp_bytes(unit.src_ip, unit.dst_ip, data):
            return
        sport = data[0] << 8 | data[1]
        dport = data[2] << 8 | data[3]
        try:
            msg = DnsMessage.decode(data[8:])
        except DnsFormatError:
            return
        if dport == DNS_PORT and not msg.is_response:
            port = self.rng.uniform_int(1024, 65535)
            txid = self.rng.uniform_int(0, 0xFFFF)
            self._pending[(port, txid)] = (unit.src_ip, sport, msg.txid)
            msg.txid = txid
            self.stats["forwarded"] += 1
            self.fabric.deliver(self.actor_id, udp_packet(self.ip, self.resolver_ip, port, DNS_PORT, msg.encode()))
            return
        if msg.is_response and unit.src_ip == self.resolver_ip:
            back = self._pending.pop((dport, msg.txid), None)
            if back is None:
                return
            ip, port, txid = back
            msg.txid = txid
            self.fabric.deliver(self.actor_id, udp_packet(self.ip, ip, DNS_PORT, port, msg.encode()))


def trigger_query(client: TriggerClient, method: Trigger, qname: str, qtype: int, now: int | None = None) -> int:
    return client.trigger(method, qname, qtype)
