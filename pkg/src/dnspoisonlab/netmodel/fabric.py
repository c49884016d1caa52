"""Links, longest-prefix routing with hijack overrides, and delivery logs."""

from __future__ import annotations

import ipaddress
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

from ..simcore import Engine, Event, SeededRng, millis
from .packets import Batch, TxidSweep, ip_int, unit_count


@dataclass(slots=True)
class Link:
    latency: int
    loss: float = 0.0


class _Timer:
    __slots__ = ("fn", "args")

    def __init__(self, fn, args):
        self.fn = fn
        self.args = args


class Host:
    """Base class for anything with an address on the fabric.

    Subclasses implement :meth:`receive`.  Timers are delivered through the
    same engine target as packets, wrapped so they cannot be confused.
    """

    def __init__(self, actor_id: str, ip: int | str):
        self.actor_id = actor_id
        self.ip = ip_int(ip)
        self.fabric: RoutingFabric | None = None
        self.engine: Engine | None = None
        self.rng: SeededRng | None = None

    def attach(self, fabric: "RoutingFabric", rng: SeededRng) -> None:
        self.fabric = fabric
        self.engine = fabric.engine
        self.rng = rng
        fabric.engine.register(self.actor_id, self._dispatch)

    @property
    def now(self) -> int:
        return self.engine.now

    def _dispatch(self, engine: Engine, ev: Event) -> None:
        p = ev.payload
        if type(p) is _Timer:
            p.fn(*p.args)
        else:
            self.receive(p)

    def set_timer(self, delay: int, fn, *args) -> Event:
        return self.engine.schedule_in(delay, self.actor_id, _Timer(fn, args))

    def set_timer_at(self, when: int, fn, *args) -> Event:
        return self.engine.schedule(when, self.actor_id, _Timer(fn, args))

    def send(self, unit) -> Event | None:
        return self.fabric.deliver(self.actor_id, unit)

    def receive(self, unit) -> None:  # pragma: no cover - abstract
        raise NotImplementedError


@lru_cache(maxsize=4096)
def _parse_prefix(prefix: str | int) -> tuple[int, int]:
    net = ipaddress.IPv4Network(prefix, strict=False)
    return net.prefixlen, int(net.network_address)


class RoutingFabric:
    """Static topology of hosts connected by one-way links.

    Destination lookup is longest-prefix match over ordinary routes and
    hijack overrides together; at equal length an override replaces the
    ordinary route.  Loss draws come from a per-(sender, receiver) stream.
    """

    def __init__(self, engine: Engine, rng: SeededRng, default_latency: int = millis(10),
                 default_loss: float = 0.0):
        self.engine = engine
        self.rng = rng
        self.default_link = Link(default_latency, default_loss)
        self.links: dict[tuple[str, str], Link] = {}
        self.hosts: dict[str, Host] = {}
        self._routes: dict[int, dict[int, str]] = {}
        self._overrides: dict[int, dict[int, str]] = {}
        self._lengths: list[int] = []
        self._loss_rng: dict[tuple[str, str], SeededRng] = {}
        self._host_index: dict[str, int] = {}
        self.sent: Counter = Counter()
        self.dropped: Counter = Counter()
        self.no_route: Counter = Counter()
        self.control: Counter = Counter()

    # -- topology --------------------------------------------------------
    def add_host(self, host: Host, rng: SeededRng, prefix: str | None = None) -> Host:
        self._host_index[host.actor_id] = len(self._host_index)
        self.hosts[host.actor_id] = host
        host.attach(self, rng)
        if prefix is None:
            self._table_add(self._routes, host.ip, host.actor_id)
        else:
            self.add_route(prefix, host.actor_id)
        return host

    def set_link(self, src: str, dst: str, latency: int, loss: float = 0.0) -> None:
        if not 0.0 <= loss <= 1.0:
            raise ValueError("loss probability outside [0, 1]")
        self.links[(src, dst)] = Link(latency, loss)

    def set_duplex(self, a: str, b: str, latency: int, loss: float = 0.0) -> None:
        self.set_link(a, b, latency, loss)
        self.set_link(b, a, latency, loss)

    def link(self, src: str, dst: str) -> Link:
        return self.links.get((src, dst), self.default_link)

    def _table_add(self, table: dict, prefix: str, actor: str) -> None:
        length, net = _parse_prefix(prefix)
        table.setdefault(length, {})[net] = actor
        self._lengths = sorted(set(self._routes) | set(self._overrides), reverse=True)

    def add_route(self, prefix: str, actor: str) -> None:
        self._table_add(self._routes, prefix, actor)

    def add_override(self, prefix: str, actor: str) -> None:
        self._table_add(self._overrides, prefix, actor)

    def remove_override(self, prefix: str) -> None:
        length, net = _parse_prefix(prefix)
        self._overrides.get(length, {}).pop(net, None)

    def lookup(self, dst_ip: int, use_overrides: bool = True) -> str | None:
        for length in self._lengths:
            mask = (0xFFFFFFFF << (32 - length)) & 0xFFFFFFFF if length else 0
            net = dst_ip & mask
            if use_overrides:
                hit = self._overrides.get(length, {}).get(net)
                if hit is not None:
                    return hit
            hit = self._routes.get(length, {}).get(net)
            if hit is not None:
                return hit
        return None

    # -- delivery --------------------------------------------------------
    def _loss_stream(self, src: str, dst: str) -> SeededRng:
        rng = self._loss_rng.get((src, dst))
        if rng is None:
            rng = self.rng.fork(self._host_index.get(src, 0xFFFF), self._host_index.get(dst, 0xFFFF))
            self._loss_rng[(src, dst)] = rng
        return rng

    def record_control(self, sender: str, count: int = 1) -> None:
        """Log control-plane messages (BGP announcements) sent by ``sender``."""
        self.control[sender] += count

    def deliver(self, sender: str, unit, bypass_overrides: bool = False) -> Event | None:
        dst = self.lookup(unit.dst_ip, use_overrides=not bypass_overrides)
        n = unit_count(unit)
        if dst is None:
            self.no_route[sender] += n
            return None
        self.sent[(sender, dst)] += n
        link = self.links.get((sender, dst), self.default_link)
        if link.loss > 0.0:
            rng = self._loss_stream(sender, dst)
            if isinstance(unit, Batch):
                kept = [u for u in unit.units if not rng.bernoulli(link.loss)]
                self.dropped[(sender, dst)] += n - len(kept)
                if not kept:
                    return None
                unit = Batch(kept, unit.dst_ip)
            elif isinstance(unit, TxidSweep):
                lost = rng.bernoulli_indices(n, link.loss)
                self.dropped[(sender, dst)] += len(lost)
                if len(lost) == n:
                    return None
                unit.lost = lost
            elif rng.bernoulli(link.loss):
                self.dropped[(sender, dst)] += 1
                return None
        return self.engine.schedule(self.engine.now + link.latency, dst, unit)

    # -- accounting ------------------------------------------------------
    def sent_by(self, sender: str) -> int:
        return sum(v for (s, _), v in self.sent.items() if s == sender) + self.no_route[sender]

    def sent_from_to(self, sender: str, dst: str) -> int:
        return self.sent[(sender, dst)]
