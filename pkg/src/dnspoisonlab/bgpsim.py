"""AS relationships, Gao-Rexford route selection and hijack verdicts.

Routes are chosen by relationship (own origin, then customer, peer,
provider), then AS-path length, then the lowest next-hop AS number.
Customer routes are exported to everyone; peer and provider routes only
to customers.  Under those rules the stable state can be computed in
three passes instead of iterating to a fixed point:

1. customer routes climb the provider DAG (shortest first);
2. ASes without one take a one-hop peer route to a peer's customer route;
3. provider routes flow down to everyone still without a route.
"""

from __future__ import annotations

import heapq
import ipaddress
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

P2C = -1
PEER = 0

PREF = {"origin": 0, "customer": 1, "peer": 2, "provider": 3}


class TopologyError(ValueError):
    pass


class TopologyParseError(TopologyError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class AsTopology:
    providers: dict[int, set[int]] = field(default_factory=dict)
    customers: dict[int, set[int]] = field(default_factory=dict)
    peers: dict[int, set[int]] = field(default_factory=dict)
    size_class: dict[int, str] = field(default_factory=dict)

    def add_node(self, asn: int) -> None:
        for table in (self.providers, self.customers, self.peers):
            table.setdefault(asn, set())

    @property
    def nodes(self) -> list[int]:
        return sorted(self.providers)

    def relationship(self, a: int, b: int) -> str | None:
        """Role of ``b`` as seen from ``a``: customer, peer, provider or None."""
        if b in self.customers.get(a, ()):
            return "customer"
        if b in self.peers.get(a, ()):
            return "peer"
        if b in self.providers.get(a, ()):
            return "provider"
        return None

    def add_edge(self, a: int, b: int, rel: int) -> None:
        if a == b:
            raise TopologyError(f"self-loop on AS{a}")
        if self.relationship(a, b) is not None:
            raise TopologyError(f"duplicate edge between AS{a} and AS{b}")
        self.add_node(a)
        self.add_node(b)
        if rel == P2C:
            self.customers[a].add(b)
            self.providers[b].add(a)
        elif rel == PEER:
            self.peers[a].add(b)
            self.peers[b].add(a)
        else:
            raise TopologyError(f"unknown relationship {rel}")

    def edges(self) -> list[tuple[int, int, int]]:
        out = [(p, c, P2C) for p in self.nodes for c in sorted(self.customers[p])]
        out += [(a, b, PEER) for a in self.nodes for b in sorted(self.peers[a]) if a < b]
        return out

    def provider_cycle(self) -> list[int] | None:
        """A provider-to-customer cycle if one exists (Kahn's algorithm)."""
        indeg = {n: len(self.providers[n]) for n in self.nodes}
        queue = deque(n for n in self.nodes if indeg[n] == 0)
        seen = 0
        while queue:
            n = queue.popleft()
            seen += 1
            for c in self.customers[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if seen == len(indeg):
            return None
        return sorted(n for n, d in indeg.items() if d > 0)

    def validate(self) -> dict:
        cycle = self.provider_cycle()
        if cycle is not None:
            raise TopologyError(f"provider-customer cycle among ASes {cycle[:10]}")
        return self.report()

    def report(self) -> dict:
        p2c = sum(len(c) for c in self.customers.values())
        peer = sum(len(p) for p in self.peers.values()) // 2
        return {
            "nodes": len(self.providers),
            "p2c_edges": p2c,
            "peer_edges": peer,
            "tier1": sum(1 for n in self.nodes if not self.providers[n]),
            "stubs": sum(1 for n in self.nodes if not self.customers[n]),
            "acyclic": self.provider_cycle() is None,
        }


def parse_topology(lines: Iterable[str]) -> AsTopology:
    topo = AsTopology()
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) < 3:
            raise TopologyParseError(no, f"expected 'asA|asB|rel', got {line!r}")
        try:
            a, b, rel = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise TopologyParseError(no, f"non-integer field in {line!r}") from None
        if rel not in (P2C, PEER):
            raise TopologyParseError(no, f"relationship must be -1 or 0, got {rel}")
        try:
            topo.add_edge(a, b, rel)
        except TopologyError as exc:
            raise TopologyParseError(no, str(exc)) from None
    return topo


def load_topology(source) -> AsTopology:
    """Read a CAIDA-style ``asA|asB|rel`` file (path or text) and validate it."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text()
    else:
        text = source
    topo = parse_topology(text.splitlines())
    topo.validate()
    return topo


def synthetic_topology(n: int = 1000, seed: int = 7, providers_per_node: int = 2,
                       peer_prob: float = 0.15, tier1: int = 5) -> AsTopology:
    """Preferential-attachment AS graph with business relationships.

    A clique of ``tier1`` ASes peer with each other.  Each new AS buys
    transit from up to ``providers_per_node`` earlier ASes picked in
    proportion to their customer degree, and peers with a similar-sized
    AS with probability ``peer_prob``.
    """
    if n < tier1 + 1:
        raise ValueError("need more ASes than tier-1 seeds")
    rng = np.random.default_rng(seed)
    topo = AsTopology()
    first = 1
    for i in range(tier1):
        topo.add_node(first + i)
    for i in range(tier1):
        for j in range(i + 1, tier1):
            topo.add_edge(first + i, first + j, PEER)
    weights = [1.0] * tier1
    for asn in range(first + tier1, first + n):
        k = min(providers_per_node, asn - first)
        w = np.asarray(weights)
        picks = rng.choice(asn - first, size=k, replace=False, p=w / w.sum())
        topo.add_node(asn)
        for idx in sorted(int(x) for x in picks):
            topo.add_edge(first + idx, asn, P2C)
            weights[idx] += 1.0
        weights.append(1.0)
        if rng.random() < peer_prob and asn - first > tier1:
            other = first + tier1 + int(rng.integers(0, asn - first - tier1))
            if topo.relationship(asn, other) is None and not _related(topo, asn, other):
                topo.add_edge(asn, other, PEER)
    for a in topo.nodes:
        cone = len(topo.customers[a])
        if not topo.providers[a]:
            topo.size_class[a] = "tier1"
        elif cone == 0:
            topo.size_class[a] = "stub"
        elif cone < 10:
            topo.size_class[a] = "small"
        else:
            topo.size_class[a] = "medium"
    topo.validate()
    return topo


def _related(topo: AsTopology, a: int, b: int) -> bool:
    # keep peering off provider chains so the graph stays policy-sane
    return bool(topo.providers[a] & {b}) or bool(topo.providers[b] & {a})


@dataclass(frozen=True)
class PrefixAnnouncement:
    prefix: str
    origin: int
    legit: bool = True

    def __post_init__(self):
        net = ipaddress.IPv4Network(self.prefix, strict=False)
        if not 8 <= net.prefixlen <= 32:
            raise ValueError("announced prefix length must be within [8, 32]")


@dataclass(frozen=True)
class Route:
    origin: int
    as_path: tuple[int, ...]  # next hop first, origin last; empty for own origin
    learned_from: str

    @property
    def next_hop(self) -> int | None:
        return self.as_path[0] if self.as_path else None

    def key(self) -> tuple:
        return (PREF[self.learned_from], len(self.as_path), self.next_hop or 0)


@dataclass
class RouteState:
    routes: dict[tuple[int, str], Route] = field(default_factory=dict)

    def best(self, asn: int, prefix: str) -> Route | None:
        return self.routes.get((asn, _norm(prefix)))

    def catchment(self, prefix: str, origin: int) -> set[int]:
        p = _norm(prefix)
        return {a for (a, q), r in self.routes.items() if q == p and r.origin == origin}


def _norm(prefix: str) -> str:
    return str(ipaddress.IPv4Network(prefix, strict=False))


def propagate(topology: AsTopology, announcements: Iterable[PrefixAnnouncement]) -> RouteState:
    by_prefix: dict[str, set[int]] = {}
    for ann in announcements:
        if ann.origin not in topology.providers:
            raise TopologyError(f"origin AS{ann.origin} not in topology")
        by_prefix.setdefault(_norm(ann.prefix), set()).add(ann.origin)
    state = RouteState()
    for prefix in sorted(by_prefix):
        for asn, route in _propagate_one(topology, by_prefix[prefix]).items():
            state.routes[(asn, prefix)] = route
    return state


def _propagate_one(topo: AsTopology, origins: set[int]) -> dict[int, Route]:
    best: dict[int, Route] = {o: Route(o, (), "origin") for o in origins}

    # 1. customer routes: customers are settled before their providers
    for asn in _topo_order_bottom_up(topo, topo.nodes):
        if asn in origins:
            continue
        choice = None
        for cust in topo.customers[asn]:
            r = best.get(cust)
            if r is None:
                continue
            cand = Route(r.origin, (cust,) + r.as_path, "customer")
            if choice is None or cand.key() < choice.key():
                choice = cand
        if choice is not None:
            best[asn] = choice

    # 2. one-hop peer routes from peers holding origin/customer routes
    upward = dict(best)
    for asn in topo.nodes:
        if asn in upward:
            continue
        choice = None
        for peer in topo.peers[asn]:
            r = upward.get(peer)
            if r is None or asn in r.as_path:
                continue
            cand = Route(r.origin, (peer,) + r.as_path, "peer")
            if choice is None or cand.key() < choice.key():
                choice = cand
        if choice is not None:
            best[asn] = choice

    # 3. provider routes flow downward; popping (length, next hop) in order
    # gives every AS its shortest, lowest-next-hop provider route
    heap = [(len(r.as_path), -1, a) for a, r in best.items()]
    heapq.heapify(heap)
    while heap:
        length, via, asn = heapq.heappop(heap)
        if via >= 0:
            if asn in best:
                continue
            up = best[via]
            best[asn] = Route(up.origin, (via,) + up.as_path, "provider")
        route = best[asn]
        for cust in topo.customers[asn]:
            if cust not in best and cust not in route.as_path:
                heapq.heappush(heap, (length + 1, asn, cust))
    return best


def _topo_order_bottom_up(topo: AsTopology, nodes: list[int]) -> list[int]:
    """Customers before providers, restricted to ``nodes``."""
    keep = set(nodes)
    pending = {n: sum(1 for c in topo.customers[n] if c in keep) for n in keep}
    queue = deque(sorted(n for n, d in pending.items() if d == 0))
    out = []
    while queue:
        n = queue.popleft()
        out.append(n)
        for p in sorted(topo.providers[n]):
            if p in keep:
                pending[p] -= 1
                if pending[p] == 0:
                    queue.append(p)
    return out


def is_valley_free(topo: AsTopology, asn: int, path: tuple[int, ...]) -> bool:
    """Whether ``asn`` followed by ``path`` is a valid export chain."""
    hops = (asn,) + path
    if len(set(hops)) != len(hops):
        return False
    phase = 0  # 0 climbing, 1 after peer or descending
    for a, b in zip(hops, hops[1:]):
        rel = topo.relationship(a, b)
        if rel is None:
            return False
        if rel == "provider":  # a sends toward its provider: a learned from provider
            if phase:
                return False
        elif rel == "peer":
            if phase:
                return False
            phase = 1
        else:
            phase = 1
    return True


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

HIJACK_PREFIX = "203.0.112.0/22"


def same_prefix_verdict(topology: AsTopology, attacker: int, victim: int, observer: int,
                        prefix: str = HIJACK_PREFIX) -> bool:
    """True when ``observer`` routes the victim's prefix to the attacker."""
    if attacker == victim:
        raise ValueError("attacker and victim must differ")
    state = propagate(topology, [PrefixAnnouncement(prefix, victim, True),
                                 PrefixAnnouncement(prefix, attacker, False)])
    route = state.best(observer, prefix)
    return route is not None and route.origin == attacker


def subprefix_verdict(announcements: Iterable, target_ip: str | int | None = None) -> bool:
    """Vulnerable iff the most specific legitimate covering prefix is shorter than /24.

    More-specifics beyond /24 are assumed filtered, so a /24 cannot be
    out-specified.
    """
    nets = []
    for a in announcements:
        if isinstance(a, PrefixAnnouncement):
            if not a.legit:
                continue
            a = a.prefix
        nets.append(ipaddress.IPv4Network(a, strict=False))
    if target_ip is not None:
        ip = ipaddress.IPv4Address(target_ip)
        nets = [n for n in nets if ip in n]
    if not nets:
        raise ValueError("no covering announcement")
    return max(n.prefixlen for n in nets) < 24


def hijack_prefix_for(legit_prefix: str, target_ip: str | int) -> str:
    """The /24 covering ``target_ip`` inside ``legit_prefix`` (the sub-prefix to announce)."""
    net = ipaddress.IPv4Network(f"{ipaddress.IPv4Address(target_ip)}/24", strict=False)
    if not net.subnet_of(ipaddress.IPv4Network(legit_prefix, strict=False)):
        raise ValueError("target outside the legitimate prefix")
    return str(net)


@dataclass
class FractionReport:
    trials: int
    resolver_to_ns: int
    either_direction: int

    def fraction(self, which: str = "resolver_to_ns") -> float:
        return getattr(self, which) / self.trials if self.trials else 0.0

    def ci(self, which: str = "resolver_to_ns", z: float = 1.96) -> tuple[float, float]:
        p = self.fraction(which)
        h = z * math.sqrt(p * (1 - p) / self.trials) if self.trials else 0.0
        return max(0.0, p - h), min(1.0, p + h)


def same_prefix_fraction(topology: AsTopology, trials: int = 1000, seed: int = 1) -> FractionReport:
    """Random (attacker, nameserver AS, resolver AS) triples; how often the attacker wins.

    ``resolver_to_ns`` counts captures of the resolver's route to the
    nameserver's prefix; ``either_direction`` also counts captures of the
    nameserver's route to the resolver's prefix.
    """
    rng = np.random.default_rng(seed)
    nodes = np.asarray(topology.nodes)
    forward = both = 0
    cache: dict[tuple[int, int], RouteState] = {}
    pfx = HIJACK_PREFIX
    for _ in range(trials):
        att, ns, res = (int(x) for x in rng.choice(nodes, size=3, replace=False))
        st = cache.get((att, ns))
        if st is None:
            st = cache[(att, ns)] = propagate(topology, [PrefixAnnouncement(pfx, ns, True),
                                                        PrefixAnnouncement(pfx, att, False)])
        hit = st.best(res, pfx).origin == att if st.best(res, pfx) else False
        back = cache.get((att, res))
        if back is None:
            back = cache[(att, res)] = propagate(topology, [PrefixAnnouncement(pfx, res, True),
                                                           PrefixAnnouncement(pfx, att, False)])
        rb = back.best(ns, pfx)
        hit_back = rb is not None and rb.origin == att
        forward += hit
        both += hit or hit_back
        if len(cache) > 4096:
            cache.clear()
    return FractionReport(trials, forward, both)
