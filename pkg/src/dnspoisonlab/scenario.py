"""Experiment description, its YAML form, and the per-trial world it builds.

A scenario is plain data: nested mappings of scalars and lists, so it
round-trips through YAML and hashes stably.  Times carry their unit in
the key (``query_timeout_ms``, ``budget_s``).  See ``docs/scenario.md``
for the schema.
"""

from __future__ import annotations

import copy
import hashlib
import ipaddress
import json
import struct
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

import yaml

from .dnsactors import (
    CacheEntry,
    Nameserver,
    NameserverConfig,
    OpenForwarder,
    Provenance,
    Resolver,
    ResolverConfig,
    Trigger,
    TriggerClient,
    Zone,
)
from .netmodel import (
    QType,
    ResourceRecord,
    RoutingFabric,
    a_rdata,
    encode_name_plain,
    mx_rdata,
    srv_rdata,
    txt_rdata,
)
from .simcore import Engine, SeededRng, millis, seconds, stream_id

FORMAT_VERSION = 1
METHODS = ("hijack", "saddns", "frag")
ROLES = ("resolver", "nameserver", "attacker", "client", "forwarder")

DEFAULT_ADDRESSES = {
    "resolver": "10.0.0.53",
    "client": "10.0.0.100",
    "forwarder": "198.18.0.1",
    "nameserver": "192.0.2.53",
    "attacker": "203.0.113.66",
}

DEFAULT_ZONE = {
    "name": "victim.example",
    "records": [
        {"name": "@", "type": "NS", "ttl": 86400, "data": "ns1.victim.example"},
        {"name": "ns1", "type": "A", "ttl": 86400, "data": "$nameserver"},
        {"name": "www", "type": "A", "ttl": 300, "data": "198.51.100.10"},
        {"name": "*", "type": "A", "ttl": 300, "data": "198.51.100.20"},
    ],
}

ATTACKER_DEFAULTS = {
    "saddns": {
        "budget_s": 800.0,
        "mute_burst": 20,
        "scan_lo": 1024,
        "scan_hi": 65535,
        "set_size": None,  # defaults to the resolver's ICMP limit
        "window_ms": None,  # defaults to the resolver's ICMP window
        "scan_delay_ms": 25.0,
        "iteration_timeout_s": 5.0,
        "known_port": None,
        "poison_ttl": 86400,
        "max_iterations": None,
    },
    "frag": {
        "mtu": 548,
        "max_triggers": 1,
        "window": 64,
        "lambda_estimate": None,  # defaults to the nameserver's cross-traffic rate
        "know_order": True,
        "attempt_timeout_s": 3.0,
        "poison_ttl": 86400,
    },
    "hijack": {
        "kind": "subprefix",
        "legit_prefix": "192.0.0.0/20",
        "topology": {"synthetic": {"n": 200, "seed": 7}},
        "attacker_as": None,
        "victim_as": None,
        "observer_as": None,
        "budget_s": 10.0,
        "poison_ttl": 86400,
    },
}

TARGET_DEFAULTS = {"qname": "www.victim.example", "qtype": "A", "label_length": 12,
                   "bloat_labels": 0, "control": "target"}
TRIGGER_DEFAULTS = {"kind": "direct"}
FABRIC_DEFAULTS = {"latency_ms": 10.0, "loss": 0.0, "links": []}

_TIME_UNITS = {"_ms": 1_000_000, "_s": 1_000_000_000}
_RESOLVER_TIMES = {"query_timeout", "icmp_window", "defrag_timeout"}
_NAMESERVER_TIMES = {"rrl_mute"}


class ScenarioValidationError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid scenario: " + "; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# Record data
# ---------------------------------------------------------------------------

def qtype_code(name) -> int:
    if isinstance(name, int):
        return name
    try:
        return int(QType[str(name).upper()])
    except KeyError:
        raise ValueError(f"unknown record type {name!r}") from None


def rdata_from_text(rtype: int, text: str) -> bytes:
    text = str(text).strip()
    if text.startswith("\\#"):
        parts = text.split()
        return bytes.fromhex("".join(parts[2:]))
    if rtype == QType.A:
        return a_rdata(text)
    if rtype in (QType.NS, QType.CNAME):
        return encode_name_plain(text)
    if rtype == QType.TXT:
        return txt_rdata(text.encode())
    if rtype == QType.MX:
        pref, host = text.split()
        return mx_rdata(int(pref), host)
    if rtype == QType.SRV:
        prio, weight, port, target = text.split()
        return srv_rdata(int(prio), int(weight), int(port), target)
    if rtype == QType.NAPTR:
        order, pref, flags, service, regexp, repl = text.split()
        out = struct.pack("!HH", int(order), int(pref))
        for s in (flags, service, regexp):
            s = s.strip('"').encode()
            out += bytes([len(s)]) + s
        return out + encode_name_plain(repl)
    if rtype == QType.IPSECKEY:
        prec, gwtype, alg, gw, key = text.split()
        return struct.pack("!BBB", int(prec), int(gwtype), int(alg)) + a_rdata(gw) + bytes.fromhex(key)
    raise ValueError(f"no text form for type {rtype}")


def malicious_rdata(rtype: int, attacker_ip: str) -> bytes:
    """Record data pointing the victim at the attacker, for each record type."""
    if rtype == QType.A:
        return a_rdata(attacker_ip)
    if rtype == QType.MX:
        return mx_rdata(10, "mail.attacker.example")
    if rtype == QType.TXT:
        return txt_rdata(f"v=spf1 ip4:{attacker_ip} -all".encode())
    if rtype == QType.SRV:
        return srv_rdata(0, 0, 5060, "sip.attacker.example")
    if rtype in (QType.NS, QType.CNAME):
        return encode_name_plain("attacker.example")
    if rtype == QType.IPSECKEY:
        return struct.pack("!BBB", 10, 1, 2) + a_rdata(attacker_ip) + bytes(16)
    return a_rdata(attacker_ip)


def _owner(name: str, zone: str) -> str:
    name = name.rstrip(".")
    if name == "@":
        return zone
    if name.lower() == zone or name.lower().endswith("." + zone):
        return name.lower()
    return f"{name}.{zone}".lower()


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass
class AttackScenario:
    name: str
    method: str
    seed: int = 1
    trials: int = 100
    description: str = ""
    profile: str | None = None
    addresses: dict = field(default_factory=dict)
    zone: dict = field(default_factory=dict)
    resolver: dict = field(default_factory=dict)
    nameserver: dict = field(default_factory=dict)
    fabric: dict = field(default_factory=dict)
    trigger: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    attacker: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    # -- serialisation ------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "AttackScenario":
        if not isinstance(data, dict):
            raise ScenarioValidationError(["scenario must be a mapping"])
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        problems = [f"unknown field '{k}'" for k in unknown]
        for req in ("name", "method"):
            if req not in data:
                problems.append(f"missing field '{req}'")
        if problems:
            raise ScenarioValidationError(problems)
        sc = cls(**copy.deepcopy(data))
        sc.validate()
        return sc

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    @classmethod
    def from_yaml(cls, text: str) -> "AttackScenario":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioValidationError([f"YAML syntax: {exc}"]) from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "AttackScenario":
        return cls.from_yaml(Path(path).read_text())

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> "AttackScenario":
        data = self.to_dict()
        data.update(changes)
        return AttackScenario.from_dict(data)

    # -- resolved sections --------------------------------------------------
    def section(self, name: str) -> dict:
        defaults = {
            "target": TARGET_DEFAULTS,
            "trigger": TRIGGER_DEFAULTS,
            "fabric": FABRIC_DEFAULTS,
            "attacker": ATTACKER_DEFAULTS.get(self.method, {}),
            "addresses": DEFAULT_ADDRESSES,
            "zone": DEFAULT_ZONE,
        }.get(name, {})
        merged = copy.deepcopy(defaults)
        merged.update(copy.deepcopy(getattr(self, name)))
        return merged

    def resolver_config(self) -> ResolverConfig:
        kwargs = _convert(self.resolver, ResolverConfig, _RESOLVER_TIMES, "resolver")
        if "port_range" in kwargs:
            kwargs["port_range"] = tuple(kwargs["port_range"])
        return ResolverConfig(**kwargs)

    def zone_records(self) -> list[ResourceRecord]:
        z = self.section("zone")
        addrs = self.section("addresses")
        zone = z["name"].lower().rstrip(".")
        out = []
        for rec in z["records"]:
            rtype = qtype_code(rec["type"])
            data = str(rec["data"])
            if data.startswith("$"):
                data = addrs[data[1:]]
            out.append(ResourceRecord(_owner(rec["name"], zone), rtype, int(rec.get("ttl", 300)),
                                      rdata_from_text(rtype, data)))
        return out

    def nameserver_config(self) -> NameserverConfig:
        kwargs = _convert(self.nameserver, NameserverConfig, _NAMESERVER_TIMES, "nameserver")
        addrs = self.section("addresses")
        mtus = {}
        for dst, mtu in (kwargs.get("per_dst_mtu") or {}).items():
            mtus[int(ipaddress.IPv4Address(addrs.get(dst, dst)))] = int(mtu)
        kwargs["per_dst_mtu"] = mtus
        kwargs["zone_name"] = self.section("zone")["name"].lower()
        kwargs["records"] = self.zone_records()
        return NameserverConfig(**kwargs)

    def trigger_model(self) -> Trigger:
        t = self.section("trigger")
        return Trigger(kind=t["kind"],
                       period=seconds(float(t.get("period_s", 0))),
                       delay=millis(float(t.get("delay_ms", 200))))

    # -- validation -----------------------------------------------------------
    def validate(self) -> None:
        problems = []
        if self.format_version != FORMAT_VERSION:
            problems.append(f"format_version: expected {FORMAT_VERSION}, got {self.format_version}")
        if self.method not in METHODS:
            problems.append(f"method: must be one of {', '.join(METHODS)}")
        if not isinstance(self.trials, int) or self.trials < 1:
            problems.append("trials: must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 1 << 64:
            problems.append("seed: must be an unsigned 64-bit integer")
        shape = [f"{sec}: must be a mapping" for sec in
                 ("addresses", "zone", "resolver", "nameserver", "fabric", "trigger", "target", "attacker")
                 if not isinstance(getattr(self, sec), dict)]
        if shape:
            # the checks below need mappings
            raise ScenarioValidationError(problems + shape)
        for sec, allowed in (("addresses", ROLES), ("target", TARGET_DEFAULTS),
                             ("fabric", FABRIC_DEFAULTS)):
            for k in getattr(self, sec):
                if k not in allowed:
                    problems.append(f"{sec}.{k}: unknown key")
        if self.method in ATTACKER_DEFAULTS:
            for k in self.attacker:
                if k not in ATTACKER_DEFAULTS[self.method]:
                    problems.append(f"attacker.{k}: unknown key for method {self.method}")
        for label, build in (("resolver", self.resolver_config), ("nameserver", self.nameserver_config),
                             ("trigger", self.trigger_model)):
            try:
                build()
            except ScenarioValidationError as exc:
                problems += exc.problems
            except (TypeError, ValueError, KeyError) as exc:
                problems.append(f"{label}: {exc}")
        try:
            for role, ip in self.section("addresses").items():
                ipaddress.IPv4Address(ip)
        except ValueError as exc:
            problems.append(f"addresses: {exc}")
        fab = self.section("fabric")
        if not 0.0 <= float(fab.get("loss", 0.0)) <= 1.0:
            problems.append("fabric.loss: must be within [0, 1]")
        for link in fab.get("links", []):
            for end in ("a", "b"):
                if link.get(end) not in ROLES:
                    problems.append(f"fabric.links: unknown role {link.get(end)!r}")
        if self.profile is not None:
            from .appimpact import ProfileError, get_profile

            try:
                get_profile(self.profile)
            except ProfileError as exc:
                problems.append(f"profile: {exc}")
        if problems:
            raise ScenarioValidationError(problems)


def _convert(section: dict, cls, time_fields: set[str], label: str) -> dict:
    names = {f.name for f in fields(cls)}
    out, problems = {}, []
    for key, value in section.items():
        base, scale = key, None
        for suffix, mult in _TIME_UNITS.items():
            if key.endswith(suffix) and key[: -len(suffix)] in time_fields:
                base, scale = key[: -len(suffix)], mult
        if base not in names or base in ("records", "zone_name"):
            problems.append(f"{label}.{key}: unknown key")
            continue
        if base in time_fields and scale is None:
            problems.append(f"{label}.{key}: give a unit suffix (_ms or _s)")
            continue
        out[base] = int(round(float(value) * scale)) if scale else value
    if problems:
        raise ScenarioValidationError(problems)
    return out


# ---------------------------------------------------------------------------
# Bundled scenarios
# ---------------------------------------------------------------------------

def bundled_names() -> list[str]:
    root = resources.files("dnspoisonlab").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_path(name: str):
    return resources.files("dnspoisonlab").joinpath("scenarios", f"{name}.yaml")


def bundled_scenario(name: str) -> AttackScenario:
    path = bundled_path(name)
    if not path.is_file():
        raise ScenarioValidationError([f"no bundled scenario named {name!r}"])
    return AttackScenario.from_yaml(path.read_text())


def resolve_scenario(ref: str) -> AttackScenario:
    """Load a scenario from a file path or a bundled name."""
    p = Path(ref)
    if p.is_file():
        return AttackScenario.load(p)
    return bundled_scenario(ref)


# ---------------------------------------------------------------------------
# Worlds
# ---------------------------------------------------------------------------

@dataclass
class Compiled:
    """Per-scenario data shared read-only by every trial."""

    scenario: AttackScenario
    resolver_config: ResolverConfig
    nameserver_config: NameserverConfig
    zone: Zone
    trigger: Trigger
    target: dict
    attacker: dict
    fabric: dict
    ips: dict[str, int]
    allowed_triggers: tuple[str, ...] | None


def compile_scenario(scenario: AttackScenario) -> Compiled:
    return _compile_cached(scenario.canonical_json())


@lru_cache(maxsize=64)
def _compile_cached(text: str) -> Compiled:
    sc = AttackScenario.from_dict(json.loads(text))
    ns_cfg = sc.nameserver_config()
    allowed = None
    if sc.profile is not None:
        from .appimpact import allowed_triggers, get_profile

        allowed = allowed_triggers(get_profile(sc.profile))
    ips = {r: int(ipaddress.IPv4Address(a)) for r, a in sc.section("addresses").items()}
    return Compiled(sc, sc.resolver_config(), ns_cfg, Zone(ns_cfg.zone_name, ns_cfg.records),
                    sc.trigger_model(), sc.section("target"), sc.section("attacker"),
                    sc.section("fabric"), ips, allowed)


@dataclass
class World:
    compiled: Compiled
    trial: int
    engine: Engine
    fabric: RoutingFabric
    resolver: Resolver
    nameserver: Nameserver
    client: TriggerClient
    forwarder: OpenForwarder
    rng: SeededRng
    poisoned: list = field(default_factory=list)

    @property
    def ips(self) -> dict[str, int]:
        return self.compiled.ips

    @property
    def success(self) -> bool:
        return bool(self.poisoned)

    def add_attacker(self, host) -> None:
        self.fabric.add_host(host, self.rng.fork(5))


NS_PREFIX_ROLE = "nameserver"


def build_world(compiled: Compiled, trial: int, nameserver_prefix: str | None = None) -> World:
    sc = compiled.scenario
    rng = SeededRng(sc.seed, stream_id(trial))
    engine = Engine()
    fab_cfg = compiled.fabric
    fabric = RoutingFabric(engine, rng.fork(0), millis(float(fab_cfg["latency_ms"])), float(fab_cfg["loss"]))
    ips = compiled.ips
    ns = Nameserver("nameserver", ips["nameserver"], compiled.nameserver_config, compiled.zone)
    resolver = Resolver("resolver", ips["resolver"], compiled.resolver_config,
                        {compiled.zone.name: ips["nameserver"]}, truth=compiled.zone.is_genuine)
    client = TriggerClient("client", ips["client"], ips["resolver"], ips["forwarder"],
                           allowed=compiled.allowed_triggers)
    forwarder = OpenForwarder("forwarder", ips["forwarder"], ips["resolver"])
    fabric.add_host(resolver, rng.fork(1))
    fabric.add_host(ns, rng.fork(2), prefix=nameserver_prefix)
    fabric.add_host(client, rng.fork(3))
    fabric.add_host(forwarder, rng.fork(4))
    for link in fab_cfg.get("links", []):
        lat = millis(float(link.get("latency_ms", fab_cfg["latency_ms"])))
        loss = float(link.get("loss", fab_cfg["loss"]))
        if link.get("duplex", True):
            fabric.set_duplex(link["a"], link["b"], lat, loss)
        else:
            fabric.set_link(link["a"], link["b"], lat, loss)
    world = World(compiled, trial, engine, fabric, resolver, ns, client, forwarder, rng)

    def on_insert(entry: CacheEntry) -> None:
        if entry.provenance is Provenance.POISONED:
            world.poisoned.append((engine.now, entry))
            engine.stop()

    resolver.cache_listeners.append(on_insert)
    return world
