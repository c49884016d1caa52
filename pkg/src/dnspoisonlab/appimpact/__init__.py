"""Application profiles, attack applicability rules and poisoning impact."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from ..simcore import seconds

QUERY_CONTROL = ("target", "known", "config")
TRIGGERS = ("direct", "bounce", "authentication", "connection-DoS", "waiting", "on-demand", "third-party")
RECORD_TYPES = ("A", "MX", "TXT", "SRV", "NAPTR", "IPSECKEY", "CNAME")
DNS_USES = ("location", "federation", "authorisation")
PROTECTIONS = ("TLS", "psk", "cert", "DNSSEC", "fallback", "2FA", "ROA")
IMPACTS = ("Hijack", "Downgrade", "DoS")
METHODS = ("hijack", "saddns", "frag")

# Timer periods for "waiting" triggers (firewall value from vendor measurements;
# the rest are assumed refresh intervals).
WAITING_PERIODS = {"Firewall": seconds(500), "Bitcoin": seconds(3600), "RPKI": seconds(3600)}
DEFAULT_WAITING_PERIOD = seconds(3600)
RECONNECT_DELAY = seconds(1)


class ProfileError(ValueError):
    pass


class Applicability(str, Enum):
    APPLICABLE = "yes"
    THIRD_PARTY = "third-party"
    NOT_APPLICABLE = "no"

    @property
    def usable(self) -> bool:
        return self is not Applicability.NOT_APPLICABLE


@dataclass(frozen=True)
class Impact:
    category: str
    detail: str

    def __str__(self) -> str:
        return f"{self.category}: {self.detail}"

    @classmethod
    def parse(cls, text: str) -> "Impact":
        cat, _, detail = text.partition(":")
        cat = cat.strip()
        if cat not in IMPACTS or not detail.strip():
            raise ProfileError(f"bad impact {text!r}")
        return cls(cat, detail.strip())


@dataclass(frozen=True)
class ApplicationProfile:
    name: str
    query_name_control: str
    trigger: tuple[str, ...]
    record_types: tuple[str, ...]
    dns_use: tuple[str, ...]
    protections: tuple[str, ...]  # verbatim; "(TLS)" marks an optional protection
    impact: Impact
    category: str = ""
    use_case: str = ""
    known: str = ""
    vulnerable: str = "yes"  # yes | conditional

    def __post_init__(self):
        missing = [f for f in ("name", "query_name_control", "trigger", "record_types", "impact")
                   if not getattr(self, f)]
        if missing:
            raise ProfileError(f"profile incomplete, missing: {', '.join(missing)}")
        if self.query_name_control not in QUERY_CONTROL:
            raise ProfileError(f"query_name_control must be one of {QUERY_CONTROL}")
        for t in self.trigger:
            if t not in TRIGGERS:
                raise ProfileError(f"unknown trigger {t!r}")
        for r in self.record_types:
            if r not in RECORD_TYPES:
                raise ProfileError(f"unknown record type {r!r}")
        for p in self.protection_set:
            if p not in PROTECTIONS:
                raise ProfileError(f"unknown protection {p!r}")

    @property
    def protection_set(self) -> frozenset[str]:
        return frozenset(p.strip("()") for p in self.protections)


@dataclass(frozen=True)
class ApplicabilityVerdict:
    hijack: Applicability
    saddns: Applicability
    frag: Applicability
    rationale: dict = field(default_factory=dict, compare=False)

    def for_method(self, method: str) -> Applicability:
        return getattr(self, method)

    def as_dict(self) -> dict[str, str]:
        return {m: self.for_method(m).value for m in METHODS}


@dataclass(frozen=True)
class TableRow:
    profile: ApplicationProfile
    verdict: ApplicabilityVerdict


def _split(cell: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in cell.split(";") if x.strip())


def parse_table(text: str) -> list[TableRow]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(io.StringIO("\n".join(lines))):
        prof = ApplicationProfile(
            name=rec["name"],
            query_name_control=rec["query_name_control"],
            trigger=_split(rec["trigger"]),
            record_types=_split(rec["record_types"]),
            dns_use=_split(rec["dns_use"]),
            protections=_split(rec["protections"]),
            impact=Impact.parse(rec["impact"]),
            category=rec["category"],
            use_case=rec["use_case"],
            known=rec["known"],
            vulnerable=rec["vulnerable"],
        )
        try:
            verdict = ApplicabilityVerdict(*(Applicability(rec[m]) for m in METHODS))
        except ValueError as exc:
            raise ProfileError(f"{rec['name']}: {exc}") from None
        rows.append(TableRow(prof, verdict))
    return rows


def load_table() -> list[TableRow]:
    text = resources.files(__package__).joinpath("table1.csv").read_text()
    return parse_table(text)


def profiles() -> dict[str, ApplicationProfile]:
    return {r.profile.name: r.profile for r in load_table()}


def get_profile(name: str) -> ApplicationProfile:
    table = profiles()
    for key, prof in table.items():
        if key.lower() == name.lower():
            return prof
    raise ProfileError(f"unknown profile {name!r}; known: {', '.join(table)}")


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

# Rows whose verdict differs from the general rule, with a rationale code.
OVERRIDES: dict[tuple[str, str], tuple[Applicability, str]] = {
    ("CDN", "saddns"): (Applicability.NOT_APPLICABLE, "edge-resolvers-not-scannable"),
    ("Opportunistic-IKE", "saddns"): (Applicability.THIRD_PARTY, "gateway-triggered-lookup"),
    ("Opportunistic-IKE", "frag"): (Applicability.THIRD_PARTY, "gateway-triggered-lookup"),
    ("DV", "saddns"): (Applicability.NOT_APPLICABLE, "multi-vantage-validation"),
    ("DV", "frag"): (Applicability.NOT_APPLICABLE, "multi-vantage-validation"),
}


def _rule(profile: ApplicationProfile, method: str) -> tuple[Applicability, str]:
    ctl = profile.query_name_control
    if method == "hijack":
        return Applicability.APPLICABLE, "routing-only"
    if method == "saddns":
        # needs many triggered queries for a name it can predict
        if ctl == "target":
            return Applicability.APPLICABLE, "attacker-chosen-name"
        if ctl == "config":
            return Applicability.THIRD_PARTY, "needs-third-party-trigger"
        return Applicability.NOT_APPLICABLE, "too-few-queries"
    if ctl == "target":
        return Applicability.APPLICABLE, "attacker-chosen-name"
    if ctl == "config":
        return Applicability.THIRD_PARTY, "needs-third-party-trigger"
    if "waiting" in profile.trigger:
        return Applicability.NOT_APPLICABLE, "timer-only-trigger"
    return Applicability.THIRD_PARTY, "needs-third-party-trigger"


def applicable_methods(profile: ApplicationProfile) -> ApplicabilityVerdict:
    verdicts, why = [], {}
    for method in METHODS:
        v, code = OVERRIDES.get((profile.name, method)) or _rule(profile, method)
        verdicts.append(v)
        why[method] = code
    return ApplicabilityVerdict(*verdicts, rationale=why)


def poisoning_impact(profile: ApplicationProfile) -> Impact:
    return profile.impact


def vulnerability_label(profile: ApplicationProfile) -> str:
    """``vulnerable`` or ``conditionally-vulnerable`` (rows marked in parentheses)."""
    return "conditionally-vulnerable" if profile.vulnerable == "conditional" else "vulnerable"


def trigger_for(profile: ApplicationProfile, verdict: Applicability) -> dict:
    """Trigger section for a scenario built from ``profile``."""
    kinds = profile.trigger
    if verdict is Applicability.THIRD_PARTY and any(k in ("waiting", "connection-DoS") for k in kinds):
        return {"kind": "third-party"}
    first = kinds[0]
    if first in ("direct", "authentication"):
        return {"kind": "direct"}
    if first == "on-demand":
        return {"kind": "on-demand"}
    if first == "bounce":
        return {"kind": "bounce", "delay_ms": 200}
    if first == "connection-DoS":
        return {"kind": "bounce", "delay_ms": RECONNECT_DELAY / 1e6}
    if first == "waiting":
        period = WAITING_PERIODS.get(profile.name, DEFAULT_WAITING_PERIOD)
        return {"kind": "timer", "period_s": period / 1e9}
    return {"kind": "third-party"}


def allowed_triggers(profile: ApplicationProfile) -> tuple[str, ...]:
    verdict = applicable_methods(profile)
    kinds = set()
    for method in METHODS:
        v = verdict.for_method(method)
        if v.usable:
            kinds.add(trigger_for(profile, v)["kind"])
    if any(verdict.for_method(m) is Applicability.THIRD_PARTY for m in METHODS):
        kinds.add("third-party")
    return tuple(sorted(kinds))


QTYPE_FOR_RECORD = {"A": "A", "MX": "MX", "TXT": "TXT", "SRV": "SRV", "NAPTR": "NAPTR",
                    "IPSECKEY": "IPSECKEY", "CNAME": "CNAME"}


def scenario_from_profile(profile: ApplicationProfile, method: str, base=None):
    """Scenario skeleton for attacking ``profile`` with ``method``.

    ``base`` is the scenario to start from; by default the bundled scenario
    for that method.
    """
    from ..scenario import AttackScenario, bundled_scenario

    if method not in METHODS:
        raise ProfileError(f"unknown method {method!r}")
    verdict = applicable_methods(profile).for_method(method)
    if not verdict.usable:
        raise ProfileError(f"{method} is not applicable to {profile.name}")
    if base is None:
        base = bundled_scenario({"hijack": "hijack-subprefix", "saddns": "saddns-default",
                                 "frag": "fragdns-global-ipid"}[method])
    data = base.to_dict()
    slug = profile.name.lower().replace("/", "-").replace(" ", "-")
    data["name"] = f"profile-{slug}-{method}"
    data["description"] = (f"{method} against the {profile.name} profile "
                           f"({profile.use_case}); impact {profile.impact}")
    data["profile"] = profile.name
    data["trigger"] = trigger_for(profile, verdict)
    if profile.query_name_control == "target":
        data["target"] = dict(data.get("target", {}), control="target")
    else:
        data["target"] = dict(data.get("target", {}), control=profile.query_name_control)
    return AttackScenario.from_dict(data)
