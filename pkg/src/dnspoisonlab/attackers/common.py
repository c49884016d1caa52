"""Types shared by the three attack strategies."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum

from ..netmodel import Batch, Host, ip_str


class FailureReason(str, Enum):
    NONE = "none"
    BUDGET_EXHAUSTED = "budget exhausted"
    NOT_POISONED = "not poisoned"
    NOT_FRAGMENTED = "not fragmented"
    EDNS_TOO_SMALL = "EDNS too small"
    TARGET_NOT_IN_FRAGMENT = "target not in last fragment"
    NOT_INTERCEPTED = "not intercepted"
    FILTERED_MORE_SPECIFIC = "filtered more-specific"
    TRIGGER_REFUSED = "trigger refused"


class PreconditionError(ValueError):
    """Scenario does not meet an attack's preconditions."""


@dataclass
class AttackerKnowledge:
    """What the attacker knows; built only from its own packets and public facts."""

    knows_qname: bool = True
    qname_source: str = "target-controlled"  # target-controlled | well-known | config-needs-leak
    sampled_response: bytes | None = None
    predicted_second_fragments: list = field(default_factory=list)  # (bytes, weight)


@dataclass
class TrialResult:
    trial: int
    success: bool
    packets_sent_total: int
    packets_to_resolver: int
    packets_to_nameserver: int
    queries_triggered: int
    iterations: int
    sim_duration: int  # nanoseconds
    failure_reason: str = FailureReason.NONE.value

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(**d)


class AttackerHost(Host):
    """Off-path attacker: sends spoofed packets, sees only what is addressed to it."""

    def __init__(self, ip, strategy=None):
        super().__init__("attacker", ip)
        self.strategy = strategy
        self.inbox_count = 0

    @property
    def ip_text(self) -> str:
        return ip_str(self.ip)

    def receive(self, unit) -> None:
        self.inbox_count += 1
        units = unit.units if isinstance(unit, Batch) else [unit]
        for u in units:
            if self.strategy is not None:
                self.strategy.on_packet(u)

    def send_spoofed(self, unit, bypass_overrides: bool = False):
        return self.fabric.deliver(self.actor_id, unit, bypass_overrides)


def collect_result(world, attacker: AttackerHost, iterations: int, queries: int,
                   reason: FailureReason | None = None) -> TrialResult:
    """Build a TrialResult from the fabric's logs for the attacker actor."""
    fab = world.fabric
    aid = attacker.actor_id
    success = world.success
    if success:
        reason = FailureReason.NONE
        duration = world.poisoned[0][0]
    else:
        reason = reason or FailureReason.NOT_POISONED
        duration = world.engine.now
    return TrialResult(
        trial=world.trial,
        success=success,
        packets_sent_total=fab.sent_by(aid) + fab.control[aid],
        packets_to_resolver=fab.sent_from_to(aid, "resolver"),
        packets_to_nameserver=fab.sent_from_to(aid, "nameserver"),
        queries_triggered=queries,
        iterations=iterations,
        sim_duration=duration,
        failure_reason=reason.value,
    )
