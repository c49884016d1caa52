"""Off-path poisoning strategies: prefix hijack, side-channel scan, fragment injection."""

from . import fragdns, hijackdns, saddns
from .common import (
    AttackerHost,
    AttackerKnowledge,
    FailureReason,
    PreconditionError,
    TrialResult,
    collect_result,
)
from .fragdns import FragDnsAttack, craft_tail, run_fragdns
from .hijackdns import HijackDnsAttack, routing_verdict, run_hijackdns
from .saddns import SadDnsAttack, run_saddns, scan_probe_bound

RUNNERS = {
    "hijack": hijackdns.run_compiled,
    "saddns": saddns.run_compiled,
    "frag": fragdns.run_compiled,
}


def run_trial(compiled, trial: int) -> TrialResult:
    """Run trial ``trial`` of an already compiled scenario."""
    return RUNNERS[compiled.scenario.method](compiled, trial)


__all__ = [
    "AttackerHost",
    "AttackerKnowledge",
    "FailureReason",
    "FragDnsAttack",
    "HijackDnsAttack",
    "PreconditionError",
    "RUNNERS",
    "SadDnsAttack",
    "TrialResult",
    "collect_result",
    "craft_tail",
    "routing_verdict",
    "run_fragdns",
    "run_hijackdns",
    "run_saddns",
    "run_trial",
    "scan_probe_bound",
]
