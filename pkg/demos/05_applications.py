"""Which attack applies to which application, and what poisoning buys.

Applicability follows from three properties of each application: who picks
the query name, how a lookup can be triggered, and which record types it
needs.
"""

from dnspoisonlab.appimpact import (
    applicable_methods,
    get_profile,
    poisoning_impact,
    profiles,
    scenario_from_profile,
)
from dnspoisonlab.harness import run_trials

print(f"{'profile':20s} {'hijack':12s} {'saddns':12s} {'frag':12s} impact")
for name, p in profiles().items():
    v = applicable_methods(p).as_dict()
    print(f"{name:20s} {v['hijack']:12s} {v['saddns']:12s} {v['frag']:12s} {poisoning_impact(p)}")

# %% The reasoning behind one row.
cdn = get_profile("CDN")
for method, why in applicable_methods(cdn).rationale.items():
    print(f"CDN {method}: {why}")

# %% Any applicable pair becomes a runnable scenario skeleton.
sc = scenario_from_profile(get_profile("Firewall"), "hijack")
print(sc.trigger, "->", run_trials(sc, trials=3).metrics.hitrate)
