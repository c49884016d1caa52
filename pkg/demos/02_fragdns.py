"""Fragment injection: random versus predictable IP identifiers.

The attacker shrinks the nameserver's path MTU, then plants forged second
fragments in the resolver's reassembly buffer.  Each plant needs the right
IPID.  A random IPID gives 64 chances in 65536.  A global counter can be read
from a sample reply, so the only uncertainty is other clients' traffic.
"""

from dnspoisonlab.harness import run_trials, summary_text
from dnspoisonlab.scenario import bundled_scenario

# %% Random IPIDs: a few thousand trials give only a handful of hits.
run = run_trials(bundled_scenario("fragdns-random-ipid"), trials=5000)
print(summary_text(run))

# %% Global counter with cross traffic calibrated to about one hit in five.
sc = bundled_scenario("fragdns-global-ipid")
print(summary_text(run_trials(sc, trials=300)))

# %% Remove the cross traffic and the prediction is exact.
quiet = sc.with_overrides(nameserver=dict(sc.nameserver, cross_traffic_rate=0))
print("no cross traffic, hitrate:", run_trials(quiet, trials=100).metrics.hitrate)

# %% Defences: ignoring PMTUD or dropping fragments shuts the attack out.
for label, section, change in (("ignore PMTUD", "nameserver", {"honor_pmtud": False}),
                               ("drop fragments", "resolver", {"accept_fragments": False})):
    hardened = quiet.with_overrides(**{section: dict(getattr(quiet, section), **change)})
    m = run_trials(hardened, trials=50).metrics
    print(f"{label:15s} hitrate {m.hitrate:.2f}  reasons {m.failure_reasons}")
