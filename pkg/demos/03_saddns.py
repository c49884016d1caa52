"""The ICMP rate-limit side channel and the TXID flood that follows it.

The resolver answers probes to closed ports with ICMP errors, but only 50 per
window for everyone together.  Fifty spoofed probes plus one from the
attacker's own address: if the attacker's probe gets an error, one of the
fifty hit the open port.
"""

from dnspoisonlab.attackers import scan_probe_bound
from dnspoisonlab.harness import run_trials, summary_text
from dnspoisonlab.scenario import AttackScenario

print("worst-case probes to find one port in 1024-65535:", scan_probe_bound(64512, 50))

# %% A small port range keeps the demo quick.
small = AttackScenario.from_dict({
    "name": "saddns-small", "method": "saddns", "trials": 10,
    "resolver": {"port_range": [1024, 4000], "icmp_window_ms": 50, "query_timeout_ms": 5000},
    "nameserver": {"rrl_threshold": 10},
    "attacker": {"scan_lo": 1024, "scan_hi": 4000, "max_iterations": 1, "iteration_timeout_s": 6.0},
})
print(summary_text(run_trials(small)))

# %% Once the port is known, sending every TXID always lands.  Randomised
# letter case in the query name adds one bit per letter that the flood
# cannot cover.
for use_0x20 in (False, True):
    sc = AttackScenario.from_dict({
        "name": "flood", "method": "saddns", "trials": 2000,
        "zone": {"name": "c.d", "records": [
            {"name": "@", "type": "NS", "data": "ns.c.d"},
            {"name": "ns", "type": "A", "data": "$nameserver"},
            {"name": "*", "type": "A", "data": "198.51.100.1"}]},
        "target": {"qname": "ab.c.d"},
        "resolver": {"port_policy": "fixed", "fixed_port": 33333, "use_0x20": use_0x20},
        "nameserver": {"rrl_threshold": 10},
        "attacker": {"known_port": 33333, "max_iterations": 1},
    })
    m = run_trials(sc).metrics
    print(f"0x20 {'on ' if use_0x20 else 'off'}: hitrate {m.hitrate:.4f} (4 letters, 1/16 = {1 / 16:.4f})")
