"""Routing: sub-prefix and same-prefix hijacks.

A more specific announcement wins everywhere unless it is longer than /24,
which most networks filter.  An identical announcement only wins where
routing policy prefers the attacker's path.
"""

import random

from dnspoisonlab import bgpsim

# %% Sub-prefix verdicts.
for prefix in ("192.0.0.0/20", "192.0.2.0/23", "192.0.2.0/24"):
    vuln = bgpsim.subprefix_verdict([prefix])
    extra = f" -> announce {bgpsim.hijack_prefix_for(prefix, '192.0.2.53')}" if vuln else ""
    print(f"{prefix:16s} vulnerable={vuln}{extra}")

# %% A four-AS example: AS1 is a provider of AS2 and AS3; AS3 peers with AS4.
topo = bgpsim.parse_topology(["1|2|-1", "1|3|-1", "3|4|0"])
state = bgpsim.propagate(topo, [bgpsim.PrefixAnnouncement("192.0.2.0/24", 2, legit=True)])
for asn in topo.nodes:
    print(f"AS{asn}", state.best(asn, "192.0.2.0/24"))
# AS4 hears nothing: AS3 learned the route from a provider and does not pass it to a peer.

# %% Same-prefix hijacks on a synthetic topology.
topo = bgpsim.synthetic_topology(n=200, seed=7)
print(topo.report())
rep = bgpsim.same_prefix_fraction(topo, trials=200, seed=1)
lo, hi = rep.ci()
print(f"resolver route captured in {rep.fraction():.1%} of triples (95% CI {lo:.1%}-{hi:.1%})")

attacker, victim, observer = random.Random(3).sample(topo.nodes, 3)
print("one triple:", attacker, victim, observer,
      bgpsim.same_prefix_verdict(topo, attacker, victim, observer))
