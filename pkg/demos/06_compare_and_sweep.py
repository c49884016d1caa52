"""Side-by-side comparison of the methods and parameter sweeps.

Trial counts are cut down so this finishes in about a minute; the bundled
scenarios carry the full counts (`dpl compare` uses them).
"""

from dnspoisonlab.harness import compare_methods, sweep, sweep_csv
from dnspoisonlab.scenario import bundled_scenario

scs = [bundled_scenario(n) for n in ("hijack-subprefix", "fragdns-global-ipid", "fragdns-random-ipid")]
print(compare_methods(scs, trials=2000).to_text())

# %% The advertised EDNS size must hold the whole response, or nothing arrives to forge.
sc = bundled_scenario("fragdns-global-ipid")
sc = sc.with_overrides(nameserver=dict(sc.nameserver, cross_traffic_rate=0))
points = sweep(sc, "resolver.edns_udp_size", [512, 1232, 2048, 4000], trials=20)
print(sweep_csv("resolver.edns_udp_size", points))

# %% Longer query names make longer responses, about 64 bytes per label.
# A fourth 63-byte label would push the name past 255 bytes, so it is dropped.
points = sweep(sc, "target.bloat_labels", [0, 1, 2, 3, 4], trials=5)
print([p.response_size for p in points])
