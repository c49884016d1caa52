"""Acceptance suite: the ten end-to-end criteria at their stated tolerances.

Each check is recorded with ``check``; the terminal summary (see conftest)
prints one PASS/FAIL line per criterion.
"""

import math
import random
import time

import pytest

from dnspoisonlab import bgpsim
from dnspoisonlab.appimpact import applicable_methods, poisoning_impact, profiles
from dnspoisonlab.attackers import scan_probe_bound
from dnspoisonlab.bgpsim import PrefixAnnouncement, propagate, subprefix_verdict
from dnspoisonlab.harness import default_threads, render_report, run_trials
from dnspoisonlab.netmodel import (
    PROTO_UDP,
    ReassemblyBuffer,
    SimPacket,
    UdpDatagram,
    fragment_packet,
    reassemble,
    verify_udp_bytes,
)
from dnspoisonlab.scenario import bundled_names, bundled_scenario
from bgp_oracle import oracle_routes
from helpers import scenario
from test_appimpact import EXPECTED_ROWS
from test_attackers import SMALL_SADDNS, _probes_until_flood
from test_bgpsim import PFX, random_topology
from test_netmodel import ref_udp_checksum

TITLES = {
    1: "FragDNS random-IPID hitrate",
    2: "FragDNS traffic and triggers",
    3: "FragDNS global-IPID hitrate",
    4: "HijackDNS hitrate and traffic",
    5: "SadDNS mechanics",
    6: "BGP oracle equivalence",
    7: "Sub-prefix rule",
    8: "Application table golden",
    9: "Netmodel bit-exactness",
    10: "Determinism",
}
RESULTS: dict[int, list[tuple[bool, str]]] = {}


def check(n: int, ok: bool, detail: str) -> None:
    RESULTS.setdefault(n, []).append((bool(ok), detail))
    print(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {detail}")
    assert ok, detail


def summary_lines() -> list[str]:
    lines = []
    for n in sorted(RESULTS):
        subs = RESULTS[n]
        status = "PASS" if all(ok for ok, _ in subs) else "FAIL"
        lines.append(f"criterion {n:>2} {status}  {TITLES[n]}: " + "; ".join(d for _, d in subs))
    return lines


# -- 1 and 2: FragDNS with random IPIDs --------------------------------------------------------

RANDOM_P = 64 / 65536


@pytest.fixture(scope="module")
def random_ipid_run():
    sc = bundled_scenario("fragdns-random-ipid")
    t0 = time.perf_counter()
    run = run_trials(sc, 200_000, threads=default_threads())
    return run, time.perf_counter() - t0


def test_c1_random_ipid_hitrate(random_ipid_run):
    run, elapsed = random_ipid_run
    m = run.metrics
    rel = m.hitrate / RANDOM_P - 1
    check(1, m.trials == 200_000 and abs(rel) <= 0.15,
          f"hitrate {m.hitrate:.6f} over {m.trials} trials vs {RANDOM_P:.6f} ({rel:+.1%}, limit 15%); "
          f"runtime {elapsed:.0f} s on {default_threads()} worker(s)")


def test_c2_random_ipid_triggers(random_ipid_run):
    m = random_ipid_run[0].metrics
    check(2, m.expected_queries is not None and 900 <= m.expected_queries <= 1200,
          f"expected triggers {m.expected_queries:.1f} in [900, 1200]")


def test_c2_random_ipid_packets(random_ipid_run):
    m = random_ipid_run[0].metrics
    check(2, m.expected_packets is not None and 55_000 <= m.expected_packets <= 75_000,
          f"expected packets {m.expected_packets:.0f} in [55000, 75000] "
          f"({m.mean_packets:.0f} packets per trial, {m.successes} successes)")


# -- 3: FragDNS with a global counter -----------------------------------------------------------

def test_c3_global_ipid_calibrated():
    run = run_trials(bundled_scenario("fragdns-global-ipid"), threads=default_threads())
    m = run.metrics
    ok = abs(m.hitrate - 0.20) <= 0.05 and m.expected_queries is not None and abs(m.expected_queries - 5) <= 1
    check(3, ok, f"hitrate {m.hitrate:.3f} (0.20 +/- 0.05), expected queries {m.expected_queries:.2f} (5 +/- 1) "
                 f"over {m.trials} trials")


def test_c3_global_ipid_without_cross_traffic():
    sc = bundled_scenario("fragdns-global-ipid")
    sc = sc.with_overrides(nameserver=dict(sc.nameserver, cross_traffic_rate=0))
    m = run_trials(sc, 500).metrics
    check(3, m.hitrate >= 0.99, f"no cross traffic: hitrate {m.hitrate:.3f} >= 0.99")


# -- 4: HijackDNS -------------------------------------------------------------------------------

def test_c4_hijack():
    run = run_trials(bundled_scenario("hijack-subprefix"), 1000)
    packets = {r.packets_sent_total for r in run.results}
    ok = run.metrics.successes == 1000 and packets == {2}
    check(4, ok, f"{run.metrics.successes}/1000 poisoned, attacker packets per trial {sorted(packets)}")


# -- 5: SadDNS ----------------------------------------------------------------------------------

def test_c5a_lossless_scan_bound():
    worst = 0
    bound = None
    ports = [1024, 1073, 2500, 3924, 3950, 3973, 3974, 4000] + random.Random(5).sample(range(1025, 4000), 12)
    for port in ports:
        kw = dict(SMALL_SADDNS, resolver=dict(SMALL_SADDNS["resolver"], port_policy="fixed", fixed_port=port))
        (found, probes), attack = _probes_until_flood(scenario("saddns", **kw))
        bound = scan_probe_bound(len(attack.ports), attack.set_size)
        if found != port:
            check(5, False, f"scan isolated port {found}, open port was {port}")
        worst = max(worst, probes)
    check(5, worst <= bound, f"(a) {len(ports)} lossless scans isolated the open port, "
                             f"max {worst} probes <= bound {bound}")


def _zone(name):
    return {"name": name, "records": [
        {"name": "@", "type": "NS", "data": f"ns.{name}"},
        {"name": "ns", "type": "A", "data": "$nameserver"},
        {"name": "*", "type": "A", "data": "198.51.100.1"}]}


def _flood_scenario(qname, use_0x20, zone=None):
    kw = dict(resolver={"port_policy": "fixed", "fixed_port": 33333, "use_0x20": use_0x20},
              nameserver={"rrl_threshold": 10},
              attacker={"known_port": 33333, "max_iterations": 1, "mute_burst": 12},
              target={"qname": qname})
    if zone:
        kw["zone"] = zone
    return scenario("saddns", **kw)


def test_c5b_flood_without_0x20_is_certain():
    m = run_trials(_flood_scenario("abcdefghijklmnop.victim.example", False), 1000).metrics
    check(5, m.successes == m.trials, f"(b) 0x20 off: {m.successes}/{m.trials} floods poisoned")


# every letter of the sent name is randomised, so the whole name counts
@pytest.mark.parametrize("qname,zone", [("abcdefghijklmn.op", "op"), ("ab.c.d", "c.d")])
def test_c5b_flood_with_0x20(qname, zone):
    letters = sum(ch.isalpha() for ch in qname)
    n = 10_000
    m = run_trials(_flood_scenario(qname, True, _zone(zone)), n, threads=default_threads()).metrics
    p = 2.0 ** -letters
    sigma = math.sqrt(n * p * (1 - p))
    ok = abs(m.successes - n * p) <= 3 * sigma
    check(5, ok, f"(b) 0x20 on, {letters} letters: {m.successes}/{n} vs expected {n * p:.2f} +/- 3 sigma "
                 f"({3 * sigma:.2f})")


def test_c5c_saddns_default_traffic():
    run = run_trials(bundled_scenario("saddns-default"), threads=default_threads())
    m = run.metrics
    mean = m.mean_packets_success
    check(5, mean is not None and 1e5 <= mean <= 1e6,
          f"(c) saddns-default: mean packets per successful run {mean:.0f} in [1e5, 1e6] "
          f"({m.successes}/{m.trials} successes, mean iterations {m.mean_iterations:.0f})")


# -- 6: BGP -------------------------------------------------------------------------------------

def test_c6_oracle_equivalence():
    rng = random.Random(20240601)
    routes = 0
    for _ in range(500):
        n = rng.randint(2, 10)
        topo = random_topology(rng, n)
        origins = set(rng.sample(topo.nodes, rng.randint(1, min(2, n))))
        anns = [PrefixAnnouncement(PFX, o, legit=i == 0) for i, o in enumerate(sorted(origins))]
        state = propagate(topo, anns)
        got = {a: (r.origin, r.as_path, r.learned_from) for a in topo.nodes
               if (r := state.best(a, PFX)) is not None}
        if got != oracle_routes(topo, origins):
            check(6, False, "propagation differs from path enumeration")
        routes += len(got)
    check(6, True, f"500 topologies, {routes} selected routes equal the oracle")


def test_c6_same_prefix_fraction_reported():
    topo = bgpsim.synthetic_topology(n=200, seed=7)
    rep = bgpsim.same_prefix_fraction(topo, trials=200, seed=1)
    lo, hi = rep.ci()
    check(6, lo <= rep.fraction() <= hi,
          f"synthetic 200-AS topology same-prefix capture {rep.fraction():.3f} (95% CI {lo:.3f}-{hi:.3f}); "
          f"80% needs a measured AS topology")


# -- 7: sub-prefix rule -------------------------------------------------------------------------

def test_c7_subprefix_rule():
    wrong = [plen for plen in range(8, 33) if subprefix_verdict([f"192.0.2.0/{plen}"]) is not (plen < 24)]
    check(7, not wrong, f"prefix lengths 8-32: vulnerable iff < 24 (mismatches {wrong})")


# -- 8: application table -----------------------------------------------------------------------

def test_c8_table_golden():
    rows = profiles()
    bad = []
    for name, (methods, impact) in EXPECTED_ROWS.items():
        v = applicable_methods(rows[name])
        if (v.hijack.value, v.saddns.value, v.frag.value) != methods or str(poisoning_impact(rows[name])) != impact:
            bad.append(name)
    check(8, list(rows) == list(EXPECTED_ROWS) and not bad, f"{len(EXPECTED_ROWS)} profiles match row for row (bad {bad})")


# -- 9: netmodel --------------------------------------------------------------------------------

def test_c9_netmodel_bit_exact():
    rnd = random.Random(99)
    for _ in range(10_000):
        pkt = SimPacket(rnd.getrandbits(32), rnd.getrandbits(32), PROTO_UDP, rnd.getrandbits(16),
                        rnd.randbytes(rnd.randrange(8, 3000)))
        frags = fragment_packet(pkt, rnd.randrange(292, 1500))
        rnd.shuffle(frags)
        buf = ReassemblyBuffer()
        out = [reassemble(buf, f, 0) for f in frags][-1]
        if out is None or out.payload != pkt.payload:
            check(9, False, "fragmentation round trip lost bytes")
    for _ in range(10_000):
        src, dst, sport, dport = rnd.getrandbits(32), rnd.getrandbits(32), rnd.getrandbits(16), rnd.getrandbits(16)
        body = rnd.randbytes(rnd.randrange(0, 600))
        if UdpDatagram.build(src, dst, sport, dport, body).checksum != ref_udp_checksum(src, dst, sport, dport,
                                                                                         body):
            check(9, False, "checksum differs from the reference")
    for _ in range(1000):
        src, dst = rnd.getrandbits(32), rnd.getrandbits(32)
        body = rnd.randbytes(rnd.randrange(1, 300))
        wire = bytearray(UdpDatagram.build(src, dst, 1234, 53, body).to_bytes())
        bit = rnd.randrange(8 * len(wire))
        wire[bit // 8] ^= 1 << (bit % 8)
        if verify_udp_bytes(src, dst, bytes(wire)):
            check(9, False, "a single-bit flip went undetected")
    check(9, True, "10^4 fragment round trips, 10^4 checksums vs reference, 1000 bit flips detected")


# -- 10: determinism ----------------------------------------------------------------------------

def _reduced(name):
    sc = bundled_scenario(name)
    return min(sc.trials, 3 if sc.method == "saddns" else 40)


def test_c10_determinism():
    names = bundled_names()
    for name in names:
        sc = bundled_scenario(name)
        n = _reduced(name)
        a = render_report(run_trials(sc, n), "json")
        b = render_report(run_trials(sc, n), "json")
        c = render_report(run_trials(sc, n, threads=8, chunk=1), "json")
        if not a == b == c:
            check(10, False, f"{name}: reports differ")
    check(10, True, f"{len(names)} bundled scenarios (reduced trials): repeat runs and 8 workers "
                    f"give byte-identical JSON")
