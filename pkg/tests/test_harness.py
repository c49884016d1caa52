"""Monte Carlo harness: intervals, aggregation, determinism, reports, sweeps, scenarios."""

import csv
import io
import json
import math

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binomtest

from dnspoisonlab import harness
from dnspoisonlab.attackers import TrialResult, run_trial
from dnspoisonlab.harness import (
    AggregateMetrics,
    aggregate,
    binomial_ci,
    compare_methods,
    emit_report,
    load_report,
    render_report,
    run_trials,
    sample_response_size,
    set_path,
    sweep,
    sweep_csv,
)
from dnspoisonlab.scenario import (
    AttackScenario,
    ScenarioValidationError,
    bundled_names,
    bundled_scenario,
    compile_scenario,
)
from helpers import scenario

HIJACK = scenario("hijack", trials=12)
GLOBAL_FRAG = scenario("frag", trials=12, resolver={"edns_udp_size": 4000},
                       nameserver={"ipid_policy": "global", "cross_traffic_rate": 0, "base_response_padding": 600})


# -- intervals ------------------------------------------------------------------------

@pytest.mark.parametrize("k,n", [(0, 10), (1, 10), (5, 10), (10, 10), (29, 1000), (3, 200000)])
def test_exact_interval_matches_scipy(k, n):
    lo, hi, how = binomial_ci(k, n)
    ref = binomtest(k, n).proportion_ci(confidence_level=0.95, method="exact")
    assert how == "clopper-pearson"
    assert lo == pytest.approx(ref.low, abs=1e-12) and hi == pytest.approx(ref.high, abs=1e-12)


@pytest.mark.parametrize("k,n", [(30, 100), (171, 200000), (500, 1000)])
def test_normal_interval(k, n):
    lo, hi, how = binomial_ci(k, n)
    p = k / n
    h = 1.959963984540054 * math.sqrt(p * (1 - p) / n)
    assert how == "normal"
    assert (lo, hi) == pytest.approx((p - h, p + h), abs=1e-15)


def test_interval_rejects_zero_trials():
    with pytest.raises(ValueError):
        binomial_ci(0, 0)


# -- aggregation -------------------------------------------------------------------------

trial_results = st.builds(
    TrialResult,
    trial=st.integers(0, 10**6),
    success=st.booleans(),
    packets_sent_total=st.integers(0, 10**6),
    packets_to_resolver=st.integers(0, 10**6),
    packets_to_nameserver=st.integers(0, 10**3),
    queries_triggered=st.integers(0, 500),
    iterations=st.integers(0, 500),
    sim_duration=st.integers(0, 10**12),
    failure_reason=st.sampled_from(["none", "not poisoned", "budget exhausted"]),
)


@given(st.lists(trial_results, min_size=2, max_size=60), st.data())
@settings(max_examples=200, deadline=None)
def test_merge_equals_whole(results, data):
    k = data.draw(st.integers(1, len(results) - 1))
    whole = aggregate(results)
    assert aggregate(results[:k]).merge(aggregate(results[k:])) == whole
    assert aggregate(results[k:]).merge(aggregate(results[:k])) == whole


def test_aggregate_hand_computed():
    rs = [TrialResult(0, True, 10, 8, 2, 1, 1, 2 * 10**9),
          TrialResult(1, False, 30, 28, 2, 3, 3, 4 * 10**9, "not poisoned"),
          TrialResult(2, True, 20, 18, 2, 2, 2, 6 * 10**9)]
    m = aggregate(rs)
    assert (m.trials, m.successes, m.hitrate) == (3, 2, 2 / 3)
    assert m.queries_total == 6 and m.hitrate_per_query == 2 / 6 and m.expected_queries == 3.0
    assert m.expected_packets == 30.0 and m.mean_packets == 20.0 and m.median_packets == 20.0
    assert m.mean_packets_success == 15.0
    assert (m.min_duration_s, m.mean_duration_s, m.max_duration_s) == (2.0, 4.0, 6.0)
    assert m.failure_reasons == {"not poisoned": 1}
    assert 0 <= m.ci_low <= m.hitrate <= m.ci_high <= 1
    assert m.ci_half_width == pytest.approx((m.ci_high - m.ci_low) / 2)


def test_no_success_has_no_expectation():
    m = aggregate([TrialResult(0, False, 5, 5, 0, 1, 1, 1)])
    assert m.expected_queries is None and m.expected_packets is None and m.mean_packets_success is None
    with pytest.raises(ValueError):
        AggregateMetrics.from_results([])


# -- running ------------------------------------------------------------------------------

def test_trial_uses_only_its_own_stream():
    run = run_trials(GLOBAL_FRAG)
    compiled = compile_scenario(GLOBAL_FRAG)
    assert run.results == [run_trial(compiled, i) for i in range(12)]
    assert run.results[5] == run_trials(GLOBAL_FRAG, trials=6).results[5]


def test_parallel_equals_sequential():
    sc = scenario("frag", trials=40, resolver={"edns_udp_size": 4000},
                  nameserver={"ipid_policy": "global", "cross_traffic_rate": 106360,
                              "base_response_padding": 600}, fabric={"latency_ms": 50.0})
    seq = run_trials(sc)
    par = run_trials(sc, threads=3, chunk=7)
    assert seq.results == par.results
    assert render_report(seq, "json") == render_report(par, "json")


def test_seed_changes_outcomes():
    sc = scenario("frag", trials=30, resolver={"edns_udp_size": 4000},
                  nameserver={"ipid_policy": "global", "cross_traffic_rate": 106360,
                              "base_response_padding": 600}, fabric={"latency_ms": 50.0})
    a = run_trials(sc, seed=1).results
    b = run_trials(sc, seed=2).results
    assert a != b


def test_zero_trials_rejected():
    with pytest.raises(ScenarioValidationError):
        run_trials(HIJACK, trials=0)


def test_hijack_scenario_example():
    m = run_trials(HIJACK).metrics
    assert m.hitrate == 1.0 and m.mean_packets == 2 and m.median_packets == 2


# -- reports ------------------------------------------------------------------------------

def test_reports_byte_identical(tmp_path):
    for fmt in harness.REPORT_FORMATS:
        a = emit_report(run_trials(GLOBAL_FRAG), fmt, tmp_path / f"a.{fmt}")
        b = emit_report(run_trials(GLOBAL_FRAG), fmt, tmp_path / f"b.{fmt}")
        assert a == b
        assert (tmp_path / f"a.{fmt}").read_bytes() == (tmp_path / f"b.{fmt}").read_bytes()


def test_csv_report_shape():
    run = run_trials(HIJACK)
    rows = list(csv.reader(io.StringIO(render_report(run, "csv"))))
    assert rows[0] == ["scenario", "scenario_hash", "seed", "version", *harness.TRIAL_COLUMNS]
    assert len(rows) == 1 + 12
    assert {r[1] for r in rows[1:]} == {run.scenario_hash}


def test_json_report_shape(tmp_path):
    run = run_trials(HIJACK)
    doc = json.loads(render_report(run, "json"))
    assert list(doc) == ["tool", "version", "scenario_name", "scenario_hash", "seed", "trials",
                         "scenario", "aggregate", "results"]
    assert doc["scenario_hash"] == HIJACK.digest() and len(doc["results"]) == 12
    path = tmp_path / "r.json"
    emit_report(run, "json", path)
    back = load_report(path)
    assert back.results == run.results and back.metrics == run.metrics
    assert render_report(back, "json") == render_report(run, "json")


def test_text_report_mentions_essentials():
    text = render_report(run_trials(HIJACK), "text")
    assert HIJACK.digest() in text and "hitrate    1" in text


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_report(run_trials(HIJACK, trials=1), "json", tmp_path / "missing" / "r.json")


def test_unknown_format():
    with pytest.raises(ValueError):
        render_report(run_trials(HIJACK, trials=1), "xml")


# -- comparison -----------------------------------------------------------------------------

def test_compare_rows_and_formats():
    table = compare_methods([HIJACK, GLOBAL_FRAG], trials=5)
    names = [r[0] for r in table.rows]
    for row in ("method", "Hitrate", "Queries needed", "Total traffic (pkts)", "trial success 95% CI"):
        assert row in names
    assert dict(table.rows)["method"] == ["hijack", "frag"]
    assert dict(table.rows)["Total traffic (pkts)"] == ["2", "66"]
    assert table.to_csv().splitlines()[0] == "metric,t,t"
    assert "Hitrate" in table.to_text()
    with pytest.raises(ValueError):
        compare_methods([])


# -- sweeps ------------------------------------------------------------------------------------

def test_set_path():
    sc = set_path(HIJACK, "resolver.edns_udp_size", 1232)
    assert sc.resolver_config().edns_udp_size == 1232
    assert set_path(HIJACK, "fabric.loss", 0.25).section("fabric")["loss"] == 0.25
    with pytest.raises(ScenarioValidationError):
        set_path(HIJACK, "zone.records", 1)
    with pytest.raises(ScenarioValidationError):
        set_path(HIJACK, "resolver.port_range", 7)
    with pytest.raises(ScenarioValidationError):
        set_path(HIJACK, "resolver", 7)
    with pytest.raises(ScenarioValidationError):
        set_path(HIJACK, "nonsense.x", 7)
    with pytest.raises(ScenarioValidationError):
        set_path(HIJACK, "resolver.edns_udp_size", [1, 2])
    with pytest.raises(ScenarioValidationError):
        set_path(HIJACK, "resolver.no_such_knob", 3)


def test_edns_sweep_with_large_response():
    sc = scenario("frag", trials=10, nameserver={"ipid_policy": "global", "cross_traffic_rate": 0,
                                                 "base_response_padding": 1276})
    points = sweep(sc, "resolver.edns_udp_size", [512, 1232, 2048, 4000])
    assert 1390 <= points[-1].response_size <= 1410  # about 1400 bytes untruncated
    assert points[0].response_size < 512  # the 512-byte resolver only ever sees a truncated answer
    by = {p.value: p.metrics for p in points}
    assert by[512].successes == 0 and by[1232].successes == 0
    assert by[2048].successes > 0 and by[4000].successes > 0
    assert by[512].failure_reasons == {"EDNS too small": 10}
    text = sweep_csv("resolver.edns_udp_size", points)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["parameter", *harness.SWEEP_COLUMNS] and len(rows) == 5


def test_bloat_sweep_grows_response():
    sc = scenario("frag", trials=1, resolver={"edns_udp_size": 4000}, nameserver={"ipid_policy": "global"})
    sizes = [sample_response_size(set_path(sc, "target.bloat_labels", b)) for b in range(5)]
    assert sizes == sorted(sizes) and sizes[1] > sizes[0]
    assert 0 < sizes[4] - sizes[0] <= 4 * 64


def test_loss_sweep_non_increasing():
    sc = scenario("saddns", trials=300,
                  resolver={"port_policy": "fixed", "fixed_port": 33333},
                  nameserver={"rrl_threshold": 10},
                  attacker={"known_port": 33333, "max_iterations": 1, "mute_burst": 12})
    points = sweep(sc, "fabric.loss", [0.0, 0.1, 0.3, 0.5])
    rates = [p.metrics.hitrate for p in points]
    for a, b in zip(rates, rates[1:]):
        se = math.sqrt(max(a * (1 - a), 0.01) / 300)
        assert b <= a + 2 * se
    assert rates[0] == 1.0 and rates[-1] < rates[0]


# -- scenarios ----------------------------------------------------------------------------------

def test_every_bundled_scenario_loads():
    names = bundled_names()
    for required in ("saddns-default", "fragdns-random-ipid", "fragdns-global-ipid", "hijack-subprefix"):
        assert required in names
    assert sum(n.startswith("profile-") for n in names) == 20
    for n in names:
        sc = bundled_scenario(n)
        assert sc.name == n
        compile_scenario(sc)


@given(st.sampled_from(["hijack", "saddns", "frag"]), st.integers(0, 2**63), st.integers(1, 10**6),
       st.booleans(), st.sampled_from([512, 1232, 4096]), st.floats(0, 1), st.floats(0.1, 500),
       st.sampled_from(["global", "random", "per-destination"]), st.integers(0, 4))
@settings(max_examples=200, deadline=None)
def test_scenario_round_trip(method, seed, trials, x20, edns, loss, latency, ipid, bloat):
    sc = scenario(method, seed=seed, trials=trials, resolver={"use_0x20": x20, "edns_udp_size": edns},
                  nameserver={"ipid_policy": ipid}, fabric={"loss": loss, "latency_ms": latency},
                  target={"bloat_labels": bloat})
    again = AttackScenario.from_yaml(sc.to_yaml())
    assert again == sc and again.digest() == sc.digest()
    assert AttackScenario.from_dict(json.loads(sc.canonical_json())) == sc


def test_validation_lists_every_problem():
    with pytest.raises(ScenarioValidationError) as e:
        AttackScenario.from_dict({"name": "x", "method": "frag", "trials": 0,
                                  "resolver": {"bogus": 1}, "attacker": {"nope": 2}})
    text = str(e.value)
    assert "trials" in text and "bogus" in text and "nope" in text
    assert len(e.value.problems) >= 3


def test_yaml_is_human_editable():
    doc = yaml.safe_load(bundled_scenario("fragdns-global-ipid").to_yaml())
    assert doc["format_version"] == 1 and doc["nameserver"]["cross_traffic_rate"] == 106360
