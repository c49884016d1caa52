"""Monte Carlo execution, aggregation, method comparison, sweeps and reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from scipy.stats import beta

from . import __version__
from .attackers import TrialResult, run_trial
from .netmodel import DnsMessage
from .scenario import METHODS, AttackScenario, ScenarioValidationError, build_world, compile_scenario, qtype_code
from .simcore import NS_PER_SEC

CP_THRESHOLD = 30  # below this many successes the exact interval is used
Z95 = 1.959963984540054
REPORT_FORMATS = ("csv", "json", "text")


# ---------------------------------------------------------------------------
# Confidence intervals
# ---------------------------------------------------------------------------

def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def binomial_ci(k: int, n: int) -> tuple[float, float, str]:
    """95% interval: normal approximation, exact below ``CP_THRESHOLD`` successes."""
    if n <= 0:
        raise ValueError("no trials")
    if k < CP_THRESHOLD:
        lo, hi = clopper_pearson(k, n)
        return lo, hi, "clopper-pearson"
    p = k / n
    h = Z95 * math.sqrt(p * (1 - p) / n)
    return max(0.0, p - h), min(1.0, p + h), "normal"


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _mean(xs) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def _median(xs) -> float:
    return float(statistics.median(xs)) if xs else 0.0


@dataclass(frozen=True)
class AggregateMetrics:
    """Summary of a set of trials; ``merge`` of two disjoint sets equals the summary of their union."""

    trials: int
    successes: int
    hitrate: float
    ci_low: float
    ci_high: float
    ci_half_width: float
    ci_method: str
    queries_total: int
    hitrate_per_query: float
    expected_queries: float | None
    expected_packets: float | None
    mean_queries: float
    median_queries: float
    mean_iterations: float
    mean_packets: float
    median_packets: float
    mean_packets_to_resolver: float
    median_packets_to_resolver: float
    mean_packets_to_nameserver: float
    median_packets_to_nameserver: float
    mean_packets_success: float | None
    min_duration_s: float
    mean_duration_s: float
    max_duration_s: float
    failure_reasons: dict = field(default_factory=dict)
    # raw columns, kept so aggregates merge exactly
    _columns: tuple = field(default=(), repr=False, compare=True)

    @classmethod
    def from_results(cls, results: list[TrialResult]) -> "AggregateMetrics":
        cols = tuple(zip(*((r.success, r.queries_triggered, r.iterations, r.packets_sent_total,
                            r.packets_to_resolver, r.packets_to_nameserver, r.sim_duration,
                            r.failure_reason) for r in results))) if results else ((),) * 8
        return cls._from_columns(_canonical(tuple(tuple(c) for c in cols)))

    @classmethod
    def _from_columns(cls, cols: tuple) -> "AggregateMetrics":
        succ, queries, iters, packets, to_res, to_ns, durs, reasons = cols
        n = len(succ)
        if n == 0:
            raise ValueError("cannot aggregate zero trials")
        k = sum(succ)
        lo, hi, how = binomial_ci(k, n)
        qt = sum(queries)
        pk = sum(packets)
        won = [p for p, s in zip(packets, succ) if s]
        failures: dict[str, int] = {}
        for r in reasons:
            if r != "none":
                failures[r] = failures.get(r, 0) + 1
        return cls(
            trials=n,
            successes=k,
            hitrate=k / n,
            ci_low=lo,
            ci_high=hi,
            ci_half_width=(hi - lo) / 2,
            ci_method=how,
            queries_total=qt,
            hitrate_per_query=k / qt if qt else 0.0,
            expected_queries=qt / k if k else None,
            expected_packets=pk / k if k else None,
            mean_queries=_mean(queries),
            median_queries=_median(queries),
            mean_iterations=_mean(iters),
            mean_packets=_mean(packets),
            median_packets=_median(packets),
            mean_packets_to_resolver=_mean(to_res),
            median_packets_to_resolver=_median(to_res),
            mean_packets_to_nameserver=_mean(to_ns),
            median_packets_to_nameserver=_median(to_ns),
            mean_packets_success=_mean(won) if won else None,
            min_duration_s=min(durs) / NS_PER_SEC,
            mean_duration_s=_mean(durs) / NS_PER_SEC,
            max_duration_s=max(durs) / NS_PER_SEC,
            failure_reasons=dict(sorted(failures.items())),
            _columns=cols,
        )

    def merge(self, other: "AggregateMetrics") -> "AggregateMetrics":
        cols = [a + b for a, b in zip(self._columns, other._columns)]
        # order-free statistics only, so concatenation order does not matter
        return AggregateMetrics._from_columns(_canonical(tuple(cols)))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if not k.startswith("_")}


def _canonical(cols: tuple) -> tuple:
    # sort rows so that merged and direct aggregates hold identical columns
    rows = sorted(zip(*cols), key=lambda r: tuple(str(x) for x in r))
    return tuple(tuple(c) for c in zip(*rows)) if rows else cols


def aggregate(results: list[TrialResult]) -> AggregateMetrics:
    return AggregateMetrics.from_results(results)


# ---------------------------------------------------------------------------
# Running trials
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    scenario: AttackScenario
    results: list[TrialResult]
    metrics: AggregateMetrics

    @property
    def scenario_hash(self) -> str:
        return self.scenario.digest()


def _run_chunk(args: tuple[str, int, int]) -> list[TrialResult]:
    text, lo, hi = args
    compiled = compile_scenario(AttackScenario.from_dict(json.loads(text)))
    return [run_trial(compiled, i) for i in range(lo, hi)]


def _prepare(scenario: AttackScenario, trials: int | None, seed: int | None) -> AttackScenario:
    changes = {}
    if trials is not None:
        changes["trials"] = trials
    if seed is not None:
        changes["seed"] = seed
    if changes:
        scenario = scenario.with_overrides(**changes)
    else:
        scenario.validate()
    return scenario


def run_trials(scenario: AttackScenario, trials: int | None = None, seed: int | None = None,
               threads: int = 1, chunk: int | None = None) -> RunResult:
    """Run trials ``0 .. n-1``; trial ``i`` draws only from stream ``(seed, i)``."""
    scenario = _prepare(scenario, trials, seed)
    n = scenario.trials
    if threads <= 1:
        compiled = compile_scenario(scenario)
        results = [run_trial(compiled, i) for i in range(n)]
    else:
        text = scenario.canonical_json()
        size = chunk or max(1, min(2000, math.ceil(n / (threads * 8))))
        jobs = [(text, lo, min(n, lo + size)) for lo in range(0, n, size)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = [r for part in pool.map(_run_chunk, jobs) for r in part]
    return RunResult(scenario, results, aggregate(results))


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------

def _inputs(sc: AttackScenario) -> dict[str, str]:
    r = sc.resolver_config()
    ns = sc.nameserver_config()
    return {
        "resolver ports": r.port_policy,
        "resolver 0x20": "on" if r.use_0x20 else "off",
        "resolver EDNS size": str(r.edns_udp_size),
        "resolver accepts fragments": "yes" if r.accept_fragments else "no",
        "nameserver RRL": "off" if ns.rrl_threshold is None else f"{ns.rrl_threshold}/s",
        "nameserver IPID": ns.ipid_policy,
        "nameserver PMTUD": "honoured" if ns.honor_pmtud else "ignored",
        "trigger": sc.section("trigger")["kind"],
    }


def _fmt_pct(x: float) -> str:
    return f"{100 * x:.3g}%"


def _fmt_num(x: float | None) -> str:
    if x is None:
        return "n/a"
    return f"{x:.4g}" if x < 1e4 else f"{round(x):,}"


@dataclass
class Comparison:
    columns: list[str]
    rows: list[tuple[str, list[str]]]
    runs: list[RunResult]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", *self.columns])
        for name, vals in self.rows:
            w.writerow([name, *vals])
        return buf.getvalue()

    def to_text(self) -> str:
        widths = [max(len(r[0]) for r in self.rows + [("metric", [])])]
        for i, c in enumerate(self.columns):
            widths.append(max(len(c), *(len(v[i]) for _, v in self.rows)))
        lines = []
        header = ["", *self.columns]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for name, vals in self.rows:
            lines.append("  ".join(x.ljust(w) for x, w in zip([name, *vals], widths)))
        return "\n".join(lines) + "\n"


def compare_methods(scenarios: list[AttackScenario], trials: int | None = None, seed: int | None = None,
                    threads: int = 1) -> Comparison:
    """Effectiveness rows of the method comparison, one column per scenario.

    Hitrate here is per triggered query, and "queries needed" is its
    inverse (total queries over successes).
    """
    if not scenarios:
        raise ValueError("no scenarios to compare")
    runs = [run_trials(sc, trials, seed, threads) for sc in scenarios]
    cols = [r.scenario.name for r in runs]
    rows: list[tuple[str, list[str]]] = [("method", [r.scenario.method for r in runs])]
    keys = list(_inputs(runs[0].scenario))
    ins = [_inputs(r.scenario) for r in runs]
    rows += [(k, [i[k] for i in ins]) for k in keys]
    m = [r.metrics for r in runs]
    rows += [
        ("trials", [str(x.trials) for x in m]),
        ("successes", [str(x.successes) for x in m]),
        ("Hitrate", [_fmt_pct(x.hitrate_per_query) for x in m]),
        ("Queries needed", [_fmt_num(x.expected_queries) for x in m]),
        ("Total traffic (pkts)", [_fmt_num(x.expected_packets) for x in m]),
        ("trial success rate", [_fmt_pct(x.hitrate) for x in m]),
        ("trial success 95% CI", [f"{_fmt_pct(x.ci_low)}-{_fmt_pct(x.ci_high)}" for x in m]),
        ("mean iterations", [_fmt_num(x.mean_iterations) for x in m]),
    ]
    return Comparison(cols, rows, runs)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def set_path(scenario: AttackScenario, path: str, value) -> AttackScenario:
    """Copy of ``scenario`` with the scalar at dotted ``path`` replaced."""
    parts = path.split(".")
    data = scenario.to_dict()
    if parts[0] not in data:
        raise ScenarioValidationError([f"{path}: no such scenario field"])
    if isinstance(value, (dict, list)):
        raise ScenarioValidationError([f"{path}: sweep values must be scalars"])
    node = data
    for p in parts[:-1]:
        nxt = node.get(p) if isinstance(node, dict) else None
        if nxt is None and isinstance(node, dict) and p in _SECTIONS:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ScenarioValidationError([f"{path}: '{p}' is not a section"])
        node = nxt
    leaf = parts[-1]
    current = node.get(leaf)
    if current is None and len(parts) > 1:
        current = scenario.section(parts[0]).get(leaf) if parts[0] in _DEFAULTED else None
    if isinstance(current, (dict, list)):
        raise ScenarioValidationError([f"{path}: not a scalar field"])
    node[leaf] = value
    return AttackScenario.from_dict(data)


_SECTIONS = ("addresses", "zone", "resolver", "nameserver", "fabric", "trigger", "target", "attacker")
_DEFAULTED = ("addresses", "zone", "fabric", "trigger", "target", "attacker")


def sample_response_size(scenario: AttackScenario) -> int:
    """Bytes of the nameserver's answer to a query shaped like the attack's (qname bloat included)."""
    compiled = compile_scenario(scenario)
    world = build_world(compiled, 0)
    target = compiled.target
    labels = ["a" * int(target["label_length"])] + ["b" * 63] * int(target.get("bloat_labels", 0))
    name = ".".join(labels + [compiled.zone.name])
    while len(name) + 2 > 255 and len(labels) > 1:
        labels.pop()
        name = ".".join(labels + [compiled.zone.name])
    q = DnsMessage(0, False, name, qtype_code(target["qtype"]),
                   edns_udp_size=compiled.resolver_config.edns_udp_size, rd=False)
    return len(world.nameserver.build_response(q).encode())


@dataclass
class SweepPoint:
    value: object
    metrics: AggregateMetrics
    response_size: int | None


def sweep(scenario: AttackScenario, path: str, values: list, trials: int | None = None,
          seed: int | None = None, threads: int = 1) -> list[SweepPoint]:
    points = []
    for v in values:
        sc = set_path(scenario, path, v)
        size = sample_response_size(sc) if sc.method == "frag" else None
        points.append(SweepPoint(v, run_trials(sc, trials, seed, threads).metrics, size))
    return points


SWEEP_COLUMNS = ("value", "trials", "successes", "hitrate", "ci_low", "ci_high", "expected_queries",
                 "expected_packets", "mean_packets", "response_size")


def sweep_csv(path: str, points: list[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", *SWEEP_COLUMNS])
    for p in points:
        m = p.metrics
        w.writerow([path, p.value, m.trials, m.successes, _f(m.hitrate), _f(m.ci_low), _f(m.ci_high),
                    _f(m.expected_queries), _f(m.expected_packets), _f(m.mean_packets),
                    "" if p.response_size is None else p.response_size])
    return buf.getvalue()


def _f(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

TRIAL_COLUMNS = ("trial", "success", "packets_sent_total", "packets_to_resolver", "packets_to_nameserver",
                 "queries_triggered", "iterations", "sim_duration", "failure_reason")


def report_document(run: RunResult) -> dict:
    return {
        "tool": "dnspoisonlab",
        "version": __version__,
        "scenario_name": run.scenario.name,
        "scenario_hash": run.scenario_hash,
        "seed": run.scenario.seed,
        "trials": len(run.results),
        "scenario": run.scenario.to_dict(),
        "aggregate": run.metrics.to_dict(),
        "results": [r.to_dict() for r in run.results],
    }


def render_report(run: RunResult, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report_document(run), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "scenario_hash", "seed", "version", *TRIAL_COLUMNS])
        head = [run.scenario.name, run.scenario_hash, run.scenario.seed, __version__]
        for r in run.results:
            w.writerow([*head, *(getattr(r, c) for c in TRIAL_COLUMNS)])
        return buf.getvalue()
    if fmt == "text":
        return summary_text(run)
    raise ValueError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")


def summary_text(run: RunResult) -> str:
    m = run.metrics
    lines = [
        f"scenario   {run.scenario.name} ({run.scenario.method})",
        f"hash       {run.scenario_hash}",
        f"seed       {run.scenario.seed}",
        f"version    {__version__}",
        f"trials     {m.trials}",
        f"successes  {m.successes}",
        f"hitrate    {m.hitrate:.6g}  95% CI [{m.ci_low:.6g}, {m.ci_high:.6g}] ({m.ci_method})",
        f"per query  {m.hitrate_per_query:.6g}",
        f"expected queries per success  {_fmt_num(m.expected_queries)}",
        f"expected packets per success  {_fmt_num(m.expected_packets)}",
        f"packets per trial  mean {m.mean_packets:.6g}  median {m.median_packets:.6g}",
        f"  to resolver      mean {m.mean_packets_to_resolver:.6g}",
        f"  to nameserver    mean {m.mean_packets_to_nameserver:.6g}",
        f"queries per trial  mean {m.mean_queries:.6g}  median {m.median_queries:.6g}",
        f"iterations         mean {m.mean_iterations:.6g}",
        f"sim duration (s)   min {m.min_duration_s:.6g}  mean {m.mean_duration_s:.6g}  max {m.max_duration_s:.6g}",
    ]
    for reason, count in m.failure_reasons.items():
        lines.append(f"failures: {reason}  {count}")
    return "\n".join(lines) + "\n"


def emit_report(run: RunResult, fmt: str, path=None) -> str:
    """Render ``run`` as csv, json or text; write it to ``path`` if given."""
    text = render_report(run, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_report(path) -> RunResult:
    doc = json.loads(Path(path).read_text())
    sc = AttackScenario.from_dict(doc["scenario"])
    results = [TrialResult.from_dict(r) for r in doc["results"]]
    return RunResult(sc, results, aggregate(results))


def default_threads() -> int:
    return os.cpu_count() or 1


__all__ = [
    "AggregateMetrics",
    "Comparison",
    "METHODS",
    "RunResult",
    "SweepPoint",
    "aggregate",
    "binomial_ci",
    "clopper_pearson",
    "compare_methods",
    "emit_report",
    "load_report",
    "render_report",
    "run_trials",
    "sample_response_size",
    "set_path",
    "sweep",
    "sweep_csv",
]
