"""``dpl`` command line.

Exit status: 0 on success, 1 when the input (scenario, arguments,
profile, topology) is invalid, 2 when a run fails for any other reason.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import yaml

from . import __version__, appimpact, bgpsim, harness
from .attackers import PreconditionError
from .scenario import AttackScenario, ScenarioValidationError, bundled_names, resolve_scenario

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
DEFAULT_COMPARE = ("hijack-subprefix", "saddns-default", "fragdns-random-ipid", "fragdns-global-ipid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage mistakes count as invalid input
        raise UsageError(message)


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DPL_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env, 0)
    except ValueError:
        raise UsageError(f"DPL_SEED must be an integer, got {env!r}") from None


def _threads(args) -> int:
    return args.threads if args.threads else 1


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _common(p: argparse.ArgumentParser, formats=harness.REPORT_FORMATS, default="text") -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default: scenario's, or $DPL_SEED)")
    p.add_argument("--trials", type=int, default=None, help="number of trials")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--out", default=None, help="write output to this file")
    p.add_argument("--format", choices=formats, default=default)


# -- verbs ------------------------------------------------------------------

def cmd_run(args) -> int:
    sc = resolve_scenario(args.scenario)
    run = harness.run_trials(sc, args.trials, _seed(args), _threads(args))
    _emit(harness.render_report(run, args.format), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    refs = args.scenarios or list(DEFAULT_COMPARE)
    scs = [resolve_scenario(r) for r in refs]
    table = harness.compare_methods(scs, args.trials, _seed(args), _threads(args))
    _emit(table.to_csv() if args.format == "csv" else table.to_text(), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = resolve_scenario(args.scenario)
    values = [yaml.safe_load(v) for v in args.values]
    points = harness.sweep(sc, args.path, values, args.trials, _seed(args), _threads(args))
    _emit(harness.sweep_csv(args.path, points), args.out)
    return EXIT_OK


def cmd_verdict_bgp(args) -> int:
    if args.kind == "subprefix":
        if not args.prefix:
            raise UsageError("subprefix verdict needs at least one --prefix")
        try:
            vulnerable = bgpsim.subprefix_verdict(args.prefix, args.target)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        lines = [f"announced: {', '.join(args.prefix)}",
                 f"verdict: {'vulnerable' if vulnerable else 'not vulnerable'} to a sub-prefix hijack"]
        if vulnerable and args.target:
            covering = max((p for p in args.prefix if _covers(p, args.target)), key=_plen)
            lines.append(f"announce: {bgpsim.hijack_prefix_for(covering, args.target)}")
        _emit("\n".join(lines) + "\n", args.out)
        return EXIT_OK
    topo = bgpsim.load_topology(args.topology) if args.topology else bgpsim.synthetic_topology(
        n=args.synthetic, seed=args.topology_seed)
    if args.attacker is None or args.victim is None or args.observer is None:
        rep = bgpsim.same_prefix_fraction(topo, trials=args.pairs, seed=args.seed or 1)
        lo, hi = rep.ci()
        text = (f"topology: {len(topo.nodes)} ASes\n"
                f"pairs: {rep.trials}\n"
                f"resolver route captured: {rep.resolver_to_ns} ({rep.fraction():.3f}, 95% CI {lo:.3f}-{hi:.3f})\n"
                f"either direction captured: {rep.either_direction} "
                f"({rep.fraction('either_direction'):.3f})\n")
    else:
        hit = bgpsim.same_prefix_verdict(topo, args.attacker, args.victim, args.observer)
        text = (f"observer AS{args.observer} routes AS{args.victim}'s prefix to "
                f"{'the attacker AS' + str(args.attacker) if hit else 'the legitimate origin'}\n")
    _emit(text, args.out)
    return EXIT_OK


def _covers(prefix: str, ip: str) -> bool:
    import ipaddress

    return ipaddress.IPv4Address(ip) in ipaddress.IPv4Network(prefix, strict=False)


def _plen(prefix: str) -> int:
    return int(prefix.split("/")[1]) if "/" in prefix else 32


def cmd_profile(args) -> int:
    try:
        if args.action == "list":
            lines = []
            for name, p in appimpact.profiles().items():
                v = appimpact.applicable_methods(p).as_dict()
                lines.append(f"{name:<20} {p.category:<16} hijack={v['hijack']:<12} "
                             f"saddns={v['saddns']:<12} frag={v['frag']}")
            _emit("\n".join(lines) + "\n", args.out)
            return EXIT_OK
        if not args.name:
            raise UsageError("profile show needs a profile name")
        p = appimpact.get_profile(args.name)
    except appimpact.ProfileError as exc:
        raise UsageError(str(exc)) from None
    v = appimpact.applicable_methods(p)
    doc = {
        "name": p.name,
        "category": p.category,
        "use_case": p.use_case,
        "query_name_control": p.query_name_control,
        "trigger": list(p.trigger),
        "record_types": list(p.record_types),
        "dns_use": list(p.dns_use),
        "protections": list(p.protections),
        "applicable_methods": v.as_dict(),
        "rationale": dict(v.rationale),
        "poisoning_impact": str(appimpact.poisoning_impact(p)),
        "vulnerability": appimpact.vulnerability_label(p),
    }
    _emit(yaml.safe_dump(doc, sort_keys=False), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        run = harness.load_report(args.report)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"not a report file: {exc}") from None
    _emit(harness.render_report(run, args.format), args.out)
    return EXIT_OK


def cmd_list(args) -> int:
    _emit("\n".join(bundled_names()) + "\n", None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpl", description="Simulate off-path DNS cache poisoning.")
    p.add_argument("--version", action="version", version=f"dpl {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario (file path or bundled name)")
    r.add_argument("scenario")
    _common(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare methods across scenarios")
    c.add_argument("scenarios", nargs="*", help=f"default: {' '.join(DEFAULT_COMPARE)}")
    _common(c, formats=("csv", "text"))
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="vary one scalar scenario field")
    s.add_argument("scenario")
    s.add_argument("path", help="dotted field path, e.g. resolver.edns_udp_size")
    s.add_argument("values", nargs="+")
    _common(s, formats=("csv",), default="csv")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verdict", help="routing verdicts")
    vsub = v.add_subparsers(dest="system", required=True, parser_class=_Parser)
    b = vsub.add_parser("bgp", help="BGP hijack verdicts")
    b.add_argument("kind", choices=("subprefix", "same-prefix"))
    b.add_argument("--prefix", action="append", default=[], help="legitimate announcement (repeatable)")
    b.add_argument("--target", default=None, help="nameserver address")
    b.add_argument("--topology", default=None, help="AS relationship file (serial-1 format)")
    b.add_argument("--synthetic", type=int, default=1000, help="synthetic topology size")
    b.add_argument("--topology-seed", type=int, default=7)
    b.add_argument("--attacker", type=int)
    b.add_argument("--victim", type=int)
    b.add_argument("--observer", type=int)
    b.add_argument("--pairs", type=int, default=1000, help="random triples for the fraction report")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_verdict_bgp)

    pr = sub.add_parser("profile", help="application profiles")
    pr.add_argument("action", choices=("list", "show"))
    pr.add_argument("name", nargs="?")
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_profile)

    rep = sub.add_parser("report", help="re-render a saved JSON report")
    rep.add_argument("report")
    rep.add_argument("--out", default=None)
    rep.add_argument("--format", choices=harness.REPORT_FORMATS, default="text")
    rep.set_defaults(func=cmd_report)

    ls = sub.add_parser("scenarios", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ScenarioValidationError, PreconditionError, bgpsim.TopologyError) as exc:
        print(f"dpl: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"dpl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
