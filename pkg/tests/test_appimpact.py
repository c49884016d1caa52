"""Application profiles: dataset, applicability rules and scenario skeletons."""

import pytest

from dnspoisonlab import appimpact
from dnspoisonlab.appimpact import (
    Applicability,
    ApplicationProfile,
    Impact,
    ProfileError,
    applicable_methods,
    get_profile,
    load_table,
    poisoning_impact,
    profiles,
    scenario_from_profile,
)

Y, T, N = "yes", "third-party", "no"

# Expected rows, entered by hand: (hijack, saddns, frag), impact.
EXPECTED_ROWS = {
    "Radius": ((Y, Y, Y), "DoS: no network access"),
    "XMPP": ((Y, Y, Y), "Hijack: eavesdropping"),
    "SMTP": ((Y, Y, Y), "Hijack: eavesdropping"),
    "SPF/DMARC": ((Y, Y, Y), "Downgrade: spoofing"),
    "DKIM": ((Y, Y, Y), "Downgrade: spoofing"),
    "HTTP": ((Y, Y, Y), "Hijack: eavesdropping"),
    "PW-recovery SMTP": ((Y, Y, Y), "Hijack: account hijack"),
    "NTP": ((Y, N, T), "Hijack: change time"),
    "Bitcoin": ((Y, N, N), "Hijack: fake blockchain"),
    "OpenVPN": ((Y, T, T), "DoS: no VPN access"),
    "IKE": ((Y, T, T), "DoS: no VPN access"),
    "Opportunistic-IKE": ((Y, T, T), "Hijack: eavesdropping"),
    "DV": ((Y, N, N), "Hijack: fraud. certificate"),
    "OCSP": ((Y, Y, Y), "Downgrade: no check"),
    "RPKI": ((Y, N, N), "Downgrade: no ROV"),
    "Firewall": ((Y, T, T), "Downgrade: no filters"),
    "Loadbalancer": ((Y, T, T), "Hijack: eavesdropping"),
    "CDN": ((Y, N, T), "Hijack: eavesdropping"),
    "ANAME": ((Y, T, T), "Hijack: eavesdropping"),
    "Proxy": ((Y, Y, Y), "Hijack: eavesdropping"),
}


def test_dataset_has_every_profile():
    assert list(profiles()) == list(EXPECTED_ROWS)


@pytest.mark.parametrize("name", list(EXPECTED_ROWS))
def test_rules_reproduce_table_row(name):
    row = next(r for r in load_table() if r.profile.name == name)
    verdict = applicable_methods(row.profile)
    assert verdict == row.verdict
    methods, impact = EXPECTED_ROWS[name]
    assert (verdict.hijack.value, verdict.saddns.value, verdict.frag.value) == methods
    assert str(poisoning_impact(row.profile)) == impact


def test_spec_examples():
    assert applicable_methods(get_profile("SMTP")).as_dict() == {"hijack": Y, "saddns": Y, "frag": Y}
    assert applicable_methods(get_profile("NTP")).as_dict() == {"hijack": Y, "saddns": N, "frag": T}
    assert applicable_methods(get_profile("Bitcoin")).as_dict() == {"hijack": Y, "saddns": N, "frag": N}
    assert poisoning_impact(get_profile("RPKI")) == Impact("Downgrade", "no ROV")
    assert poisoning_impact(get_profile("OpenVPN")) == Impact("DoS", "no VPN access")
    assert poisoning_impact(get_profile("PW-recovery SMTP")) == Impact("Hijack", "account hijack")


def test_third_party_only_without_target_control():
    # the reference table marks opportunistic IKE third-party despite an attacker-chosen name
    exceptions = {"Opportunistic-IKE"}
    for name, prof in profiles().items():
        v = applicable_methods(prof)
        if any(v.for_method(m) is Applicability.THIRD_PARTY for m in appimpact.METHODS):
            assert prof.query_name_control != "target" or name in exceptions


def test_conditional_rows_surface_verbatim():
    labels = {n: appimpact.vulnerability_label(p) for n, p in profiles().items()}
    assert {n for n, l in labels.items() if l == "conditionally-vulnerable"} == {"Radius", "Bitcoin"}


def test_lookup_is_case_insensitive_and_errors():
    assert get_profile("smtp").name == "SMTP"
    with pytest.raises(ProfileError):
        get_profile("gopher")


def test_incomplete_profile_rejected():
    with pytest.raises(ProfileError, match="record_types"):
        ApplicationProfile("X", "target", ("direct",), (), ("location",), (), Impact("DoS", "x"))
    with pytest.raises(ProfileError):
        ApplicationProfile("X", "sometimes", ("direct",), ("A",), (), (), Impact("DoS", "x"))
    with pytest.raises(ProfileError):
        Impact.parse("Annoyance: mild")


def test_bad_table_rows_rejected():
    header = ("name,category,use_case,query_name_control,known,trigger,record_types,dns_use,"
              "hijack,saddns,frag,protections,vulnerable,impact")
    with pytest.raises(ProfileError):
        appimpact.parse_table(header + "\nX,c,u,target,yes,direct,A,location,yes,maybe,yes,,yes,DoS: x\n")


def test_user_defined_profile():
    p = ApplicationProfile("Mine", "target", ("direct",), ("A",), ("location",), (), Impact("Hijack", "mine"))
    assert applicable_methods(p).as_dict() == {"hijack": Y, "saddns": Y, "frag": Y}


# -- scenario skeletons ---------------------------------------------------------------

def test_cdn_frag_on_demand():
    sc = scenario_from_profile(get_profile("CDN"), "frag")
    assert sc.method == "frag" and sc.trigger["kind"] == "on-demand"


def test_firewall_saddns_via_forwarder():
    sc = scenario_from_profile(get_profile("Firewall"), "saddns")
    assert sc.trigger["kind"] == "third-party"


def test_firewall_hijack_timer_500s():
    sc = scenario_from_profile(get_profile("Firewall"), "hijack")
    assert sc.trigger == {"kind": "timer", "period_s": 500.0}


def test_bitcoin_frag_rejected():
    with pytest.raises(ProfileError):
        scenario_from_profile(get_profile("Bitcoin"), "frag")
    with pytest.raises(ProfileError):
        scenario_from_profile(get_profile("SMTP"), "teleport")


APPLICABLE_PAIRS = [(n, m) for n, (verdicts, _) in EXPECTED_ROWS.items()
                    for m, v in zip(appimpact.METHODS, verdicts) if v != N]


@pytest.mark.parametrize("name,method", APPLICABLE_PAIRS)
def test_every_applicable_pair_builds_a_valid_scenario(name, method):
    prof = get_profile(name)
    sc = scenario_from_profile(prof, method)
    assert sc.profile == prof.name
    assert sc.trigger["kind"] in appimpact.allowed_triggers(prof)
