"""Resolver, nameserver, forwarder and trigger-client actors."""

from .clients import (
    TRIGGER_KINDS,
    OpenForwarder,
    ScenarioError,
    Trigger,
    TriggerClient,
    trigger_query,
)
from .nameserver import (
    IPID_POLICIES,
    MIN_PMTU,
    Nameserver,
    NameserverConfig,
    RateLimiter,
    Zone,
    exact_txt_rdata,
    nameserver_handle_icmp,
    nameserver_handle_query,
)
from .resolver import (
    DNS_PORT,
    CacheEntry,
    IcmpRateLimiter,
    PendingQuery,
    Provenance,
    Resolver,
    ResolverConfig,
    in_bailiwick,
    mangle_0x20,
    resolver_handle_client_query,
    resolver_handle_udp_probe,
)
