import ipaddress
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from anycensus.domain import (
    MeasurementSpec, Prefix, ProbeReply, Protocol, SourceMode, TargetAddress, VantagePoint, load_hitlist, prefix_of,
    rtt_from_reply,
)
from anycensus.errors import ConfigError

v4 = st.integers(0, 2**32 - 1).map(ipaddress.IPv4Address)
v6 = st.integers(0, 2**128 - 1).map(ipaddress.IPv6Address)


@given(v4, st.integers(8, 32))
def test_prefix_normalize_idempotent_v4(addr, length):
    p = Prefix.of(addr, length)
    assert p.normalize() == p
    assert p.normalize().normalize() == p.normalize()
    assert int(p.base_address) & ((1 << (32 - length)) - 1) == 0


@given(v6, st.integers(16, 64))
def test_prefix_normalize_idempotent_v6(addr, length):
    p = Prefix.of(addr, length)
    assert p.normalize().normalize() == p.normalize() == p


@given(st.one_of(v4, v6))
def test_prefix_of_contains_address(addr):
    assert prefix_of(addr).contains(addr)
    assert prefix_of(addr).length == (24 if addr.version == 4 else 48)


def test_prefix_parse_masks_host_bits_and_rejects_odd_lengths():
    assert str(Prefix.parse("192.0.2.77/24")) == "192.0.2.0/24"
    with pytest.raises(ConfigError):
        Prefix.parse("10.0.0.0/4")
    with pytest.raises(ConfigError):
        Prefix.parse("2001:db8::/96")


def test_prefix_ordering_puts_v4_first():
    ps = [Prefix.parse("2001:db8::/48"), Prefix.parse("10.0.1.0/24"), Prefix.parse("10.0.0.0/24")]
    assert [str(p) for p in sorted(ps)] == ["10.0.0.0/24", "10.0.1.0/24", "2001:db8::/48"]


def test_target_must_lie_in_prefix():
    with pytest.raises(ConfigError):
        TargetAddress(ipaddress.ip_address("10.0.1.1"), Prefix.parse("10.0.0.0/24"))


def _spec(**kw):
    base = dict(measurement_id=1, protocol="icmp", ip_version=4, source_mode="anycast", rate_pps=10, workers=(1, 2))
    base.update(kw)
    return MeasurementSpec(**base)


def test_spec_coerces_enums_and_round_trips():
    s = _spec(protocol="dns_a", dns_probe_domain="x.example")
    assert s.protocol is Protocol.DNS_A and s.source_mode is SourceMode.ANYCAST
    assert MeasurementSpec.from_dict(s.to_dict()) == s
    assert s.offset_us == 1_000_000


@pytest.mark.parametrize("kw", [
    {"rate_pps": 0}, {"rate_pps": -5}, {"ip_version": 5}, {"workers": ()}, {"workers": (1, 1)},
    {"workers": (0,)}, {"workers": (70000,)}, {"measurement_id": 2**32}, {"worker_offset_ms": -1},
    {"protocol": "dns_a"}, {"tcp_dst_port": 0},
])
def test_spec_rejects_invalid(kw):
    with pytest.raises((ConfigError, ValueError)):
        _spec(**kw)


def test_vantage_point_round_trip_and_source_addresses(vps):
    vp = vps[3]
    assert VantagePoint.from_dict(vp.to_dict()) == vp
    assert vp.source_address(SourceMode.ANYCAST, 4) == ipaddress.ip_address("203.0.113.1")
    assert vp.source_address(SourceMode.UNICAST, 6) == ipaddress.ip_address("2001:db8:ffff::3")
    bare = VantagePoint(9, "x", 0, 0, "198.51.100.9", "203.0.113.1")
    with pytest.raises(ConfigError):
        bare.source_address(SourceMode.ANYCAST, 6)


def _reply(tx, rx, t0, t1):
    return ProbeReply(1, TargetAddress.of("10.0.0.1"), tx, rx, t0, t1, Protocol.ICMP)


@given(st.integers(0, 2**40), st.integers(-10**6, 10**6), st.integers(1, 3), st.integers(1, 3))
def test_rtt_from_reply_never_non_positive(t0, d, tx, rx):
    roster = {i: VantagePoint(i, f"v{i}", 0, 0, f"198.51.100.{i}", "203.0.113.1") for i in (1, 2, 3)}
    stats = Counter()
    s = rtt_from_reply(_reply(tx, rx, t0, t0 + d), roster, stats)
    if s is not None:
        assert s.rtt_us > 0 and tx == rx and s.rtt_us == d
    elif tx == rx:
        assert d <= 0 and stats["rtt_anomalies"] == 1


def test_rtt_from_reply_skips_cross_site_and_unknown_vp():
    roster = {1: VantagePoint(1, "a", 0, 0, "198.51.100.1", "203.0.113.1")}
    assert rtt_from_reply(_reply(1, 2, 0, 10), roster) is None
    stats = Counter()
    assert rtt_from_reply(_reply(5, 5, 0, 10), roster, stats) is None
    assert stats["unknown_vp"] == 1


def test_probe_reply_dict_round_trip():
    r = ProbeReply(7, TargetAddress.of("2001:db8::5"), 1, 2, 10, 20, Protocol.DNS_CHAOS, "ams")
    d = r.to_dict()
    assert d["cross_site"] is True and d["prefix"] == "2001:db8::/48"
    assert ProbeReply.from_dict(d) == r


def test_load_hitlist_forms():
    lines = ["# comment", "10.0.0.1", "10.0.1.0/24, 10.0.1.9", "2001:db8::/48 2001:db8::1  # trailing", ""]
    ts = load_hitlist(lines)
    assert [str(t.address) for t in ts] == ["10.0.0.1", "10.0.1.9", "2001:db8::1"]
    assert [str(t.prefix) for t in ts] == ["10.0.0.0/24", "10.0.1.0/24", "2001:db8::/48"]
    with pytest.raises(ConfigError):
        load_hitlist(["10.0.1.0/24 10.0.2.1"])
