import json

import pytest

from anycensus.domain import Prefix, Protocol, TargetAddress
from anycensus.errors import ConfigError, InsufficientData
from anycensus.gcd import load_cities
from anycensus.netsim import Site, SimTarget, SimWorld, TargetKind, default_vps, partial_target, prefix_address
from anycensus.pipeline import (
    AlertKind, CensusConfig, CensusRecord, FeedbackStore, Provenance, SimBackend, baseline_metrics,
    compare_to_baseline, flag_partial_anycast, measurement_id, parse_date, read_census, run_daily_census,
    run_sweep, write_census,
)

from conftest import DATA, copy_demo


@pytest.fixture(scope="module")
def cities():
    return load_cities(DATA / "cities500.tsv")


@pytest.fixture(scope="module")
def demo_census(tmp_path_factory, cities):
    root = copy_demo(tmp_path_factory.mktemp("census"))
    config = CensusConfig.from_file(root / "census.yaml")
    world = SimWorld.load(config.world)
    result = run_daily_census(config, SimBackend(world), cities, FeedbackStore.load(config.feedback_store),
                              "2026-01-05")
    return config, world, result


def test_published_is_manycast_union_gcd(demo_census):
    _, _, result = demo_census
    assert result.published == result.manycast | result.gcd
    assert not result.manycast & result.gcd
    for rec in result.records:
        assert rec.published
        assert rec.gcd_confirmed == (rec.prefix in result.gcd)
        if rec.manycast_confirmed:
            assert any(rec.candidates.values())


def test_gcd_bucket_matches_oracle_anycast(demo_census):
    _, world, result = demo_census
    truth = world.ground_truth()
    oracle = {p for p, gt in truth.items() if gt.kind is TargetKind.ANYCAST}
    assert result.gcd == oracle
    for rec in result.records:
        if rec.gcd_confirmed:
            assert 2 <= rec.gcd_site_count <= truth[rec.prefix].site_count
            assert len(rec.geolocations) == rec.gcd_site_count


def test_gcd_probes_only_candidates(demo_census):
    config, _, result = demo_census
    stats = result.stats
    assert stats["gcd_targets"] == {"icmp_v4": len(result.candidates), "tcp_v4": len(result.candidates)}
    assert stats["hitlist_sizes"]["icmp_v4"] >= 10 * len(result.candidates)


def test_tcp_only_anycast_reaches_gcd(demo_census):
    _, world, result = demo_census
    tcp_only = [t.prefix for t in world.targets if t.services == frozenset({Protocol.TCP})]
    assert len(tcp_only) == 5
    by_prefix = {r.prefix: r for r in result.records}
    for p in tcp_only:
        rec = by_prefix[p]
        assert rec.gcd_confirmed and rec.candidates == {"tcp_v4": True}


def test_chaos_values_recorded(demo_census):
    _, world, result = demo_census
    rec = next(r for r in result.records if r.gcd_confirmed and r.chaos_values)
    names = {s.name for t in world.targets if t.prefix == rec.prefix for s in t.sites}
    assert set(rec.chaos_values) <= names


def test_files_written_atomically(demo_census):
    config, _, result = demo_census
    assert result.census_path.exists() and result.stats_path.exists()
    assert not list(config.output_dir.glob("*.partial"))
    back = [r.to_dict() for r in read_census(result.census_path)]
    assert back == [r.to_dict() for r in sorted(result.records, key=lambda r: r.prefix)]
    header = result.census_path.read_text().splitlines()[0]
    assert header.startswith("# anycensus census date=2026-01-05")
    store = FeedbackStore.load(config.feedback_store)
    assert set(store.prefixes()) == result.gcd


def _feedback_world():
    vps = default_vps(6)
    anycast = []
    for i in range(3):
        prefix, addr = prefix_address(i)
        a, b = vps[i], vps[i + 3]
        anycast.append(SimTarget(prefix, TargetKind.ANYCAST, addr,
                                 (Site(f"s{i}a", a.lat, a.lon + 0.5), Site(f"s{i}b", b.lat, b.lon + 0.5))))
    unicast = []
    for i in range(3, 40):
        prefix, addr = prefix_address(i)
        vp = vps[i % 6]
        unicast.append(SimTarget(prefix, TargetKind.UNICAST, addr, (Site(f"u{i}", vp.lat + 1, vp.lon),)))
    return SimWorld(5, tuple(vps), tuple(anycast + unicast), jitter_ms=0.5)


def _config(tmp_path, **kw):
    raw = {"output_dir": str(tmp_path / "out"), "feedback_store": str(tmp_path / "out" / "fb.json"),
           "hitlists": {"v4": str(tmp_path / "unused.txt")}, "world": "unused.yaml",
           "protocols": ["icmp"], "offset_ms": 0}
    raw.update(kw)
    return CensusConfig.from_dict(raw)


def test_feedback_recovers_a_missed_prefix(tmp_path, cities):
    world = _feedback_world()
    config = _config(tmp_path)
    backend = SimBackend(world)
    hitlist = world.hitlist()
    missed = hitlist[0].prefix
    store = FeedbackStore.load(config.feedback_store)

    day1 = run_daily_census(config, backend, cities, store, "2026-01-01", hitlists={(Protocol.ICMP, 4): hitlist})
    assert missed in day1.gcd and missed in store

    # day 2: the prefix drops out of the anycast-stage hitlist
    store = FeedbackStore.load(config.feedback_store)
    day2 = run_daily_census(config, backend, cities, store, "2026-01-02",
                            hitlists={(Protocol.ICMP, 4): hitlist[1:]})
    assert missed in day2.candidates and missed in day2.gcd
    rec = next(r for r in day2.records if r.prefix == missed)
    assert rec.gcd_confirmed and not any(rec.candidates.values())
    assert day2.stats["feedback_added"] == 1
    assert FeedbackStore.load(config.feedback_store).entries[missed].last_confirmed == "2026-01-02"

    # without the store the prefix is lost
    cold = run_daily_census(config, backend, cities, FeedbackStore(), "2026-01-02",
                            hitlists={(Protocol.ICMP, 4): hitlist[1:]}, write=False)
    assert missed not in cold.published


def test_ecmp_unicast_lands_in_manycast_only(tmp_path, cities):
    vps = default_vps(4)
    prefix, addr = prefix_address(0)
    # a unicast host in the middle of the Atlantic, flow-hashed over two paths
    target = SimTarget(prefix, TargetKind.UNICAST, addr, (Site("mid", 45.0, -35.0),), ecmp=True)
    world = SimWorld(1, tuple(vps), (target,), catchment_noise=0, ecmp_width=2)
    result = run_daily_census(_config(tmp_path), SimBackend(world), cities, FeedbackStore(), "2026-01-01",
                              hitlists={(Protocol.ICMP, 4): world.hitlist()}, write=False)
    assert result.manycast == {prefix} and not result.gcd
    rec = result.records[0]
    assert rec.manycast_confirmed and not rec.gcd_confirmed and rec.gcd_site_count == 0


def test_partial_sweep_flags_only_mixed_prefixes(cities):
    import random

    vps = default_vps(8)
    p0, _ = prefix_address(0)
    mixed = partial_target(p0, [vps[0], vps[5]], vps[2], random.Random(1))
    p1, a1 = prefix_address(1)
    full = SimTarget(p1, TargetKind.ANYCAST, a1, (Site("x", vps[1].lat, vps[1].lon), Site("y", vps[6].lat, vps[6].lon)))
    p2, a2 = prefix_address(2)
    uni = SimTarget(p2, TargetKind.UNICAST, a2, (Site("z", vps[3].lat, vps[3].lon),))
    world = SimWorld(2, tuple(vps), (mixed, full, uni))
    targets = [TargetAddress.of(str(a)) for a in mixed.anycast_addresses + mixed.unicast_addresses]
    targets += [full.hitlist_entry, uni.hitlist_entry]
    store = FeedbackStore()
    out = run_sweep(SimBackend(world), targets, cities, date="2026-01-01", rate_pps=10_000,
                    per_address=True, feedback=store)
    assert out.partial == {p0}
    assert set(out.confirmed) == {p0, p1}
    assert store.entries[p1].provenance is Provenance.LARGE_SCALE
    assert store.entries[p0].address == str(mixed.anycast_addresses[0])


def test_flag_partial_ignores_unresponsive():
    p = Prefix.parse("10.0.0.0/24")
    assert flag_partial_anycast({"10.0.0.1": True, "10.0.0.2": False}, [p]) == {p}
    assert flag_partial_anycast({"10.0.0.1": True}, [p]) == set()
    assert flag_partial_anycast({"10.0.1.1": True, "10.0.0.2": False}, [p]) == set()


def test_baseline_alerts():
    history = [{"results.dns_a_v4": 1000, "results.icmp_v4": 5000, "vps": 32}] * 7
    alerts = compare_to_baseline({"results.dns_a_v4": 0, "results.icmp_v4": 5040, "vps": 32}, history)
    assert [(a.kind, a.metric) for a in alerts] == [(AlertKind.ZERO_RESULTS, "results.dns_a_v4")]
    assert compare_to_baseline({"results.dns_a_v4": 992, "results.icmp_v4": 5000, "vps": 32}, history) == []
    drop = compare_to_baseline({"results.dns_a_v4": 1000, "results.icmp_v4": 5000, "vps": 20}, history)
    assert [a.kind for a in drop] == [AlertKind.VP_DROP]
    dev = compare_to_baseline({"results.dns_a_v4": 1500, "results.icmp_v4": 5000, "vps": 32}, history)
    assert [a.kind for a in dev] == [AlertKind.DEVIATION] and dev[0].deviation == pytest.approx(0.5)
    with pytest.raises(InsufficientData):
        compare_to_baseline({"vps": 1}, [])


def test_baseline_window_uses_trailing_median():
    history = [{"x.y": 10}] * 3 + [{"x.y": 100}] * 4
    assert compare_to_baseline({"x.y": 100}, history, window=4) == []
    assert compare_to_baseline({"x.y": 100}, history, window=7) == []
    assert compare_to_baseline({"x.y": 10}, history, window=4)


def test_census_raises_alerts_from_history(tmp_path, cities):
    world = _feedback_world()
    config = _config(tmp_path)
    out = tmp_path / "out"
    out.mkdir()
    fake = {"candidates": {"icmp_v4": 3}, "results": {"icmp_v4": 10_000}, "vps": 6, "gcd_confirmed": 3}
    (out / "census-2026-01-01.stats.json").write_text(json.dumps(fake))
    result = run_daily_census(config, SimBackend(world), cities, FeedbackStore(), "2026-01-02",
                              hitlists={(Protocol.ICMP, 4): world.hitlist()})
    assert [a.metric for a in result.alerts] == ["results.icmp_v4"]
    assert json.loads(result.stats_path.read_text())["alerts"][0]["kind"] == "Deviation"
    assert baseline_metrics(fake) == {"candidates.icmp_v4": 3, "results.icmp_v4": 10_000, "vps": 6,
                                      "gcd_confirmed": 3}


@pytest.mark.parametrize("patch,needle", [
    ({"rate_pps": 0}, "rate_pps"),
    ({"gcd_rate_pps": -1}, "gcd_rate_pps"),
    ({"offset_ms": -5}, "offset_ms"),
    ({"backend": "cloud"}, "backend"),
    ({"bogus": 1}, "bogus"),
    ({"protocols": ["smtp"]}, "smtp"),
    ({"backend": "remote"}, "orchestrator"),
])
def test_config_errors(tmp_path, patch, needle):
    with pytest.raises(ConfigError, match=needle):
        _config(tmp_path, **patch)


def test_config_requires_core_keys(tmp_path):
    with pytest.raises(ConfigError, match="hitlists"):
        CensusConfig.from_dict({"output_dir": "o", "feedback_store": "f"})
    bad = tmp_path / "c.yaml"
    bad.write_text("a: [1,\n")
    with pytest.raises(ConfigError, match="YAML"):
        CensusConfig.from_file(bad)
    with pytest.raises(ConfigError):
        CensusConfig.from_file(tmp_path / "missing.yaml")


def test_config_resolves_relative_paths(tmp_path):
    config = CensusConfig.from_dict({"output_dir": "out", "feedback_store": "out/fb.json",
                                     "hitlists": {"v4": "h.txt", "tcp_v4": "t.txt"}, "world": "w.yaml",
                                     "cities": "@data/cities500.tsv"}, base=tmp_path)
    assert config.output_dir == tmp_path / "out"
    assert config.cities == DATA / "cities500.tsv"
    assert config.hitlist_path(Protocol.TCP, 4) == tmp_path / "t.txt"
    assert config.hitlist_path(Protocol.ICMP, 4) == tmp_path / "h.txt"
    assert config.hitlist_path(Protocol.ICMP, 6) is None


def test_measurement_id_and_dates():
    assert measurement_id("2026-01-05", 3) == 2026010503
    with pytest.raises(ConfigError):
        parse_date("05/01/2026")
    assert parse_date("2026-01-05") == "2026-01-05"


def test_feedback_store_round_trip(tmp_path):
    path = tmp_path / "fb.json"
    store = FeedbackStore(path)
    p = Prefix.parse("192.0.2.0/24")
    store.confirm(p, "2026-01-01", Provenance.DAILY, "192.0.2.7")
    store.confirm(p, "2026-01-02", Provenance.LARGE_SCALE)
    store.confirm(Prefix.parse("2001:db8::/48"), "2026-01-02", "daily")
    store.save()
    again = FeedbackStore.load(path)
    assert again.to_dict() == store.to_dict()
    assert again.entries[p].address == "192.0.2.7" and again.entries[p].provenance is Provenance.LARGE_SCALE
    assert str(again.target(p).address) == "192.0.2.7"
    assert str(again.target(Prefix.parse("2001:db8::/48")).address) == "2001:db8::1"
    assert again.prefixes(6) == [Prefix.parse("2001:db8::/48")]
    assert not list(tmp_path.glob("*.partial"))


def test_census_record_round_trip(tmp_path, vps):
    rec = CensusRecord("2026-01-01", Prefix.parse("198.51.100.0/24"), {"icmp_v4": True}, False, True, 3, 2,
                       [("Amsterdam", 52.37, 4.89), ("Tokyo", 35.69, 139.69)], 12, chaos_values=["ams1"])
    path = tmp_path / "c.jsonl"
    write_census(path, "2026-01-01", vps, [rec])
    back = read_census(path)
    assert back[0].to_dict() == rec.to_dict()
    assert back[0].to_dict()["candidates"]["tcp_v4"] is False
