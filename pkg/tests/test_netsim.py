import json

from anycensus.classifier import Verdict, classify
from anycensus.domain import MeasurementSpec, TargetAddress
from anycensus.gcd import disk_from_rtt, haversine_km
from anycensus.netsim import (
    FIBER_KM_PER_US, EventLoop, Site, SimDeployment, SimTarget, SimWorld, TargetKind, default_vps, generate_world,
    prefix_address, simulate,
)
from anycensus.probecodec import encode

from conftest import DEMO


def test_event_loop_orders_by_time_then_insertion():
    loop = EventLoop(0)
    seen = []
    loop.call_at(10, seen.append, "b")
    loop.call_at(5, seen.append, "a")
    loop.call_at(10, seen.append, "c")
    t = loop.call_at(7, seen.append, "x")
    t.cancel()
    loop.run_for(20)
    assert seen == ["a", "b", "c"] and loop.now_us() == 20


def _trace(seed, world_seed=1):
    world = generate_world(world_seed, vps=default_vps(6), n_unicast=40, n_anycast=10, jitter_ms=2.0,
                           flap_rate=0.05, ecmp_fraction=0.2)
    world.seed = seed
    dep = SimDeployment(world)
    dep.start()
    m = dep.measure(MeasurementSpec(1, "icmp", 4, "anycast", 200, tuple(range(1, 7)), 1000), world.hitlist())
    return dep.network.trace, [r.to_dict() for r in m.replies]


def test_equal_seeds_give_identical_traces():
    a, ra = _trace(3)
    b, rb = _trace(3)
    assert a == b and ra == rb
    c, _ = _trace(4)
    assert a != c


def test_latency_consistency_and_disks_contain_the_site():
    world = generate_world(2, vps=default_vps(), n_unicast=100, n_anycast=30, jitter_ms=3)
    dep = SimDeployment(world)
    dep.start()
    spec = MeasurementSpec(1, "icmp", 4, "unicast", 1000, tuple(range(1, 17)), 0)
    m = dep.measure(spec, world.hitlist())
    sites = {t.prefix: t.sites for t in world.targets}
    assert m.replies
    for r in m.replies:
        assert r.tx_worker == r.rx_worker  # unicast source: replies come home
        vp = world.vp_by_id[r.rx_worker]
        rtt = r.rx_time_us - r.tx_time_us
        served = min(sites[r.target.prefix], key=lambda s: haversine_km((vp.lat, vp.lon), s.location))
        d = haversine_km((vp.lat, vp.lon), served.location)
        assert rtt >= 2 * d / FIBER_KM_PER_US
        assert haversine_km(disk_from_rtt(vp, rtt).center, served.location) <= disk_from_rtt(vp, rtt).radius_km


def _two_site_world(**kw):
    vps = default_vps(3)  # ams, nyc, lax
    prefix, addr = prefix_address(0)
    t = SimTarget(prefix, TargetKind.ANYCAST, addr, (Site("east", 40.7, -74.0), Site("west", 34.0, -118.2)))
    prefix2, addr2 = prefix_address(1)
    u = SimTarget(prefix2, TargetKind.UNICAST, addr2, (Site("u", 48.85, 2.35),))
    return SimWorld(1, tuple(vps), (t, u), **kw)


def test_probe_reaches_nearest_site_and_returns_via_catchment():
    world = _two_site_world(catchment_noise=0)
    spec = MeasurementSpec(1, "icmp", 4, "anycast", 1, (1, 2, 3))
    target = world.hitlist()[0]
    deliveries = {w: world.deliver(encode(spec, target, w, world.epoch_us), w, world.epoch_us) for w in (1, 2, 3)}
    assert deliveries[3].site == "west" and deliveries[3].rx_worker == 3
    assert deliveries[2].site == "east" and deliveries[2].rx_worker == 2
    assert deliveries[1].site == "east" and deliveries[1].rx_worker == 2  # ams is nearer east, not in its catchment


def test_flap_swaps_the_top_two_catchment_entries():
    world = _two_site_world(catchment_noise=0, flap_rate=0.5)
    target = world.targets[1]
    key = (str(target.prefix), "main", 0)
    order = world.preference(target, "main", 0)
    t = world.epoch_us
    while world.flaps_before(key, t) == 0:
        t += 100_000
    assert world.catchment_vp(target, "main", 0, t) == order[1]
    assert world.catchment_vp(target, "main", 0, world.epoch_us) == order[0]


def test_flap_count_grows_with_probe_span():
    fps = []
    for offset_ms in (0, 1_000, 60_000):
        world = generate_world(9, vps=default_vps(6), n_unicast=300, n_anycast=0, flap_rate=2e-3)
        dep = SimDeployment(world, record_trace=False)
        dep.start()
        spec = MeasurementSpec(1, "icmp", 4, "anycast", 1000, tuple(range(1, 7)), offset_ms)
        out = classify(dep.measure(spec, world.hitlist()).replies, spec)
        fps.append(sum(c.verdict is Verdict.CANDIDATE for c in out.values()))
    assert fps[0] <= fps[1] <= fps[2] and fps[2] > fps[0]


def test_ecmp_spreads_flows_over_the_top_entries():
    world = _two_site_world(catchment_noise=0, ecmp_width=2)
    object.__setattr__(world, "_ecmp", {k: True for k in world._ecmp})
    target = world.targets[1]
    order = world.preference(target, "main", 0)
    picks = {world.catchment_vp(target, "main", 0, world.epoch_us, ("s", "d", 17, p, 53)).worker_id
             for p in range(49152, 49252)}
    assert picks == {order[0].worker_id, order[1].worker_id}
    assert world.catchment_vp(target, "main", 0, world.epoch_us).worker_id == order[0].worker_id


def test_services_and_unresponsive_targets():
    world = generate_world(6, vps=default_vps(4), n_unicast=0, n_anycast=3, n_unresponsive=2, tcp_only=3)
    spec = MeasurementSpec(1, "icmp", 4, "anycast", 1, (1,))
    tcp = MeasurementSpec(1, "tcp", 4, "anycast", 1, (1,))
    for t in world.targets:
        icmp_d = world.deliver(encode(spec, t.hitlist_entry, 1, world.epoch_us), 1, world.epoch_us)
        tcp_d = world.deliver(encode(tcp, t.hitlist_entry, 1, world.epoch_us), 1, world.epoch_us)
        assert icmp_d is None
        assert (tcp_d is None) == (t.kind is TargetKind.UNRESPONSIVE)


def test_generated_world_mix_and_ground_truth():
    world = generate_world(13, vps=default_vps(8), n_unicast=30, n_anycast=12, n_confined=4, n_partial=2,
                           n_unresponsive=3)
    truth = world.ground_truth()
    kinds = [gt.kind for gt in truth.values()]
    assert kinds.count(TargetKind.ANYCAST) == 16 and kinds.count(TargetKind.PARTIAL) == 2
    assert sum(gt.single_catchment for gt in truth.values()) == 4
    for gt in truth.values():
        if gt.kind is TargetKind.ANYCAST and not gt.single_catchment:
            assert gt.expected_verdict is Verdict.CANDIDATE and 2 <= gt.site_count <= 4
        if gt.kind is TargetKind.UNICAST:
            assert gt.expected_verdict is Verdict.UNICAST and gt.site_count == 1
        if gt.kind is TargetKind.UNRESPONSIVE:
            assert gt.expected_verdict is Verdict.UNRESPONSIVE
    partial = [t for t in world.targets if t.kind is TargetKind.PARTIAL][0]
    assert len(partial.anycast_addresses) == 6 and len(partial.unicast_addresses) == 200


def test_world_dict_round_trip():
    world = generate_world(2, vps=default_vps(4), n_unicast=5, n_anycast=2, n_partial=1, flap_rate=0.1)
    again = SimWorld.from_dict(json.loads(json.dumps(world.to_dict())))
    assert again.to_dict() == world.to_dict()
    assert again.ground_truth() == world.ground_truth()


def test_demo_world_loads():
    world = SimWorld.load(DEMO / "world.yaml")
    kinds = [t.kind for t in world.targets]
    assert kinds.count(TargetKind.UNICAST) == 950 and kinds.count(TargetKind.ANYCAST) == 50
    assert world.seed == 7 and len(world.vps) == 16


def test_simulate_dumps_trace_and_ground_truth(tmp_path):
    world = generate_world(1, vps=default_vps(4), n_unicast=10, n_anycast=3)
    summary = simulate(world, tmp_path, rate_pps=100)
    for name in ("hitlist.txt", "replies.jsonl", "trace.jsonl", "ground_truth.jsonl", "vps.json", "summary.json"):
        assert (tmp_path / name).exists()
    assert summary["results"] == sum(1 for _ in open(tmp_path / "replies.jsonl"))
    first = simulate(world, tmp_path / "again", rate_pps=100)
    assert first == summary
    assert (tmp_path / "trace.jsonl").read_bytes() == (tmp_path / "again" / "trace.jsonl").read_bytes()


def test_unknown_address_is_dropped():
    world = _two_site_world()
    spec = MeasurementSpec(1, "icmp", 4, "anycast", 1, (1,))
    assert world.deliver(encode(spec, TargetAddress.of("192.0.2.1"), 1, 0), 1, 0) is None
