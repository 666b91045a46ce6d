import io
import itertools
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from anycensus.domain import Prefix, RttSample, VantagePoint
from anycensus.errors import ConfigError, InsufficientData
from anycensus.gcd import (
    City, CityTable, LatencyDisk, detect_anycast, disjoint, disk_from_rtt, enumerate_sites, geolocate, haversine_km,
    infer, load_cities, read_samples,
)


def oracle_distance_km(a, b, r=6371.0):
    """Central angle from unit vectors: atan2(|u x v|, u . v)."""
    def unit(lat, lon):
        la, lo = math.radians(lat), math.radians(lon)
        return (math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la))

    u, v = unit(*a), unit(*b)
    cross = (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])
    dot = sum(x * y for x, y in zip(u, v))
    return r * math.atan2(math.sqrt(sum(c * c for c in cross)), dot)


def brute_force_mis(disks):
    for k in range(len(disks), 0, -1):
        for combo in itertools.combinations(disks, k):
            if all(disjoint(a, b) for a, b in itertools.combinations(combo, 2)):
                return k
    return 0


def vp(i, lat, lon):
    return VantagePoint(i, f"vp{i}", lat, lon, f"198.51.100.{i}", "203.0.113.1")


coords = st.tuples(st.floats(-90, 90), st.floats(-180, 180))


@settings(max_examples=500)
@given(coords, coords)
def test_haversine_matches_vector_oracle(a, b):
    assert abs(haversine_km(a, b) - oracle_distance_km(a, b)) < 0.1


def test_haversine_known_values():
    assert haversine_km((0, 0), (0, 180)) == pytest.approx(math.pi * 6371.0)
    assert haversine_km((0, 0), (90, 0)) == pytest.approx(math.pi * 6371.0 / 2)
    # Amsterdam - New York, about 5,860 km
    assert 5_830 < haversine_km((52.37, 4.90), (40.71, -74.01)) < 5_890


@given(st.integers(1, 10**9))
def test_disk_radius_is_rtt_over_ten(rtt):
    d = disk_from_rtt(vp(1, 10, 20), rtt)
    assert d.radius_km == rtt / 10 and d.center == (10, 20) and d.vp == 1


@pytest.mark.parametrize("rtt", [0, -5])
def test_disk_needs_positive_rtt(rtt):
    with pytest.raises(ConfigError):
        disk_from_rtt(vp(1, 0, 0), rtt)


def test_disjointness_boundary():
    a = LatencyDisk(0, 0, 100, 1, 1000)
    dist = haversine_km((0, 0), (0, 1))
    touching = LatencyDisk(0, 1, dist - 100, 2, 1)
    assert not disjoint(a, touching)
    assert disjoint(a, LatencyDisk(0, 1, dist - 100.001, 2, 1))


def random_disks(rng, n):
    return [LatencyDisk(rng.uniform(-60, 60), rng.uniform(-180, 180), rng.uniform(50, 6000), i, 1) for i in range(n)]


def test_greedy_is_disjoint_maximal_and_bounded_by_exact():
    rng = random.Random(7)
    for _ in range(150):
        disks = random_disks(rng, rng.randint(1, 9))
        chosen = enumerate_sites(disks)
        assert all(disjoint(a, b) for a, b in itertools.combinations(chosen, 2))
        for d in disks:
            assert d in chosen or any(not disjoint(d, c) for c in chosen)
        assert len(chosen) <= brute_force_mis(disks)
        if len(disks) >= 2:
            assert detect_anycast(disks) == (len(chosen) >= 2)


def test_results_invariant_under_permutation():
    rng = random.Random(3)
    for _ in range(50):
        disks = random_disks(rng, 8)
        base = enumerate_sites(disks)
        shuffled = disks[:]
        rng.shuffle(shuffled)
        assert enumerate_sites(shuffled) == base
        assert detect_anycast(shuffled) == detect_anycast(disks)


def test_adding_a_sample_never_flips_detection_off():
    rng = random.Random(5)
    for _ in range(100):
        disks = random_disks(rng, 3)
        if detect_anycast(disks):
            assert detect_anycast(disks + random_disks(rng, 1))


def test_insufficient_inputs():
    with pytest.raises(InsufficientData):
        detect_anycast([LatencyDisk(0, 0, 1, 1, 1)])
    with pytest.raises(InsufficientData):
        enumerate_sites([])
    with pytest.raises(InsufficientData):
        infer(Prefix.parse("10.0.0.0/24"), [RttSample(vp(1, 0, 0), 100), RttSample(vp(1, 0, 0), 50)], [])


def test_geolocate_prefers_population_then_name():
    cities = [City("Bbb", 0, 0.1, 500), City("Aaa", 0, 0.2, 500), City("Big", 40, 40, 10**7), City("Small", 0, 0, 10)]
    disk = LatencyDisk(0, 0, 50, 1, 500)
    assert geolocate(disk, cities).name == "Aaa"
    assert geolocate(LatencyDisk(-60, 100, 10, 1, 100), cities) is None


def test_infer_end_to_end():
    ams, syd, fra = vp(1, 52.37, 4.90), vp(2, -33.87, 151.21), vp(3, 50.11, 8.68)
    cities = CityTable([City("Amsterdam", 52.37, 4.90, 900_000), City("Sydney", -33.87, 151.21, 5_000_000),
                        City("Frankfurt", 50.11, 8.68, 750_000)])
    samples = [RttSample(ams, 2_000), RttSample(ams, 900), RttSample(syd, 1_500), RttSample(fra, 4_000)]
    inf = infer(Prefix.parse("10.0.0.0/24"), samples, cities)
    assert inf.is_anycast and inf.vp_count_used == 3
    assert [(d.vp, c.name) for d, c in inf.sites] == [(1, "Amsterdam"), (2, "Sydney")]
    d = inf.to_dict()
    assert d["site_count"] == 2 and d["sites"][0]["rtt_us"] == 900


def test_city_table_formats():
    tsv = "name\tlat\tlon\tpopulation\nA\t1\t2\t30\nB\t-1\t-2\t40\n"
    csv_text = "population,name,lon,lat\n30,A,2,1\n"
    geonames = "\t".join(["1", "Town", "Town", "", "12.5", "-3.25", "P", "PPL", "XX", "", "", "", "", "",
                          "4242", "", "10", "UTC", "2020-01-01"]) + "\n"
    assert [c.name for c in load_cities(io.StringIO(tsv)).cities] == ["A", "B"]
    c = load_cities(io.StringIO(csv_text)).cities[0]
    assert (c.name, c.lat, c.lon, c.population) == ("A", 1.0, 2.0, 30)
    g = load_cities(io.StringIO(geonames)).cities[0]
    assert (g.name, g.lat, g.lon, g.population) == ("Town", 12.5, -3.25, 4242)
    with pytest.raises(ConfigError):
        load_cities(io.StringIO("a,b\n1,2\n"))


def test_bundled_city_table_has_500_rows():
    from anycensus.pipeline import DATA_DIR

    table = load_cities(DATA_DIR / "cities500.tsv")
    assert len(table) == 500
    assert len({c.name for c in table.cities}) == 500


def test_read_samples():
    roster = {1: vp(1, 0, 0), 2: vp(2, 10, 10)}
    lines = ["prefix vp_id rtt_us", "10.0.0.0/24 1 1500", "10.0.0.0/24,2,2500.0  # comment", "10.0.1.0/24 1 0", ""]
    out = read_samples(lines, roster)
    assert list(out) == [Prefix.parse("10.0.0.0/24")]
    assert [s.rtt_us for s in out[Prefix.parse("10.0.0.0/24")]] == [1500, 2500]
    with pytest.raises(ConfigError):
        read_samples(["10.0.0.0/24 9 100"], roster)
    with pytest.raises(ConfigError):
        read_samples(["10.0.0.0/24 1"], roster)
