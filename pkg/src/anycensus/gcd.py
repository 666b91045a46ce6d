"""Latency-based anycast detection, enumeration and geolocation.

An RTT bounds how far the target can be from the vantage point: light in
fibre covers about 200,000 km/s, so a round trip of ``rtt_us`` microseconds
allows at most ``rtt_us / 10`` km one way. Two such disks that cannot share a
point prove two distinct locations.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .domain import Prefix, RttSample, VantagePoint
from .errors import ConfigError, InsufficientData

EARTH_RADIUS_KM = 6371.0
FIBER_KM_PER_S = 200_000.0


def haversine_km(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance between two (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


def _haversine_many(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lat1, lon1 = np.radians(lat), np.radians(lon)
    lat2, lon2 = np.radians(lats), np.radians(lons)
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(1.0, h)))


@dataclass(frozen=True)
class LatencyDisk:
    center_lat: float
    center_lon: float
    radius_km: float
    vp: int
    rtt_us: int

    @property
    def center(self) -> tuple:
        return (self.center_lat, self.center_lon)

    def sort_key(self):
        return (self.radius_km, self.vp, self.center_lat, self.center_lon)


def disk_from_rtt(vp: VantagePoint, rtt_us: int) -> LatencyDisk:
    if not rtt_us > 0:
        raise ConfigError(f"RTT must be positive, got {rtt_us}")
    # (rtt/2) s * 200,000 km/s with rtt in µs == rtt_us / 10 km
    return LatencyDisk(vp.lat, vp.lon, rtt_us / 10, vp.worker_id, rtt_us)


def disjoint(a: LatencyDisk, b: LatencyDisk) -> bool:
    return haversine_km(a.center, b.center) > a.radius_km + b.radius_km


def detect_anycast(disks: Sequence[LatencyDisk]) -> bool:
    """True iff some pair of disks cannot overlap (a speed-of-light violation)."""
    if len(disks) < 2:
        raise InsufficientData("anycast detection needs at least two disks")
    return any(disjoint(disks[i], disks[j])
               for i in range(len(disks)) for j in range(i + 1, len(disks)))


def enumerate_sites(disks: Sequence[LatencyDisk]) -> List[LatencyDisk]:
    """Greedy independent set: smallest disks first, keep each disjoint one.

    The result is pairwise disjoint and maximal, and its size is a lower
    bound on the number of sites.
    """
    if not disks:
        raise InsufficientData("site enumeration needs at least one disk")
    accepted: List[LatencyDisk] = []
    for disk in sorted(disks, key=LatencyDisk.sort_key):
        if all(disjoint(disk, other) for other in accepted):
            accepted.append(disk)
    return accepted


@dataclass(frozen=True)
class City:
    name: str
    lat: float
    lon: float
    population: int

    def __post_init__(self):
        if not (-90 <= self.lat <= 90 and -180 <= self.lon <= 180):
            raise ConfigError(f"city {self.name}: coordinates out of range")
        if self.population < 0:
            raise ConfigError(f"city {self.name}: negative population")


class CityTable:
    """Cities held as arrays for vectorised disk queries."""

    def __init__(self, cities: Iterable[City]):
        self.cities = list(cities)
        self.lats = np.array([c.lat for c in self.cities], dtype=float)
        self.lons = np.array([c.lon for c in self.cities], dtype=float)
        self.pops = np.array([c.population for c in self.cities], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.cities)

    def within(self, lat: float, lon: float, radius_km: float) -> np.ndarray:
        if not self.cities:
            return np.zeros(0, dtype=int)
        return np.nonzero(_haversine_many(lat, lon, self.lats, self.lons) <= radius_km)[0]


def load_cities(source: Union[str, Path, io.TextIOBase]) -> CityTable:
    """Read a city table.

    Accepts a header-led delimited file with ``name, lat, lon, population``
    columns (tab or comma), or a raw GeoNames dump (19 tab-separated columns,
    population at column 15).
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_cities(fh)
    text = source.read()
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    if not lines:
        return CityTable([])
    delim = "\t" if "\t" in lines[0] else ","
    first = next(csv.reader([lines[0]], delimiter=delim))
    cities = []
    if len(first) >= 19:
        for row in csv.reader(lines, delimiter="\t", quoting=csv.QUOTE_NONE):
            cities.append(City(row[1], float(row[4]), float(row[5]), int(row[14] or 0)))
        return CityTable(cities)
    header = [h.strip().lower() for h in first]
    try:
        idx = [header.index(k) for k in ("name", "lat", "lon", "population")]
    except ValueError:
        raise ConfigError("city table needs name, lat, lon, population columns") from None
    for row in csv.reader(lines[1:], delimiter=delim):
        cities.append(City(row[idx[0]], float(row[idx[1]]), float(row[idx[2]]), int(row[idx[3]])))
    return CityTable(cities)


def geolocate(disk: LatencyDisk, cities: Union[CityTable, Sequence[City]]) -> Optional[City]:
    """Most populous city inside the disk; ties go to the smallest name."""
    table = cities if isinstance(cities, CityTable) else CityTable(cities)
    inside = table.within(disk.center_lat, disk.center_lon, disk.radius_km)
    if len(inside) == 0:
        return None
    best = min(inside, key=lambda i: (-int(table.pops[i]), table.cities[i].name))
    return table.cities[best]


@dataclass(frozen=True)
class GcdInference:
    prefix: Prefix
    is_anycast: bool
    sites: tuple  # ((LatencyDisk, City | None), ...)
    vp_count_used: int
    address: Optional[str] = None

    def to_dict(self) -> dict:
        out = {
            "prefix": str(self.prefix),
            "is_anycast": self.is_anycast,
            "site_count": len(self.sites),
            "vp_count": self.vp_count_used,
            "sites": [
                {
                    "vp": d.vp,
                    "rtt_us": d.rtt_us,
                    "radius_km": round(d.radius_km, 3),
                    "city": c.name if c else None,
                    "lat": c.lat if c else None,
                    "lon": c.lon if c else None,
                }
                for d, c in self.sites
            ],
        }
        if self.address is not None:
            out["address"] = self.address
        return out


def infer(prefix: Prefix, samples: Sequence[RttSample], cities: Union[CityTable, Sequence[City]],
          address: Optional[str] = None) -> GcdInference:
    """Disks -> detection -> enumeration -> geolocation for one prefix.

    Several samples from one VP collapse to its smallest RTT.
    """
    best: dict = {}
    for s in samples:
        if s.rtt_us > 0 and (s.vp.worker_id not in best or s.rtt_us < best[s.vp.worker_id].rtt_us):
            best[s.vp.worker_id] = s
    if len(best) < 2:
        raise InsufficientData(f"{prefix}: {len(best)} vantage point(s) with valid RTTs")
    disks = [disk_from_rtt(s.vp, s.rtt_us) for _, s in sorted(best.items())]
    table = cities if isinstance(cities, CityTable) else CityTable(cities)
    sites = enumerate_sites(disks)
    located = tuple((d, geolocate(d, table)) for d in sites)
    return GcdInference(prefix, len(sites) >= 2, located, len(best), address)


def read_samples(source, roster: Mapping[int, VantagePoint]) -> dict:
    """Parse ``prefix, vp_id, rtt_us`` lines into ``{Prefix: [RttSample]}``."""
    out: dict = {}
    for raw in source:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if parts[0].lower() == "prefix":
            continue
        if len(parts) != 3:
            raise ConfigError(f"bad sample line: {raw.strip()!r}")
        prefix = Prefix.parse(parts[0])
        vp = roster.get(int(parts[1]))
        if vp is None:
            raise ConfigError(f"sample references unknown VP {parts[1]}")
        rtt = int(float(parts[2]))
        if rtt > 0:
            out.setdefault(prefix, []).append(RttSample(vp, rtt))
    return out
