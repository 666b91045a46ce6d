"""Daily census assembly.

Stages run in order:

1. anycast-source measurement per (protocol, IP version) over the full hitlist;
2. candidate set = classifier candidates plus prefixes confirmed by GCD before;
3. unicast-source GCD measurement (ICMP and TCP only) toward the candidates;
4. merge into one :class:`CensusRecord` per published prefix;
5. the feedback store gains today's GCD-confirmed prefixes.

Outputs are written to ``*.partial`` files and renamed only once every stage
has succeeded, so a failed run never leaves something that looks final.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Protocol as TypingProtocol, Sequence

import yaml

from . import __version__
from .classifier import AnycastClassification, Verdict, candidate_set, classify
from .domain import (
    MeasurementSpec, Prefix, ProbeReply, Protocol, SourceMode, TargetAddress, VantagePoint,
    ip, load_hitlist, rtt_from_reply,
)
from .errors import ConfigError, InsufficientData
from .gcd import CityTable, GcdInference, infer, load_cities

logger = logging.getLogger("anycensus.pipeline")

GCD_PROTOCOLS = (Protocol.ICMP, Protocol.TCP)
BASELINE_WINDOW = 7
BASELINE_THRESHOLD = 0.30
DATA_DIR = Path(__file__).parent / "data"


# -- measurement backends ----------------------------------------------------

@dataclass
class MeasurementOutcome:
    replies: List[ProbeReply]
    summary: dict


class MeasurementBackend(TypingProtocol):
    """Anything that can run one measurement and report the VP roster."""

    def roster(self) -> Dict[int, VantagePoint]: ...

    def measure(self, spec: MeasurementSpec, targets: Sequence[TargetAddress]) -> MeasurementOutcome: ...


class SimBackend:
    """Backend on a :class:`~anycensus.netsim.SimDeployment`."""

    def __init__(self, world, workers: Optional[Iterable[int]] = None):
        from .netsim import SimDeployment

        self.world = world
        self.deployment = SimDeployment(world)
        self.workers = sorted(workers) if workers is not None else sorted(world.vp_by_id)
        self.deployment.start(self.workers)

    def roster(self) -> Dict[int, VantagePoint]:
        return {w: self.world.vp_by_id[w] for w in self.workers}

    def measure(self, spec: MeasurementSpec, targets: Sequence[TargetAddress]) -> MeasurementOutcome:
        result = self.deployment.measure(spec, targets)
        return MeasurementOutcome(result.replies, result.summary)


# -- feedback store ----------------------------------------------------------

class Provenance(str, Enum):
    DAILY = "daily"
    LARGE_SCALE = "large-scale"


@dataclass
class FeedbackEntry:
    last_confirmed: str
    provenance: Provenance
    address: Optional[str] = None


class FeedbackStore:
    """GCD-confirmed prefixes carried into later candidate sets.

    Entries are only added or refreshed from confirmed GCD inferences and
    never expire on their own; the periodic full sweep keeps them honest.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self.entries: Dict[Prefix, FeedbackEntry] = {}

    @classmethod
    def load(cls, path) -> "FeedbackStore":
        store = cls(path)
        p = Path(path)
        if p.exists():
            with open(p, encoding="utf-8") as fh:
                data = json.load(fh)
            for prefix, e in data.get("entries", {}).items():
                store.entries[Prefix.parse(prefix)] = FeedbackEntry(
                    e["last_confirmed"], Provenance(e["provenance"]), e.get("address"))
        return store

    def confirm(self, prefix: Prefix, date: str, provenance: Provenance, address: Optional[str] = None) -> None:
        old = self.entries.get(prefix)
        if address is None and old is not None:
            address = old.address
        self.entries[prefix] = FeedbackEntry(date, Provenance(provenance), address)

    def prefixes(self, ip_version: Optional[int] = None) -> List[Prefix]:
        return sorted(p for p in self.entries if ip_version is None or p.ip_version == ip_version)

    def target(self, prefix: Prefix) -> TargetAddress:
        entry = self.entries[prefix]
        addr = entry.address or str(prefix.base_address + 1)
        return TargetAddress(ip(addr), prefix)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "entries": {
                str(p): {"last_confirmed": e.last_confirmed, "provenance": e.provenance.value,
                         **({"address": e.address} if e.address else {})}
                for p, e in sorted(self.entries.items())
            },
        }

    def save(self, path=None) -> None:
        target = Path(path or self.path)
        tmp = target.with_name(target.name + ".partial")
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, target)

    def __contains__(self, prefix) -> bool:
        return prefix in self.entries

    def __len__(self) -> int:
        return len(self.entries)


# -- census records ----------------------------------------------------------

def candidate_key(protocol: Protocol, ip_version: int) -> str:
    family = "dns" if protocol in (Protocol.DNS_A, Protocol.DNS_CHAOS) else protocol.value
    return f"{family}_v{ip_version}"


CANDIDATE_FLAGS = tuple(f"{f}_v{v}" for f in ("icmp", "tcp", "dns") for v in (4, 6))


@dataclass
class CensusRecord:
    date: str
    prefix: Prefix
    candidates: Dict[str, bool]
    manycast_confirmed: bool
    gcd_confirmed: bool
    manycast_site_count: int
    gcd_site_count: int
    geolocations: List[tuple]
    vp_count: int
    partial_anycast: bool = False
    chaos_values: Optional[List[str]] = None

    @property
    def published(self) -> bool:
        return self.manycast_confirmed or self.gcd_confirmed

    def to_dict(self) -> dict:
        out = {
            "date": self.date,
            "prefix": str(self.prefix),
            "candidates": {k: bool(self.candidates.get(k, False)) for k in CANDIDATE_FLAGS},
            "manycast_confirmed": self.manycast_confirmed,
            "gcd_confirmed": self.gcd_confirmed,
            "manycast_site_count": self.manycast_site_count,
            "gcd_site_count": self.gcd_site_count,
            "geolocations": [list(g) for g in self.geolocations],
            "vp_count": self.vp_count,
            "partial_anycast": self.partial_anycast,
        }
        if self.chaos_values is not None:
            out["chaos_values"] = list(self.chaos_values)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CensusRecord":
        return cls(
            date=d["date"], prefix=Prefix.parse(d["prefix"]), candidates=dict(d["candidates"]),
            manycast_confirmed=d["manycast_confirmed"], gcd_confirmed=d["gcd_confirmed"],
            manycast_site_count=d["manycast_site_count"], gcd_site_count=d["gcd_site_count"],
            geolocations=[tuple(g) for g in d["geolocations"]], vp_count=d["vp_count"],
            partial_anycast=d.get("partial_anycast", False), chaos_values=d.get("chaos_values"),
        )


def roster_hash(roster: Mapping[int, VantagePoint]) -> str:
    body = json.dumps([roster[w].to_dict() for w in sorted(roster)], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode()).hexdigest()[:16]


def census_header(date: str, roster: Mapping[int, VantagePoint]) -> str:
    return f"# anycensus census date={date} version={__version__} vp_roster={roster_hash(roster)}\n"


def write_census(path: Path, date: str, roster, records: Iterable[CensusRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(census_header(date, roster))
        for rec in sorted(records, key=lambda r: r.prefix):
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")


def read_census(path) -> List[CensusRecord]:
    with open(path, encoding="utf-8") as fh:
        return [CensusRecord.from_dict(json.loads(l)) for l in fh if l.strip() and not l.startswith("#")]


# -- configuration -----------------------------------------------------------

@dataclass
class CensusConfig:
    output_dir: Path
    feedback_store: Path
    hitlists: Dict[str, Path]
    protocols: tuple = (Protocol.ICMP, Protocol.TCP, Protocol.DNS_A, Protocol.DNS_CHAOS)
    ip_versions: tuple = (4,)
    rate_pps: float = 1000.0
    gcd_rate_pps: Optional[float] = None
    offset_ms: int = 1000
    workers: Optional[tuple] = None
    cities: Optional[Path] = None
    dns_probe_domain: str = "probe.census.example"
    tcp_dst_port: int = 62222
    partial_flags: Optional[Path] = None
    baseline_window: int = BASELINE_WINDOW
    baseline_threshold: float = BASELINE_THRESHOLD
    backend: str = "sim"
    world: Optional[Path] = None
    seed: Optional[int] = None
    orchestrator: Optional[str] = None
    roster: Optional[Path] = None
    date: Optional[str] = None

    def __post_init__(self):
        self.protocols = tuple(Protocol(p) for p in self.protocols)
        self.ip_versions = tuple(int(v) for v in self.ip_versions)
        if not self.rate_pps > 0:
            raise ConfigError(f"rate_pps must be > 0, got {self.rate_pps}")
        if self.gcd_rate_pps is not None and not self.gcd_rate_pps > 0:
            raise ConfigError(f"gcd_rate_pps must be > 0, got {self.gcd_rate_pps}")
        if self.offset_ms < 0:
            raise ConfigError("offset_ms must be >= 0")
        if self.backend not in ("sim", "remote"):
            raise ConfigError(f"backend must be 'sim' or 'remote', got {self.backend!r}")
        if self.backend == "sim" and self.world is None:
            raise ConfigError("sim backend needs a world file")
        if self.backend == "remote" and not self.orchestrator:
            raise ConfigError("remote backend needs an orchestrator control address")

    def hitlist_path(self, protocol: Protocol, ip_version: int) -> Optional[Path]:
        for key in (f"{protocol.value}_v{ip_version}", f"v{ip_version}"):
            if key in self.hitlists:
                return self.hitlists[key]
        return None

    @classmethod
    def from_file(cls, path) -> "CensusConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read census config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"census config {path} is not valid YAML: {exc}") from exc
        return cls.from_dict(raw, base=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> "CensusConfig":
        def resolve(p):
            if p is None:
                return None
            p = Path(str(p))
            if str(p).startswith("@data/"):
                return DATA_DIR / str(p)[len("@data/"):]
            return p if p.is_absolute() else base / p

        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown census config keys: {sorted(unknown)}")
        for key in ("output_dir", "feedback_store", "hitlists"):
            if key not in raw:
                raise ConfigError(f"census config is missing {key!r}")
        d = dict(raw)
        d["hitlists"] = {str(k): resolve(v) for k, v in dict(raw["hitlists"]).items()}
        for key in ("output_dir", "feedback_store", "cities", "partial_flags", "world", "roster"):
            if key in d:
                d[key] = resolve(d[key])
        if d.get("workers") is not None:
            d["workers"] = tuple(int(w) for w in d["workers"])
        if d.get("date") is not None:
            d["date"] = str(d["date"])
        try:
            return cls(**d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def measurement_id(date: str, index: int) -> int:
    """Stable per-day measurement ids: YYYYMMDD * 100 + stage index."""
    return int(date.replace("-", "")) * 100 + index


# -- GCD stage ---------------------------------------------------------------

@dataclass
class GcdStageResult:
    inferences: Dict[object, GcdInference]
    targets_per_protocol: Dict[str, int]
    replies: int
    stats: Counter = field(default_factory=Counter)


def run_gcd(backend: MeasurementBackend, targets: Mapping[object, TargetAddress], cities: CityTable, *,
            date: str, first_index: int, rate_pps: float, offset_ms: int, workers: Sequence[int],
            protocols: Sequence[Protocol] = GCD_PROTOCOLS, tcp_dst_port: int = 62222) -> GcdStageResult:
    """Unicast-source latency measurement toward ``targets`` and per-key inference.

    ``targets`` maps a result key (a prefix, or an address in per-address
    sweeps) to the address probed. Samples of all protocols are pooled and
    each VP contributes its minimum RTT.
    """
    for p in protocols:
        if p not in GCD_PROTOCOLS:
            raise ConfigError(f"GCD measurements use ICMP or TCP, not {p.value}")
    roster = backend.roster()
    samples: Dict[object, list] = defaultdict(list)
    by_address: Dict[tuple, object] = {}
    per_proto: Dict[str, int] = {}
    stats: Counter = Counter()
    replies = 0
    index = first_index
    for version in (4, 6):
        keyed = {k: t for k, t in targets.items() if t.ip_version == version}
        if not keyed:
            continue
        for k, t in keyed.items():
            by_address[str(t.address)] = k
        hitlist = [keyed[k] for k in sorted(keyed, key=_sort_key)]
        for proto in protocols:
            spec = MeasurementSpec(measurement_id(date, index), proto, version, SourceMode.UNICAST, rate_pps,
                                   tuple(workers), offset_ms, tcp_dst_port=tcp_dst_port)
            index += 1
            outcome = backend.measure(spec, hitlist)
            per_proto[candidate_key(proto, version)] = len(hitlist)
            replies += len(outcome.replies)
            for r in outcome.replies:
                s = rtt_from_reply(r, roster, stats)
                key = by_address.get(str(r.target.address))
                if s is not None and key is not None:
                    samples[key].append(s)
    inferences = {}
    for key in sorted(targets, key=_sort_key):
        try:
            inferences[key] = infer(_as_prefix(key), samples.get(key, []), cities,
                                    address=str(targets[key].address))
        except InsufficientData:
            stats["insufficient_vps"] += 1
    return GcdStageResult(inferences, per_proto, replies, stats)


def _sort_key(k):
    return k.sort_key() if isinstance(k, Prefix) else (ip(k).version, int(ip(k)))


def _as_prefix(key) -> Prefix:
    if isinstance(key, Prefix):
        return key
    addr = ip(key)
    return Prefix.of(addr, 32 if addr.version == 4 else 128)


# -- daily census ------------------------------------------------------------

@dataclass
class CensusResult:
    date: str
    records: List[CensusRecord]
    candidates: List[Prefix]
    manycast: set
    gcd: set
    stats: dict
    census_path: Optional[Path] = None
    stats_path: Optional[Path] = None
    alerts: list = field(default_factory=list)

    @property
    def published(self) -> set:
        return {r.prefix for r in self.records}


def run_daily_census(config: CensusConfig, backend: MeasurementBackend, cities: CityTable,
                     feedback: FeedbackStore, date: str, *, hitlists: Optional[Dict[tuple, list]] = None,
                     partial_prefixes: Iterable[Prefix] = (), write: bool = True) -> CensusResult:
    """One day of the census; see the module docstring for the stages."""
    roster = backend.roster()
    workers = tuple(config.workers) if config.workers else tuple(sorted(roster))
    hitlists = hitlists if hitlists is not None else load_config_hitlists(config)
    index = 1

    # stage 1: anycast-source measurements
    classifications: Dict[tuple, Dict[Prefix, AnycastClassification]] = {}
    chaos: Dict[Prefix, set] = defaultdict(set)
    results_per_protocol: Dict[str, int] = {}
    representative: Dict[Prefix, TargetAddress] = {}
    for version in config.ip_versions:
        for proto in config.protocols:
            targets = hitlists.get((proto, version))
            if targets is None:
                continue
            for t in targets:
                representative.setdefault(t.prefix, t)
            spec = MeasurementSpec(measurement_id(date, index), proto, version, SourceMode.ANYCAST,
                                   config.rate_pps, workers, config.offset_ms,
                                   dns_probe_domain=config.dns_probe_domain, tcp_dst_port=config.tcp_dst_port)
            index += 1
            outcome = backend.measure(spec, targets)
            results_per_protocol[f"{proto.value}_v{version}"] = len(outcome.replies)
            classifications[(proto, version)] = classify(outcome.replies, spec, [t.prefix for t in targets])
            if proto is Protocol.DNS_CHAOS:
                for r in outcome.replies:
                    if r.chaos_value:
                        chaos[r.target.prefix].add(r.chaos_value)

    # stage 2: candidates plus feedback
    flags: Dict[Prefix, Dict[str, bool]] = defaultdict(dict)
    manycast_sites: Dict[Prefix, int] = defaultdict(int)
    stage_candidates = set()
    candidates_per_protocol: Counter = Counter()
    for (proto, version), cls_map in classifications.items():
        key = candidate_key(proto, version)
        for prefix, c in cls_map.items():
            if c.verdict is Verdict.CANDIDATE:
                flags[prefix][key] = True
                stage_candidates.add(prefix)
                manycast_sites[prefix] = max(manycast_sites[prefix], c.rx_vp_count)
                candidates_per_protocol[f"{proto.value}_v{version}"] += 1
    versions = set(config.ip_versions)
    prior = [p for p in feedback.prefixes() if p.ip_version in versions]
    candidates = candidate_set([c for m in classifications.values() for c in m.values()], prior)

    # stage 3: GCD toward candidates only
    gcd_targets = {}
    for prefix in candidates:
        if prefix in representative:
            gcd_targets[prefix] = representative[prefix]
        else:
            gcd_targets[prefix] = feedback.target(prefix)
    gcd = run_gcd(backend, gcd_targets, cities, date=date, first_index=index,
                  rate_pps=config.gcd_rate_pps or config.rate_pps, offset_ms=config.offset_ms, workers=workers,
                  tcp_dst_port=config.tcp_dst_port)

    # stage 4: merge
    confirmed = {p for p, inf in gcd.inferences.items() if inf.is_anycast}
    manycast = stage_candidates - confirmed
    partial = set(partial_prefixes)
    records = []
    for prefix in sorted(manycast | confirmed):
        inf = gcd.inferences.get(prefix)
        geos = [(c.name, c.lat, c.lon) for _, c in inf.sites if c is not None] if inf and inf.is_anycast else []
        records.append(CensusRecord(
            date=date, prefix=prefix, candidates=dict(flags.get(prefix, {})),
            manycast_confirmed=prefix in manycast, gcd_confirmed=prefix in confirmed,
            manycast_site_count=manycast_sites.get(prefix, 0),
            gcd_site_count=len(inf.sites) if inf and inf.is_anycast else 0,
            geolocations=geos, vp_count=inf.vp_count_used if inf else 0,
            partial_anycast=prefix in partial,
            chaos_values=sorted(chaos[prefix]) if prefix in chaos else None,
        ))

    stats = {
        "date": date,
        "version": __version__,
        "vp_roster": roster_hash(roster),
        "vps": len(workers),
        "hitlist_sizes": {f"{p.value}_v{v}": len(t) for (p, v), t in sorted(hitlists.items(), key=lambda kv: (kv[0][1], kv[0][0].value))},
        "results": results_per_protocol,
        "candidates": {k: candidates_per_protocol.get(k, 0) for k in results_per_protocol},
        "candidate_set": len(candidates),
        "feedback_added": len(set(prior) - stage_candidates),
        "gcd_targets": gcd.targets_per_protocol,
        "gcd_replies": gcd.replies,
        "gcd_confirmed": len(confirmed),
        "manycast_only": len(manycast),
        "published": len(records),
        "gcd_insufficient_vps": gcd.stats.get("insufficient_vps", 0),
    }
    result = CensusResult(date, records, candidates, manycast, confirmed, stats)

    # stage 5: feedback
    for prefix in sorted(confirmed):
        feedback.confirm(prefix, date, Provenance.DAILY, str(gcd_targets[prefix].address))

    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        history = load_stats_history(out, before=date, window=config.baseline_window)
        if history:
            result.alerts = compare_to_baseline(baseline_metrics(stats), [baseline_metrics(h) for h in history],
                                                config.baseline_threshold)
        stats["alerts"] = [a.to_dict() for a in result.alerts]
        census_path = out / f"census-{date}.jsonl"
        stats_path = out / f"census-{date}.stats.json"
        write_census(census_path.with_name(census_path.name + ".partial"), date, roster, records)
        with open(stats_path.with_name(stats_path.name + ".partial"), "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=1, sort_keys=True)
            fh.write("\n")
        feedback.save(config.feedback_store)
        os.replace(census_path.with_name(census_path.name + ".partial"), census_path)
        os.replace(stats_path.with_name(stats_path.name + ".partial"), stats_path)
        result.census_path, result.stats_path = census_path, stats_path
        for alert in result.alerts:
            logger.warning("baseline alert: %s", alert.to_dict())
    return result


def load_config_hitlists(config: CensusConfig) -> Dict[tuple, list]:
    out = {}
    for version in config.ip_versions:
        for proto in config.protocols:
            path = config.hitlist_path(proto, version)
            if path is None:
                continue
            try:
                with open(path, encoding="utf-8") as fh:
                    targets = load_hitlist(fh.readlines())
            except OSError as exc:
                raise ConfigError(f"cannot read hitlist {path}: {exc}") from exc
            out[(proto, version)] = [t for t in targets if t.ip_version == version]
    if not out:
        raise ConfigError("no hitlist configured for any protocol / IP version")
    return out


def load_census_cities(config: CensusConfig) -> CityTable:
    path = config.cities or DATA_DIR / "cities500.tsv"
    try:
        return load_cities(path)
    except OSError as exc:
        raise ConfigError(f"cannot read city table {path}: {exc}") from exc


# -- partial anycast ---------------------------------------------------------

def flag_partial_anycast(per_address_gcd: Mapping, prefixes: Iterable[Prefix]) -> set:
    """Prefixes holding at least one anycast and one unicast responsive address.

    Unresponsive addresses are simply absent from ``per_address_gcd``.
    """
    verdicts = [(ip(a), bool(v)) for a, v in per_address_gcd.items()]
    out = set()
    for prefix in prefixes:
        seen = {v for a, v in verdicts if prefix.contains(a)}
        if seen == {True, False}:
            out.add(prefix)
    return out


def write_partial_flags(path, prefixes: Iterable[Prefix]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in sorted(prefixes):
            fh.write(f"{p}\n")


def read_partial_flags(path) -> set:
    try:
        with open(path, encoding="utf-8") as fh:
            return {Prefix.parse(l.strip()) for l in fh if l.strip() and not l.startswith("#")}
    except OSError as exc:
        raise ConfigError(f"cannot read partial flags {path}: {exc}") from exc


# -- sweep -------------------------------------------------------------------

@dataclass
class SweepResult:
    inferences: Dict[object, GcdInference]
    confirmed: list
    partial: set
    stats: dict


def run_sweep(backend: MeasurementBackend, targets: Sequence[TargetAddress], cities: CityTable, *,
              date: str, rate_pps: float, offset_ms: int = 1000, workers: Optional[Sequence[int]] = None,
              per_address: bool = False, feedback: Optional[FeedbackStore] = None,
              prefix_length: Optional[Mapping[int, int]] = None) -> SweepResult:
    """Full-hitlist GCD sweep, the same code path as the daily GCD stage.

    In per-address mode every address is inferred on its own and prefixes
    mixing anycast and unicast addresses are flagged as partial anycast.
    Prefix-level confirmations refresh ``feedback`` with large-scale provenance.
    """
    workers = tuple(workers) if workers else tuple(sorted(backend.roster()))
    if per_address:
        keyed = {str(t.address): t for t in targets}
    else:
        keyed = {}
        for t in targets:
            keyed.setdefault(t.prefix, t)
    gcd = run_gcd(backend, keyed, cities, date=date, first_index=90, rate_pps=rate_pps,
                  offset_ms=offset_ms, workers=workers)
    partial: set = set()
    confirmed: Dict[Prefix, str] = {}
    if per_address:
        verdicts = {k: inf.is_anycast for k, inf in gcd.inferences.items()}
        partial = flag_partial_anycast(verdicts, sorted({t.prefix for t in targets}))
        for k in sorted((k for k, v in verdicts.items() if v), key=_sort_key):
            confirmed.setdefault(keyed[k].prefix, k)
    else:
        confirmed = {k: str(keyed[k].address) for k, inf in gcd.inferences.items() if inf.is_anycast}
    confirmed_prefixes = sorted(confirmed)
    if feedback is not None:
        for prefix in confirmed_prefixes:
            feedback.confirm(prefix, date, Provenance.LARGE_SCALE, confirmed[prefix])
    stats = {"date": date, "targets": len(keyed), "gcd_targets": gcd.targets_per_protocol,
             "confirmed": len(confirmed_prefixes), "partial": len(partial),
             "insufficient_vps": gcd.stats.get("insufficient_vps", 0)}
    return SweepResult(gcd.inferences, confirmed_prefixes, partial, stats)


# -- baseline monitoring -----------------------------------------------------

class AlertKind(str, Enum):
    ZERO_RESULTS = "ZeroResults"
    VP_DROP = "VpDrop"
    DEVIATION = "Deviation"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    metric: str
    today: float
    median: float

    @property
    def deviation(self) -> Optional[float]:
        return abs(self.today - self.median) / self.median if self.median else None

    def to_dict(self) -> dict:
        dev = self.deviation
        return {"kind": self.kind.value, "metric": self.metric, "today": self.today,
                "median": self.median, "deviation": round(dev, 4) if dev is not None else None}


def baseline_metrics(stats: Mapping) -> Dict[str, float]:
    """Flatten census stats into the monitored counters."""
    out: Dict[str, float] = {"gcd_confirmed": stats.get("gcd_confirmed", 0), "vps": stats.get("vps", 0)}
    for k, v in stats.get("candidates", {}).items():
        out[f"candidates.{k}"] = v
    for k, v in stats.get("results", {}).items():
        out[f"results.{k}"] = v
    return out


def compare_to_baseline(today: Mapping[str, float], history: Sequence[Mapping[str, float]],
                        threshold: float = BASELINE_THRESHOLD, window: int = BASELINE_WINDOW) -> List[Alert]:
    """Alerts for counters that moved more than ``threshold`` off the trailing median.

    A per-protocol counter that drops to zero from a non-zero median is a
    ZeroResults alert (typically a protocol-wide outage); a VP count change is
    VpDrop; anything else past the threshold is Deviation.
    """
    if not history:
        raise InsufficientData("baseline comparison needs at least one prior census")
    recent = list(history)[-window:]
    alerts = []
    for metric in sorted(today):
        values = [h[metric] for h in recent if metric in h]
        if not values:
            continue
        median = statistics.median(values)
        value = today[metric]
        if value == 0 and median > 0 and metric.startswith(("candidates.", "results.")):
            alerts.append(Alert(AlertKind.ZERO_RESULTS, metric, value, median))
        elif median > 0 and abs(value - median) / median > threshold:
            kind = AlertKind.VP_DROP if metric == "vps" else AlertKind.DEVIATION
            alerts.append(Alert(kind, metric, value, median))
    return alerts


def load_stats_history(out_dir: Path, before: str, window: int = BASELINE_WINDOW) -> List[dict]:
    """Stats of the last ``window`` censuses dated strictly before ``before``."""
    found = []
    for p in Path(out_dir).glob("census-*.stats.json"):
        date = p.name[len("census-"):-len(".stats.json")]
        if date < before:
            found.append((date, p))
    out = []
    for _, p in sorted(found)[-window:]:
        with open(p, encoding="utf-8") as fh:
            out.append(json.load(fh))
    return out


def today_iso() -> str:
    return _dt.date.today().isoformat()


def parse_date(text: str) -> str:
    try:
        return _dt.date.fromisoformat(str(text)).isoformat()
    except ValueError:
        raise ConfigError(f"date must be YYYY-MM-DD, got {text!r}") from None


__all__ = [
    "Alert", "AlertKind", "CensusConfig", "CensusRecord", "CensusResult", "FeedbackStore", "MeasurementBackend",
    "MeasurementOutcome", "Provenance", "SimBackend", "baseline_metrics", "compare_to_baseline",
    "flag_partial_anycast", "read_census", "run_daily_census", "run_gcd", "run_sweep",
]
