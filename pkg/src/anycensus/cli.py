"""Command-line entry point.

Exit codes: 0 success, 2 configuration error (bad flags, unreadable or
invalid inputs, unmet preconditions), 3 runtime failure.

Every flag can also be set through an environment variable named
``ANYCENSUS_<FLAG>`` (upper case, dashes as underscores, e.g.
``ANYCENSUS_RATE``). Environment variables take precedence over flags, and
flags over built-in defaults.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .classifier import classify, write_classifications
from .domain import MeasurementSpec, Prefix, ProbeReply, Protocol, SourceMode, VantagePoint, load_hitlist, rtt_from_reply
from .errors import AnycensusError, ConfigError, InsufficientData

logger = logging.getLogger("anycensus.cli")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
ENV_PREFIX = "ANYCENSUS_"

ENV_HELP = (
    "Environment: every flag may be given as ANYCENSUS_<FLAG> (e.g. ANYCENSUS_RATE=500); "
    "environment values override command-line flags, which override defaults."
)


# -- argument types ----------------------------------------------------------

def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def worker_id(text: str) -> int:
    value = non_negative_int(text)
    if not 0 < value <= 0xFFFF:
        raise argparse.ArgumentTypeError(f"must be in 1..65535, got {text}")
    return value


def worker_list(text: str) -> tuple:
    try:
        return tuple(worker_id(t) for t in text.replace(",", " ").split())
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"bad worker list {text!r}: {exc}") from None


def ip_version(text: str) -> int:
    if text not in ("4", "6"):
        raise argparse.ArgumentTypeError(f"must be 4 or 6, got {text!r}")
    return int(text)


def iso_date(text: str) -> str:
    from .pipeline import parse_date

    try:
        return parse_date(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


PROTOCOLS = [p.value for p in Protocol]
MODES = [m.value for m in SourceMode]


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="anycensus", description="Distributed anycast census.", epilog=ENV_HELP)
    p.add_argument("--version", action="version", version=f"anycensus {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="logging verbosity (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("orchestrator", help="run the measurement controller", epilog=ENV_HELP)
    o.add_argument("--listen", default="0.0.0.0:7000", help="host:port for worker sessions (default 0.0.0.0:7000)")
    o.add_argument("--control", default="127.0.0.1:7001", help="host:port for CLI control clients (default 127.0.0.1:7001)")
    o.add_argument("--token", required=True, help="shared secret workers must present")

    w = sub.add_parser("worker", help="run a vantage-point agent", epilog=ENV_HELP)
    w.add_argument("--orchestrator", required=True, help="orchestrator worker address, host:port")
    w.add_argument("--worker-id", type=worker_id, required=True, help="this worker's id (1..65535; TCP needs < 64)")
    w.add_argument("--token", required=True, help="shared secret for the orchestrator")
    w.add_argument("--transport", choices=["raw", "sim"], default="raw", help="probe transport (default raw)")
    w.add_argument("--sim-socket", help="unix socket of `anycensus sim-server` (with --transport sim)")
    w.add_argument("--vp-file", help="JSON roster (list of VP objects); this worker's entry supplies location and addresses")
    w.add_argument("--name", help="VP name (without --vp-file)")
    w.add_argument("--lat", type=float, help="VP latitude in degrees (without --vp-file)")
    w.add_argument("--lon", type=float, help="VP longitude in degrees (without --vp-file)")
    w.add_argument("--unicast-address", help="VP unicast source address (without --vp-file)")
    w.add_argument("--anycast-address", help="shared anycast source address (without --vp-file)")
    w.add_argument("--operator-contact", help="operator contact string; required for raw probing")
    w.add_argument("--opt-out-url", help="URL explaining how to opt out; required for raw probing")

    m = sub.add_parser("measure", help="run one measurement and write ProbeReply rows", epilog=ENV_HELP)
    m.add_argument("--protocol", choices=PROTOCOLS, default="icmp", help="probe protocol (default icmp)")
    m.add_argument("--ip-version", type=ip_version, default=4, help="4 or 6 (default 4)")
    m.add_argument("--rate", type=positive_float, default=1000.0, help="probing rate in packets/s (default 1000)")
    m.add_argument("--offset-ms", type=non_negative_int, default=1000, help="inter-worker offset in ms (default 1000)")
    m.add_argument("--mode", choices=MODES, default="anycast", help="source address mode (default anycast)")
    m.add_argument("--hitlist", required=True, help="hitlist file: one address, or 'prefix address', per line")
    m.add_argument("--out", required=True, help="output JSONL file of ProbeReply rows")
    m.add_argument("--summary-out", help="optional JSON file for the run summary")
    m.add_argument("--workers", type=worker_list, help="comma-separated worker ids (default: all in the world)")
    m.add_argument("--measurement-id", type=non_negative_int, default=1, help="measurement id (default 1)")
    m.add_argument("--dns-domain", default="probe.census.example", help="probe domain for dns_a (default probe.census.example)")
    m.add_argument("--tcp-port", type=worker_id, default=62222, help="TCP destination port (default 62222)")
    m.add_argument("--sim-world", help="run against this simulated world file instead of live workers")
    m.add_argument("--seed", type=int, help="override the simulated world's seed")
    m.add_argument("--orchestrator", help="control address of a live orchestrator, host:port")

    c = sub.add_parser("classify", help="classify prefixes from ProbeReply rows", epilog=ENV_HELP)
    c.add_argument("--in", dest="input", required=True, help="ProbeReply JSONL from `measure`")
    c.add_argument("--out", required=True, help="output JSONL of classifications")
    c.add_argument("--hitlist", help="hitlist; gives every listed prefix a verdict, unresponsive ones included")

    g = sub.add_parser("analyze-gcd", help="latency-based detection, enumeration and geolocation", epilog=ENV_HELP)
    g.add_argument("--in", dest="input", required=True,
                   help="'prefix vp_id rtt_us' lines, or unicast-mode ProbeReply JSONL (needs --roster)")
    g.add_argument("--cities", help="city table (default: bundled 500-city table)")
    g.add_argument("--out", required=True, help="output JSONL of per-prefix inferences")
    g.add_argument("--roster", required=True, help="JSON list of VP objects for the ids in the input")

    cen = sub.add_parser("census", help="daily census pipeline", epilog=ENV_HELP)
    csub = cen.add_subparsers(dest="census_command", required=True, parser_class=_Parser)
    run = csub.add_parser("run", help="run one day of the census", epilog=ENV_HELP)
    run.add_argument("--config", required=True, help="census YAML config")
    run.add_argument("--date", type=iso_date, help="census date YYYY-MM-DD (default: config, else today)")
    run.add_argument("--seed", type=int, help="override the simulated world's seed")
    run.add_argument("--output-dir", help="override the config's output directory")
    run.add_argument("--feedback-store", help="override the config's feedback-store path")

    s = sub.add_parser("sweep", help="GCD sweep over the full hitlist", epilog=ENV_HELP)
    s.add_argument("--full", action="store_true", required=True, help="probe every hitlist entry, not just candidates")
    s.add_argument("--config", required=True, help="census YAML config (hitlists, backend, feedback store)")
    s.add_argument("--per-address", action="store_true", help="infer each address separately and flag partial anycast")
    s.add_argument("--date", type=iso_date, help="sweep date YYYY-MM-DD (default: config, else today)")
    s.add_argument("--out", help="output JSONL of inferences (default: <output_dir>/sweep-<date>.jsonl)")
    s.add_argument("--output-dir", help="override the config's output directory")
    s.add_argument("--feedback-store", help="override the config's feedback-store path")

    sim = sub.add_parser("simulate", help="run a scenario in the simulator and dump traces", epilog=ENV_HELP)
    sim.add_argument("--world", required=True, help="world YAML")
    sim.add_argument("--seed", type=int, help="override the world's seed")
    sim.add_argument("--out-dir", default="sim-out", help="directory for trace, replies and ground truth (default sim-out)")
    sim.add_argument("--protocol", choices=PROTOCOLS, default="icmp", help="probe protocol (default icmp)")
    sim.add_argument("--rate", type=positive_float, default=1000.0, help="probing rate in packets/s (default 1000)")
    sim.add_argument("--offset-ms", type=non_negative_int, default=1000, help="inter-worker offset in ms (default 1000)")
    sim.add_argument("--mode", choices=MODES, default="anycast", help="source address mode (default anycast)")

    ss = sub.add_parser("sim-server", help="serve a simulated world to `worker --transport sim`", epilog=ENV_HELP)
    ss.add_argument("--world", required=True, help="world YAML")
    ss.add_argument("--seed", type=int, help="override the world's seed")
    ss.add_argument("--socket", required=True, help="unix socket path to listen on")
    ss.add_argument("--roster-out", help="write the world's VP roster JSON here (for --vp-file)")
    return p


def _actions(parser: argparse.ArgumentParser, chain: Sequence[str] = ()) -> Dict[tuple, argparse.ArgumentParser]:
    out = {tuple(chain): parser}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, child in action.choices.items():
                out.update(_actions(child, (*chain, name)))
    return out


def subcommand_parsers() -> Dict[tuple, argparse.ArgumentParser]:
    """Every (sub)parser keyed by its command path, for documentation checks."""
    return _actions(build_parser())


def apply_env(args: argparse.Namespace, parser: argparse.ArgumentParser, environ=os.environ) -> None:
    """Environment variables override parsed flags."""
    path = [args.command] + ([args.census_command] if getattr(args, "census_command", None) else [])
    target = subcommand_parsers()[tuple(path)]
    for action in target._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        flag = max(action.option_strings, key=len)
        env = ENV_PREFIX + flag.lstrip("-").upper().replace("-", "_")
        if env not in environ:
            continue
        raw = environ[env]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except argparse.ArgumentTypeError as exc:
                parser.exit(EXIT_CONFIG, f"anycensus: error: {env} (for {flag}): {exc}\n")
            if action.choices is not None and value not in action.choices:
                parser.exit(EXIT_CONFIG, f"anycensus: error: {env} (for {flag}): invalid choice {raw!r}\n")
        setattr(args, action.dest, value)


# -- helpers -----------------------------------------------------------------

def _read_lines(path) -> List[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _load_world(path, seed):
    from .netsim import SimWorld

    try:
        return SimWorld.load(path, seed)
    except OSError as exc:
        raise ConfigError(f"cannot read world file {path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid world file {path}: {exc}") from exc


def load_roster(path) -> Dict[int, VantagePoint]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read roster {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"roster {path} is not JSON: {exc}") from exc
    try:
        return {vp.worker_id: vp for vp in (VantagePoint.from_dict(d) for d in data)}
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid roster {path}: {exc}") from exc


def _write_jsonl(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".partial")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def _read_replies(path) -> List[ProbeReply]:
    out = []
    for n, line in enumerate(_read_lines(path), 1):
        if line.strip() and not line.startswith("#"):
            try:
                out.append(ProbeReply.from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{n}: not a ProbeReply row: {exc}") from exc
    return out


# -- subcommands -------------------------------------------------------------

def cmd_orchestrator(args) -> int:
    from .runtime import serve_orchestrator

    logging.getLogger("anycensus").setLevel(min(logging.INFO, logging.getLogger().level))
    try:
        asyncio.run(serve_orchestrator(args.listen, args.control, args.token))
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _worker_vp(args) -> VantagePoint:
    if args.vp_file:
        roster = load_roster(args.vp_file)
        if args.worker_id not in roster:
            raise ConfigError(f"--vp-file has no entry for worker {args.worker_id}")
        return roster[args.worker_id]
    missing = [f for f in ("name", "lat", "lon", "unicast_address", "anycast_address") if getattr(args, f) is None]
    if missing:
        raise ConfigError("without --vp-file, need " + ", ".join("--" + f.replace("_", "-") for f in missing))
    return VantagePoint(args.worker_id, args.name, args.lat, args.lon, args.unicast_address, args.anycast_address)


def cmd_worker(args) -> int:
    from .runtime import SimSocketTransport, run_worker

    vp = _worker_vp(args)
    if args.transport == "raw":
        if not args.operator_contact or not args.opt_out_url:
            raise ConfigError("raw probing needs --operator-contact and --opt-out-url "
                              "(so that probed networks can reach you and opt out)")
        from .worker import RawNetTransport

        try:
            transport = RawNetTransport(lambda: time.time_ns() // 1000)
        except PermissionError:
            print("anycensus: error: raw sockets need root or CAP_NET_RAW; refusing to start", file=sys.stderr)
            return EXIT_RUNTIME

        async def main():
            await run_worker(args.orchestrator, vp, args.token, transport)
    else:
        if not args.sim_socket:
            raise ConfigError("--transport sim needs --sim-socket")

        async def main():
            transport = SimSocketTransport(vp.worker_id)
            await transport.open(args.sim_socket)
            await run_worker(args.orchestrator, vp, args.token, transport)

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_measure(args) -> int:
    targets = load_hitlist(_read_lines(args.hitlist))
    targets = [t for t in targets if t.ip_version == args.ip_version]
    if not targets:
        raise ConfigError(f"--hitlist {args.hitlist} has no IPv{args.ip_version} targets")
    if bool(args.sim_world) == bool(args.orchestrator):
        raise ConfigError("give exactly one of --sim-world or --orchestrator")
    if args.sim_world:
        from .netsim import SimDeployment

        world = _load_world(args.sim_world, args.seed)
        workers = args.workers or tuple(sorted(world.vp_by_id))
        unknown = [w for w in workers if w not in world.vp_by_id]
        if unknown:
            raise ConfigError(f"--workers {unknown} are not in the simulated world")
        spec = _spec(args, workers)
        dep = SimDeployment(world, record_trace=False)
        dep.start(workers)
        result = dep.measure(spec, targets)
        replies, summary = result.replies, result.summary
    else:
        from .runtime import submit

        if not args.workers:
            raise ConfigError("--workers is required with --orchestrator")
        spec = _spec(args, args.workers)
        replies, summary = submit(args.orchestrator, spec, targets)
    _write_jsonl(args.out, (r.to_dict() for r in sorted(replies, key=_reply_order)))
    summary = dict(summary)
    summary["accounting"] = reply_accounting(targets, spec.workers, replies)
    if args.summary_out:
        with open(args.summary_out, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(json.dumps(summary["accounting"], sort_keys=True))
    return EXIT_OK


def _spec(args, workers) -> MeasurementSpec:
    return MeasurementSpec(args.measurement_id, Protocol(args.protocol), args.ip_version, SourceMode(args.mode),
                           args.rate, tuple(workers), args.offset_ms, dns_probe_domain=args.dns_domain,
                           tcp_dst_port=args.tcp_port)


def _reply_order(r: ProbeReply):
    return (r.rx_time_us, r.target.address.version, int(r.target.address), r.tx_worker, r.rx_worker)


def reply_accounting(targets, workers, replies) -> dict:
    """Per (target, sending worker): replied or timed out."""
    sent = {(str(t.address), w) for t in targets for w in workers}
    answered = {(str(r.target.address), r.tx_worker) for r in replies} & sent
    return {"probes": len(sent), "replied": len(answered), "timed_out": len(sent) - len(answered)}


def cmd_classify(args) -> int:
    replies = _read_replies(args.input)
    prefixes = None
    if args.hitlist:
        prefixes = sorted({t.prefix for t in load_hitlist(_read_lines(args.hitlist))})
    result = classify(replies, prefixes=prefixes)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        write_classifications(fh, result)
    counts: Dict[str, int] = {}
    for c in result.values():
        counts[c.verdict.value] = counts.get(c.verdict.value, 0) + 1
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def cmd_analyze_gcd(args) -> int:
    from .gcd import infer, load_cities, read_samples
    from .pipeline import DATA_DIR

    roster = load_roster(args.roster)
    lines = _read_lines(args.input)
    first = next((l for l in lines if l.strip() and not l.startswith("#")), "")
    if first.lstrip().startswith("{"):
        samples: Dict[Prefix, list] = {}
        for r in _read_replies(args.input):
            s = rtt_from_reply(r, roster)
            if s is not None:
                samples.setdefault(r.target.prefix, []).append(s)
    else:
        samples = read_samples(lines, roster)
    cities_path = args.cities or DATA_DIR / "cities500.tsv"
    try:
        cities = load_cities(cities_path)
    except OSError as exc:
        raise ConfigError(f"cannot read --cities {cities_path}: {exc}") from exc
    rows, skipped = [], 0
    for prefix in sorted(samples):
        try:
            rows.append(infer(prefix, samples[prefix], cities).to_dict())
        except InsufficientData:
            skipped += 1
    _write_jsonl(args.out, rows)
    print(json.dumps({"prefixes": len(rows), "anycast": sum(r["is_anycast"] for r in rows),
                      "insufficient_vps": skipped}, sort_keys=True))
    return EXIT_OK


def _backend(config, seed=None):
    if config.backend == "sim":
        from .pipeline import SimBackend

        world = _load_world(config.world, seed if seed is not None else config.seed)
        return SimBackend(world, config.workers)
    from .runtime import RemoteBackend

    if config.roster is None:
        raise ConfigError("remote backend needs a 'roster' file in the census config")
    return RemoteBackend(config.orchestrator, load_roster(config.roster))


def _load_config(args):
    from .pipeline import CensusConfig

    config = CensusConfig.from_file(args.config)
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    if args.feedback_store:
        config.feedback_store = Path(args.feedback_store)
    return config


def cmd_census(args) -> int:
    from .pipeline import (
        FeedbackStore, load_census_cities, load_config_hitlists, read_partial_flags, run_daily_census, today_iso,
    )

    config = _load_config(args)
    date = args.date or config.date or today_iso()
    hitlists = load_config_hitlists(config)
    cities = load_census_cities(config)
    feedback = FeedbackStore.load(config.feedback_store)
    partial = read_partial_flags(config.partial_flags) if config.partial_flags else set()
    backend = _backend(config, args.seed)
    result = run_daily_census(config, backend, cities, feedback, date, hitlists=hitlists, partial_prefixes=partial)
    print(json.dumps({"census": str(result.census_path), "published": len(result.records),
                      "gcd_confirmed": len(result.gcd), "manycast_only": len(result.manycast),
                      "alerts": [a.to_dict() for a in result.alerts]}, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .pipeline import (
        FeedbackStore, load_census_cities, load_config_hitlists, run_sweep, today_iso, write_partial_flags,
    )

    config = _load_config(args)
    date = args.date or config.date or today_iso()
    hitlists = load_config_hitlists(config)
    targets = {}
    for (_proto, _v), ts in sorted(hitlists.items(), key=lambda kv: (kv[0][1], kv[0][0].value)):
        for t in ts:
            targets.setdefault(str(t.address), t)
    backend = _backend(config)
    feedback = FeedbackStore.load(config.feedback_store)
    result = run_sweep(backend, list(targets.values()), load_census_cities(config), date=date,
                       rate_pps=config.gcd_rate_pps or config.rate_pps, offset_ms=config.offset_ms,
                       workers=config.workers, per_address=args.per_address, feedback=feedback)
    out_dir = Path(config.output_dir)
    out = Path(args.out) if args.out else out_dir / f"sweep-{date}.jsonl"
    _write_jsonl(out, (inf.to_dict() for _, inf in sorted(result.inferences.items(), key=lambda kv: _key_order(kv[0]))))
    feedback.save(config.feedback_store)
    if args.per_address:
        write_partial_flags(out_dir / f"partial-{date}.txt", result.partial)
    print(json.dumps(result.stats, sort_keys=True))
    return EXIT_OK


def _key_order(k):
    from .pipeline import _sort_key

    return _sort_key(k)


def cmd_simulate(args) -> int:
    from .netsim import simulate

    world = _load_world(args.world, args.seed)
    summary = simulate(world, args.out_dir, protocol=Protocol(args.protocol), rate_pps=args.rate,
                       offset_ms=args.offset_ms, source_mode=SourceMode(args.mode))
    print(json.dumps({"out_dir": str(args.out_dir), "results": summary["results"],
                      "targets": summary["targets"]}, sort_keys=True))
    return EXIT_OK


def cmd_sim_server(args) -> int:
    from .runtime import SimSocketServer

    world = _load_world(args.world, args.seed)
    if args.roster_out:
        with open(args.roster_out, "w", encoding="utf-8") as fh:
            json.dump([vp.to_dict() for vp in world.vps], fh, indent=1, sort_keys=True)

    async def main():
        server = SimSocketServer(world)
        await server.start(args.socket)
        await asyncio.Event().wait()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


COMMANDS: Dict[str, Callable] = {
    "orchestrator": cmd_orchestrator,
    "worker": cmd_worker,
    "measure": cmd_measure,
    "classify": cmd_classify,
    "analyze-gcd": cmd_analyze_gcd,
    "census": cmd_census,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "sim-server": cmd_sim_server,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    apply_env(args, parser)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"anycensus: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AnycensusError, OSError) as exc:
        print(f"anycensus: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
