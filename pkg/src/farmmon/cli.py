"""Command line entrypoint.

Subcommands:
    run       poll the configured hosts and serve status over HTTP
    check     validate a config file and report diagnostics
    rrd-dump  print the contents of an archive file
    simfarm   run a farm of simulated agents and emit a matching config

Exit codes: 0 success, 1 configuration problem, 2 bind failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading

from . import agentsim
from .collector import Collector, DEFAULT_RETRIES, DEFAULT_TIMEOUT
from .config import ConfigError, HostConfig, check_config, load_config, serialize_config
from .httpd import DEFAULT_PROCESSOR, StatusServer
from .rrd import ArchiveSpec, CorruptFile, Rrd, RrdSpec, dump_text

log = logging.getLogger("farmmon.cli")

FLUSH_INTERVAL = 30.0


def rrd_spec_for(host: HostConfig) -> RrdSpec:
    return RrdSpec(
        step=host.polldelay,
        variables=tuple(m.id for m in host.mibs),
        archives=tuple(ArchiveSpec(cf=r.cf, xff=r.xff, granularity=r.granularity,
                                   expire=r.expire) for r in host.rras),
    )


def rrd_path_for(rrd_dir: str, host_name: str) -> str:
    return os.path.join(rrd_dir, host_name + ".rrd")


def _setup_logging(verbosity: int, logfile: str | None) -> None:
    # config verbosity runs 0 (everything) to 3 (nothing)
    levels = {0: logging.DEBUG, 1: logging.INFO, 2: logging.WARNING,
              3: logging.CRITICAL + 10}
    kwargs = {"level": levels.get(verbosity, logging.WARNING),
              "format": "%(asctime)s %(name)s %(levelname)s %(message)s",
              "force": True}
    if logfile:
        kwargs["filename"] = logfile
    else:
        kwargs["stream"] = sys.stderr
    logging.basicConfig(**kwargs)


def _install_stop_handlers(stop: threading.Event) -> None:
    def handler(signum, frame):
        stop.set()
    for sig in (signal.SIGTERM, signal.SIGINT):
        try:
            signal.signal(sig, handler)
        except ValueError:
            pass   # not the main thread (tests); rely on the caller's event


def _open_archives(cfg) -> dict:
    os.makedirs(cfg.rrd_dir, exist_ok=True)
    rrds = {}
    for host in cfg.hosts:
        spec = rrd_spec_for(host)
        path = rrd_path_for(cfg.rrd_dir, host.name)
        if os.path.exists(path):
            rrd = Rrd.load(path)
            if rrd.spec != spec:
                raise ConfigError(
                    f"archive {path} was built from a different spec; "
                    "remove it or restore the matching config")
        else:
            rrd = Rrd(spec)
            rrd.save(path)
        rrds[host.name] = rrd
    return rrds


def _save_archives(cfg, rrds: dict) -> None:
    for name, rrd in rrds.items():
        try:
            rrd.save(rrd_path_for(cfg.rrd_dir, name))
        except OSError as exc:
            log.error("cannot save archive for %s: %s", name, exc)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    _setup_logging(cfg.verbosity, cfg.pmc_logfile)
    try:
        rrds = _open_archives(cfg)
    except (ConfigError, CorruptFile, OSError) as exc:
        print(f"archive error: {exc}", file=sys.stderr)
        return 1

    from .status import StatusView
    view = StatusView(cfg)
    try:
        server = StatusServer(cfg, view, rrds, processor_cmd=args.xslt_processor)
    except OSError as exc:
        print(f"cannot bind http port {cfg.http_port}: {exc}", file=sys.stderr)
        return 2

    stop = threading.Event()
    _install_stop_handlers(stop)
    collector = Collector(cfg, view, rrds, timeout=args.timeout, retries=args.retries)
    poller = threading.Thread(target=collector.run, args=(stop,),
                              name="collector", daemon=True)
    server.start()
    poller.start()
    log.info("monitoring %d hosts, http on port %d", len(cfg.hosts), server.port)
    try:
        while not stop.wait(args.flush_interval):
            _save_archives(cfg, rrds)
    finally:
        stop.set()
        poller.join(timeout=args.timeout * (args.retries + 1) + 5)
        _save_archives(cfg, rrds)
        server.stop()
    log.info("shut down cleanly")
    return 0


def cmd_check(args) -> int:
    try:
        diagnostics = check_config(args.config)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    for diag in diagnostics:
        print(diag, file=sys.stderr)
    return 0 if not diagnostics else 1


def cmd_rrd_dump(args) -> int:
    try:
        rrd = Rrd.load(args.file)
    except (CorruptFile, OSError) as exc:
        print(f"cannot read archive: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(dump_text(rrd))
    return 0


def cmd_simfarm(args) -> int:
    _setup_logging(args.verbosity, None)
    template = agentsim.AgentScript(
        community=args.community,
        variables=agentsim.default_variable_set(),
    )
    farm = agentsim.spawn_farm(args.count, template, args.seed)
    cfg = farm.monitor_config(polldelay=args.polldelay)
    text = serialize_config(cfg)
    if args.config_out:
        with open(args.config_out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"started {len(farm)} agents; config written to {args.config_out}",
              file=sys.stderr)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
        print(f"started {len(farm)} agents", file=sys.stderr)
    stop = threading.Event()
    _install_stop_handlers(stop)
    try:
        stop.wait()
    finally:
        farm.stop()
    return 0


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="farmmon",
        description="SNMP cluster monitor with round-robin archives and a web view")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="poll hosts and serve status pages")
    run.add_argument("config", help="monitor config file")
    run.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT,
                     help="seconds to wait for one SNMP response")
    run.add_argument("--retries", type=int, default=DEFAULT_RETRIES,
                     help="retransmits after the first request")
    run.add_argument("--xslt-processor", default=DEFAULT_PROCESSOR,
                     help="transform command; {} marks the stylesheet path")
    run.add_argument("--flush-interval", type=float, default=FLUSH_INTERVAL,
                     help="seconds between periodic archive saves")
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("check", help="validate a config file")
    chk.add_argument("config", help="monitor config file")
    chk.set_defaults(func=cmd_check)

    dump = sub.add_parser("rrd-dump", help="print an archive file as text")
    dump.add_argument("file", help="archive file")
    dump.set_defaults(func=cmd_rrd_dump)

    sim = sub.add_parser("simfarm", help="run simulated agents")
    sim.add_argument("--count", type=int, default=200, help="number of agents")
    sim.add_argument("--seed", type=int, default=1, help="generator seed")
    sim.add_argument("--config-out", help="write the generated config here")
    sim.add_argument("--community", default="public")
    sim.add_argument("--polldelay", type=float, default=30.0,
                     help="polldelay for the generated config")
    sim.add_argument("--verbosity", type=int, default=2, choices=range(4))
    sim.set_defaults(func=cmd_simfarm)

    args = parser.parse_args(argv)
    if getattr(args, "timeout", 1.0) <= 0:
        parser.error("--timeout must be positive")
    if getattr(args, "retries", 0) < 0:
        parser.error("--retries must be >= 0")
    if getattr(args, "count", 1) < 1:
        parser.error("--count must be >= 1")
    return args


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 0
