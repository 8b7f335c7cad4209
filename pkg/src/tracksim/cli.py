"""Command-line harness: run batches, aggregate metrics, emit plot tables.

Exit codes: 0 on success, 2 on configuration errors, 3 on runtime faults.
The TRACKSIM_BASE_PORT environment variable overrides the configured base
port, handy for running parallel batches.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import load_curriculum, parse_config, parse_config_file
from .constants import BASE_PORT_ENV_VAR
from .errors import ConfigError, SimulationFault, StartupError
from .harness import (
    PLOT_KINDS,
    compute_metrics,
    emit_plot_data,
    records_from_traces,
    run_batch,
)
from .scripted import SCRIPTED_AGENTS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracksim",
                                     description="multi-agent track-driving simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a batch of seeded episodes")
    run.add_argument("--config", required=True, help="simulation config YAML")
    run.add_argument("--comms", default=None, help="communications spec YAML")
    run.add_argument("--curriculum", default=None, help="curriculum schedule YAML")
    run.add_argument("--episodes", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--agent", default="center_follow",
                     choices=sorted(SCRIPTED_AGENTS) + ["external"],
                     help="scripted policy for the learning agents, or 'external' "
                          "to serve UDP clients")
    run.add_argument("--out-dir", default=None, help="trace/summary output directory")
    run.add_argument("--realtime", action="store_true",
                     help="throttle simulation to the wall clock")
    run.add_argument("--client-timeout", type=float, default=30.0,
                     help="handshake timeout for external agents, seconds")

    metrics = sub.add_parser("metrics", help="recompute summary metrics from traces")
    metrics.add_argument("traces", nargs="+", help="episode trace files (.jsonl)")

    plot = sub.add_parser("plot", help="emit a plot-ready table from traces")
    plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    plot.add_argument("--out", required=True, help="output CSV path")
    plot.add_argument("traces", nargs="+", help="episode trace files (.jsonl)")
    return parser


def _cmd_run(args) -> int:
    base_port_env = os.environ.get(BASE_PORT_ENV_VAR)
    config = parse_config_file(args.config, args.comms)
    if base_port_env is not None:
        doc = config.to_dict()
        doc["server"]["base_port"] = int(base_port_env)
        comm_source = Path(args.comms).read_text() if args.comms else None
        config = parse_config(doc, comm_source)
    schedule = load_curriculum(Path(args.curriculum).read_text()) \
        if args.curriculum else None
    summary = run_batch(config, episodes=args.episodes, seed=args.seed,
                        agent=args.agent, out_dir=args.out_dir,
                        schedule=schedule, client_timeout=args.client_timeout,
                        realtime=args.realtime)
    summary.pop("records", None)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_metrics(args) -> int:
    records = records_from_traces(Path(p) for p in args.traces)
    print(json.dumps(compute_metrics(records), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .harness import EpisodeRecord, load_trace
    from .server import StepEvent

    records = []
    for path in sorted(Path(p) for p in args.traces):
        header, rows = load_trace(path)
        events = [StepEvent(step=r["step"], agent=r["agent"], x=r["x"], y=r["y"],
                            heading=r["heading"], speed_kmh=r["speed_kmh"],
                            track_pos=r["track_pos"], dist_raced=r["dist_raced"],
                            action=tuple(r["action"]), reward=r["reward"],
                            done=r["done_reason"] != "none",
                            done_reason=r["done_reason"])
                  for r in rows]
        records.append(EpisodeRecord(
            episode=header["episode"], seed=header["seed"], track=header["track"],
            track_length=header["track_length"], events=events))
    emit_plot_data(records, args.kind, Path(args.out))
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "metrics":
            return _cmd_metrics(args)
        return _cmd_plot(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationFault, StartupError, OSError) as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
