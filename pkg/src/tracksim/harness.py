"""Batch runner and metrics: seeded episodes, trace files, plot-ready tables.

Each episode writes one line-delimited JSON trace (one record per step per
agent, header line first).  Traces are byte-identical across runs with the
same config, seed and scripted agents.  The batch summary aggregates the
evaluation metrics: mean fraction of lap covered, average speed (total
distance over total driving time, km/h) and lap completion rate.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .config import SimulationConfig
from .constants import KMH_PER_MS, STEP_PERIOD
from .errors import ConfigError
from .scripted import make_scripted
from .server import SimServer, StepEvent
from .track import lap_fraction


@dataclass
class EpisodeRecord:
    """Outcome of one episode plus its per-step trace."""

    episode: int
    seed: int
    track: str
    track_length: float
    steps: int = 0
    distance_m: float = 0.0
    lap_fraction: float = 0.0
    avg_speed_kmh: float = 0.0
    lap_completed: bool = False
    final_rank: int = 1
    damage_total: float = 0.0
    reward_total: float = 0.0
    done_reason: str = "none"
    wall_time_s: float = 0.0
    events: list = field(default_factory=list, repr=False)


def _trace_lines(record: EpisodeRecord) -> Iterable[str]:
    header = {
        "episode": record.episode,
        "seed": record.seed,
        "track": record.track,
        "track_length": record.track_length,
    }
    yield json.dumps({"header": header}, sort_keys=True)
    for ev in record.events:
        yield json.dumps({
            "step": ev.step,
            "agent": ev.agent,
            "x": ev.x,
            "y": ev.y,
            "heading": ev.heading,
            "speed_kmh": ev.speed_kmh,
            "track_pos": ev.track_pos,
            "dist_raced": ev.dist_raced,
            "action": list(ev.action),
            "reward": ev.reward,
            "done_reason": ev.done_reason,
        }, sort_keys=True)


def write_trace(record: EpisodeRecord, path: Path) -> None:
    path.write_text("\n".join(_trace_lines(record)) + "\n")


def run_batch(config: SimulationConfig, episodes: int, seed: int,
              agent: str = "center_follow", agent_params: dict | None = None,
              out_dir: Path | str | None = None,
              schedule=None, extra_policies: dict | None = None,
              client_timeout: float = 30.0, realtime: bool = False) -> dict:
    """Run ``episodes`` seeded episodes with a scripted (or external) agent.

    ``agent`` names a scripted policy applied to every learning agent, or
    "external" to leave them to UDP clients.  Returns the batch summary;
    writes one trace file per episode plus summary.json when out_dir is set.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    summary = {
        "episodes": 0, "mean_lap_fraction": 0.0, "avg_speed_kmh": 0.0,
        "completion_rate": 0.0, "mean_reward": 0.0, "wall_time_s": 0.0,
        "resets": 0,
    }
    if episodes <= 0:
        if out is not None:
            (out / "summary.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True))
        summary["records"] = []
        return summary

    server = SimServer(config, seed=seed, schedule=schedule)
    server.realtime = realtime
    if agent != "external":
        for i in range(config.n_learning):
            params = dict(agent_params or {})
            if agent == "center_follow" and "target_speed_kmh" not in params:
                params["target_speed_kmh"] = config.agents[i].target_speed
            server.attach_policy(i, make_scripted(agent, **params))
    if extra_policies:
        for i, policy in extra_policies.items():
            server.attach_policy(i, policy)
    if agent == "external":
        server.serve_udp()

    records: list[EpisodeRecord] = []
    server.start()
    try:
        if agent == "external":
            print(f"listening base_port={config.server.base_port} "
                  f"traffic={server.setup.n_traffic} "
                  f"learning={config.n_learning}", flush=True)
            server.await_clients(timeout=client_timeout)
        server.dispatch_initial_frames()
        for ep in range(episodes):
            t0 = time.perf_counter()
            events = server.run_episode()
            record = _summarize_episode(server, events, ep, seed)
            record.wall_time_s = time.perf_counter() - t0
            records.append(record)
            if out is not None:
                write_trace(record, out / f"episode_{ep:04d}.jsonl")
            if ep != episodes - 1:
                server.end_episode_and_reset()
    finally:
        server.shutdown()

    summary = compute_metrics(records)
    summary["wall_time_s"] = sum(r.wall_time_s for r in records)
    summary["resets"] = server.world_resets
    if out is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    summary["records"] = records
    return summary


def _summarize_episode(server: SimServer, events: list[StepEvent],
                       episode: int, seed: int) -> EpisodeRecord:
    # outcome of the first learning agent characterizes the episode
    learning = [s for s in server.sessions if s.kind == "learning"]
    lead = learning[0]
    car = server.cars[lead.index]
    steps = server.step_count
    duration = max(steps * STEP_PERIOD, STEP_PERIOD)
    frac = lap_fraction(server.track, car.state.distance_raced)
    return EpisodeRecord(
        episode=episode,
        seed=seed,
        track=server.track.name,
        track_length=server.track.total_length,
        steps=steps,
        distance_m=car.state.distance_raced,
        lap_fraction=frac,
        avg_speed_kmh=car.state.distance_raced / duration * KMH_PER_MS,
        lap_completed=frac >= 1.0,
        final_rank=car.rank,
        damage_total=car.state.damage,
        reward_total=sum(e.reward for e in events if e.agent == lead.name),
        done_reason=lead.done_reason,
        events=events,
    )


def compute_metrics(records: list[EpisodeRecord]) -> dict:
    """Aggregate evaluation metrics over a nonempty batch of records."""
    if not records:
        raise ValueError("compute_metrics needs at least one record")
    n = len(records)
    total_distance = sum(r.distance_m for r in records)
    total_time = sum(r.steps * STEP_PERIOD for r in records)
    return {
        "episodes": n,
        "mean_lap_fraction": sum(r.lap_fraction for r in records) / n,
        "avg_speed_kmh": (total_distance / total_time * KMH_PER_MS) if total_time else 0.0,
        "completion_rate": sum(1 for r in records if r.lap_fraction >= 1.0) / n,
        "mean_reward": sum(r.reward_total for r in records) / n,
    }


def load_trace(path: Path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])["header"]
    return header, [json.loads(line) for line in lines[1:]]


def records_from_traces(paths: Iterable[Path]) -> list[EpisodeRecord]:
    """Rebuild episode records from trace files; exact by construction."""
    records = []
    for path in sorted(paths):
        header, rows = load_trace(path)
        length = header["track_length"]
        agents = sorted({r["agent"] for r in rows})
        lead = agents[0] if agents else "agent_0"
        lead_rows = [r for r in rows if r["agent"] == lead]
        steps = max((r["step"] for r in rows), default=0)
        distance = lead_rows[-1]["dist_raced"] if lead_rows else 0.0
        duration = max(steps * STEP_PERIOD, STEP_PERIOD)
        records.append(EpisodeRecord(
            episode=header["episode"], seed=header["seed"], track=header["track"],
            track_length=length, steps=steps, distance_m=distance,
            lap_fraction=distance / length,
            avg_speed_kmh=distance / duration * KMH_PER_MS,
            lap_completed=distance / length >= 1.0,
            reward_total=sum(r["reward"] for r in lead_rows),
        ))
    return records


PLOT_KINDS = ("episode_reward", "speed_profile", "trajectory_xy")


def emit_plot_data(records: list[EpisodeRecord], kind: str, path: Path) -> None:
    """Write a delimiter-separated table for one plot kind, header line first."""
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; known: {PLOT_KINDS}")
    lines = []
    if kind == "episode_reward":
        lines.append("episode,agent,total_reward")
        for rec in records:
            totals: dict[str, float] = {}
            for ev in rec.events:
                totals[ev.agent] = totals.get(ev.agent, 0.0) + ev.reward
            for agent in sorted(totals):
                lines.append(f"{rec.episode},{agent},{totals[agent]!r}")
    elif kind == "speed_profile":
        lines.append("step,agent,speed_kmh")
        for rec in records:
            for ev in rec.events:
                lines.append(f"{ev.step},{ev.agent},{ev.speed_kmh!r}")
    else:
        lines.append("step,agent,x,y")
        for rec in records:
            for ev in rec.events:
                lines.append(f"{ev.step},{ev.agent},{ev.x!r},{ev.y!r}")
    Path(path).write_text("\n".join(lines) + "\n")
