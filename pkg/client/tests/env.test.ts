import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync, readdirSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { afterEach, describe, expect, it } from "vitest";

import { ProtocolError, TrackEnv } from "../src/index.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const REPO_ROOT = path.join(here, "..", "..");

const LAP_CONFIG = (port: number) => `
server:
  max_cars: 1
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 4000
  base_port: ${port}
agents:
- target_speed: 50.0
  rewards:
    progress: {scale: 1.0}
    average_speed: {scale: 1.0}
  dones: [one_lap, timeout, out_of_track, collision]
traffic: []
`;

const SHORT_CONFIG = (port: number) => `
server:
  max_cars: 1
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 120
  base_port: ${port}
agents:
- {target_speed: 50.0, dones: [timeout]}
traffic: []
`;

// the trackpos/speed desire a centerline follower sends: 50 km/h of the
// 300 km/h desire ceiling
const CRUISE = { kind: "ts" as const, trackPos: 0, speed: 2 * (50 / 300) - 1 };

interface ServerRun {
  proc: ChildProcess;
  outDir: string;
  ready: Promise<void>;
  exited: Promise<number>;
}

function startServer(config: string, episodes: number): ServerRun {
  const dir = mkdtempSync(path.join(os.tmpdir(), "tracksim-e2e-"));
  const cfgPath = path.join(dir, "sim.yaml");
  writeFileSync(cfgPath, config);
  const outDir = path.join(dir, "out");
  const proc = spawn("python3", [
    "-m", "tracksim", "run",
    "--config", cfgPath,
    "--episodes", String(episodes),
    "--seed", "3",
    "--agent", "external",
    "--client-timeout", "30",
    "--out-dir", outDir,
  ], { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] });

  let stderr = "";
  proc.stderr!.on("data", (d) => { stderr += d.toString(); });

  const ready = new Promise<void>((resolve, reject) => {
    let buffer = "";
    proc.stdout!.on("data", (d) => {
      buffer += d.toString();
      if (buffer.includes("listening")) {
        resolve();
      }
    });
    proc.on("exit", (code) => {
      reject(new Error(`server exited early (code ${code}): ${stderr}`));
    });
  });
  const exited = new Promise<number>((resolve) => {
    proc.on("exit", (code) => resolve(code ?? -1));
  });
  return { proc, outDir, ready, exited };
}

function readTrace(outDir: string, episode: number) {
  const name = readdirSync(outDir).filter((f) => f.endsWith(".jsonl")).sort()[episode];
  const lines = readFileSync(path.join(outDir, name), "utf-8").trim().split("\n");
  const header = JSON.parse(lines[0]).header;
  const rows = lines.slice(1).map((line) => JSON.parse(line));
  return { header, rows };
}

let cleanup: Array<() => void> = [];
afterEach(() => {
  for (const fn of cleanup) {
    try { fn(); } catch { /* already gone */ }
  }
  cleanup = [];
});

describe("connection failures", () => {
  it("times out after the configured retries on a dead port", async () => {
    const start = Date.now();
    await expect(TrackEnv.connect({
      port: 49999, timeoutMs: 200, retries: 2,
    })).rejects.toThrow(/no datagram/);
    // three attempts of 200 ms each, give or take scheduling
    expect(Date.now() - start).toBeGreaterThanOrEqual(500);
  });
});

describe("end-to-end against a live server", () => {
  it("drives a lap and reports exactly what the server traced", async () => {
    const port = 45000 + Math.floor(Math.random() * 400);
    const server = startServer(LAP_CONFIG(port), 1);
    cleanup.push(() => server.proc.kill());
    await server.ready;

    const { env } = await TrackEnv.connect({ port, timeoutMs: 10_000 });
    cleanup.push(() => env.close());

    let rewardSum = 0;
    let distRaced = 0;
    let doneReason = "";
    let steps = 0;
    for (;;) {
      const result = await env.step(CRUISE);
      rewardSum += result.reward;
      distRaced = result.info.frame.distRaced;
      steps += 1;
      if (result.done) {
        doneReason = result.info.doneReason;
        break;
      }
    }
    env.close();
    const code = await server.exited;
    expect(code).toBe(0);
    expect(doneReason).toBe("task_complete");

    const { header, rows } = readTrace(server.outDir, 0);
    const traceRewardSum = rows.reduce((acc: number, r: any) => acc + r.reward, 0);
    const traceDist = rows[rows.length - 1].dist_raced;
    expect(rows.length).toBe(steps);
    expect(Math.abs(rewardSum - traceRewardSum)).toBeLessThanOrEqual(1e-9);
    const clientFraction = distRaced / header.track_length;
    const traceFraction = traceDist / header.track_length;
    expect(Math.abs(clientFraction - traceFraction)).toBeLessThanOrEqual(1e-9);
    expect(clientFraction).toBeGreaterThanOrEqual(1.0);
  });

  it("guards step() after done and resumes through reset()", async () => {
    const port = 45500 + Math.floor(Math.random() * 400);
    const server = startServer(SHORT_CONFIG(port), 2);
    cleanup.push(() => server.proc.kill());
    await server.ready;

    const { env, observation } = await TrackEnv.connect({ port, timeoutMs: 10_000 });
    cleanup.push(() => env.close());
    expect(observation.length).toBe(24);

    // first episode to its timeout
    let last;
    do {
      last = await env.step(CRUISE);
    } while (!last.done);
    expect(last.info.doneReason).toBe("timeout");
    await expect(env.step(CRUISE)).rejects.toThrow(ProtocolError);

    // readiness barrier: the world restarts and hands back a fresh frame
    const first = await env.reset();
    expect(first.length).toBe(24);

    do {
      last = await env.step(CRUISE);
    } while (!last.done);
    expect(last.info.doneReason).toBe("timeout");

    env.close();
    const code = await server.exited;
    expect(code).toBe(0);
  });
});
