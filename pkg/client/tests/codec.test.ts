import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import path from "node:path";

import { describe, expect, it } from "vitest";

import {
  Action,
  N_BEAMS,
  N_OPPONENT_SECTORS,
  ProtocolError,
  decodeAction,
  decodeSensorFrame,
  encodeAction,
  encodeInit,
  modeWidth,
  observationVector,
} from "../src/index.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const FIXTURES = path.join(here, "..", "..", "fixtures", "protocol");

interface FrameCase {
  sensor_string: string;
  expected: Record<string, unknown>;
}

/** The fixture's expected fields flattened in wire order. */
function expectedVector(expected: Record<string, unknown>): number[] {
  const num = (k: string) => expected[k] as number;
  const arr = (k: string) => expected[k] as number[];
  return [
    num("angle"), num("curLapTime"), num("damage"), num("distFromStart"),
    num("distRaced"), num("gear"), num("racePos"), num("rpm"),
    num("speedX"), num("speedY"), num("speedZ"),
    ...arr("track"), num("trackPos"), ...arr("opponents"),
    num("reward"), expected["done"] ? 1 : 0,
    ...(expected["comms"] as number[] ?? []),
  ];
}

function decodedVector(sensorString: string): number[] {
  const f = decodeSensorFrame(sensorString);
  return [
    f.angle, f.curLapTime, f.damage, f.distFromStart, f.distRaced, f.gear,
    f.racePos, f.rpm, f.speedX, f.speedY, f.speedZ,
    ...f.track, f.trackPos, ...f.opponents, f.reward, f.done ? 1 : 0,
    ...f.comms,
  ];
}

describe("sensor frame conformance corpus", () => {
  const corpus: FrameCase[] = JSON.parse(
    readFileSync(path.join(FIXTURES, "sensor_frames.json"), "utf-8"));

  it("has enough cases to be meaningful", () => {
    expect(corpus.length).toBeGreaterThanOrEqual(5);
  });

  it("decodes every fixture to the exact expected vector", () => {
    for (const c of corpus) {
      const got = decodedVector(c.sensor_string);
      const want = expectedVector(c.expected);
      expect(got.length).toBe(want.length);
      for (let i = 0; i < want.length; i++) {
        // exact: both sides parse the same decimal strings into doubles
        expect(got[i]).toBe(want[i]);
      }
      expect(decodeSensorFrame(c.sensor_string).doneReason)
        .toBe(c.expected["doneReason"]);
    }
  });

  it("rejects frames with missing fields", () => {
    const broken = corpus[0].sensor_string.replace(/\(rpm [^)]*\)/, "");
    expect(() => decodeSensorFrame(broken)).toThrow(ProtocolError);
  });

  it("rejects wrong rangefinder arity", () => {
    const broken = corpus[0].sensor_string.replace(/\(track ([^ )]*) /, "(track ");
    expect(() => decodeSensorFrame(broken)).toThrow(/track/);
  });
});

describe("action conformance corpus", () => {
  const corpus: Array<{ action_string: string; kind: string;
                        expected: Record<string, number> }> =
    JSON.parse(readFileSync(path.join(FIXTURES, "actions.json"), "utf-8"));

  it("decodes every fixture action", () => {
    for (const c of corpus) {
      const decoded = decodeAction(c.action_string);
      if (c.kind === "meta") {
        expect(decoded).toBe("meta");
        continue;
      }
      expect(decoded).not.toBe("meta");
      const action = decoded as Action;
      expect(action.kind).toBe(c.kind);
      if (action.kind === "ts") {
        expect(action.trackPos).toBe(c.expected["trackpos"]);
        expect(action.speed).toBe(c.expected["speed"]);
      } else {
        expect(action.steer).toBe(c.expected["steer"]);
        expect(action.accel).toBe(c.expected["accel"]);
        expect(action.brake).toBe(c.expected["brake"]);
        expect(action.gear ?? 0).toBe(c.expected["gear"]);
      }
    }
  });

  it("matches the documented desire formatting", () => {
    expect(encodeAction({ kind: "ts", trackPos: 0, speed: 0.5 }))
      .toBe("(trackpos 0.000000)(speed 0.500000)");
  });
});

describe("fuzzed round trips", () => {
  // deterministic linear congruential stream, no RNG dependency
  function* lcg(seed: number): Generator<number> {
    let state = seed >>> 0;
    for (;;) {
      state = (1664525 * state + 1013904223) >>> 0;
      yield state / 2 ** 32;
    }
  }

  it("keeps 1000 fuzzed actions intact at wire precision", () => {
    const rand = lcg(42);
    let mismatches = 0;
    for (let i = 0; i < 1000; i++) {
      const action: Action = i % 2 === 0
        ? {
            kind: "sab",
            steer: rand.next().value * 2 - 1,
            accel: rand.next().value,
            brake: rand.next().value,
            gear: 1 + Math.floor(rand.next().value * 5),
          }
        : {
            kind: "ts",
            trackPos: rand.next().value * 2 - 1,
            speed: rand.next().value * 2 - 1,
          };
      const wire = encodeAction(action);
      const decoded = decodeAction(wire) as Action;
      const reencoded = encodeAction(decoded);
      if (wire !== reencoded) {
        mismatches++;
        continue;
      }
      if (action.kind === "sab" && decoded.kind === "sab") {
        if (Math.abs(decoded.steer - action.steer) > 5e-7 ||
            Math.abs(decoded.accel - action.accel) > 5e-7 ||
            Math.abs(decoded.brake - action.brake) > 5e-7 ||
            (decoded.gear ?? 0) !== (action.gear ?? 0)) {
          mismatches++;
        }
      } else if (action.kind === "ts" && decoded.kind === "ts") {
        if (Math.abs(decoded.trackPos - action.trackPos) > 5e-7 ||
            Math.abs(decoded.speed - action.speed) > 5e-7) {
          mismatches++;
        }
      } else {
        mismatches++;
      }
    }
    expect(mismatches).toBe(0);
  });

  it("handles init messages", () => {
    const beams = Array.from({ length: N_BEAMS }, (_, i) => -90 + 10 * i);
    expect(encodeInit("SCR", beams)).toMatch(/^SCR\(init -90 /);
    expect(() => encodeInit("SCR", beams.slice(1))).toThrow(ProtocolError);
  });
});

describe("observation vectors", () => {
  const corpus: FrameCase[] = JSON.parse(
    readFileSync(path.join(FIXTURES, "sensor_frames.json"), "utf-8"));

  it("basic mode is 24 wide and endpoint-normalized", () => {
    expect(modeWidth("basic")).toBe(24);
    const frame = decodeSensorFrame(corpus[0].sensor_string);
    const vec = observationVector(frame, { mode: "basic", normalize: true });
    expect(vec.length).toBe(24);
    for (const v of vec) {
      expect(v).toBeGreaterThanOrEqual(-1);
      expect(v).toBeLessThanOrEqual(1);
    }
  });

  it("traffic mode adds the opponent block", () => {
    expect(modeWidth("traffic")).toBe(24 + N_OPPONENT_SECTORS);
  });

  it("comms mode appends the peer block unscaled", () => {
    const withComms = corpus.find((c) =>
      (c.expected["comms"] as number[]).length > 0)!;
    const frame = decodeSensorFrame(withComms.sensor_string);
    const vec = observationVector(frame, { mode: "comms", normalize: true });
    const comms = withComms.expected["comms"] as number[];
    expect(vec.length).toBe(60 + comms.length);
    expect(vec.slice(-comms.length)).toEqual(comms);
  });
});
