/**
 * Wire codec for the tracksim UDP protocol.
 *
 * Datagrams are ASCII text built from `(key value...)` groups. Sensor floats
 * carry 6 significant digits, action floats 6 decimal places. The field
 * order of server sensor strings is fixed and mirrored in SENSOR_FIELDS.
 */

export const N_BEAMS = 19;
export const N_OPPONENT_SECTORS = 36;

export const IDENTIFIED = "***identified***";
export const RESTART = "***restart***";
export const SHUTDOWN = "***shutdown***";
export const ERROR_PREFIX = "***error***";
export const DONE_PREFIX = "***done***";

export const SENSOR_FIELDS = [
  "angle", "curLapTime", "damage", "distFromStart", "distRaced", "gear",
  "racePos", "rpm", "speedX", "speedY", "speedZ", "track", "trackPos",
  "opponents", "reward", "done", "doneReason",
] as const;

export interface SensorFrame {
  angle: number;
  curLapTime: number;
  damage: number;
  distFromStart: number;
  distRaced: number;
  gear: number;
  racePos: number;
  rpm: number;
  speedX: number;
  speedY: number;
  speedZ: number;
  track: number[];
  trackPos: number;
  opponents: number[];
  reward: number;
  done: boolean;
  doneReason: string;
  comms: number[];
}

export interface PrimitiveAction {
  kind: "sab";
  steer: number;   // [-1, 1]
  accel: number;   // [0, 1]
  brake: number;   // [0, 1]
  gear?: number;   // omitted or 0 selects the automatic transmission
}

export interface DesireAction {
  kind: "ts";
  trackPos: number;   // [-1, 1]
  speed: number;      // [-1, 1] normalized speed desire
}

export type Action = PrimitiveAction | DesireAction;

export class ProtocolError extends Error {}

const clip = (x: number, lo: number, hi: number) => Math.min(Math.max(x, lo), hi);

/** Action-side float formatting: 6 decimal places. */
export function fmtAction(x: number): string {
  return x.toFixed(6);
}

export function isControlMessage(message: string): boolean {
  return message.startsWith("***");
}

/** Split `(key v...)(key v...)` into a key -> token-list map. */
export function parseGroups(message: string): Map<string, string[]> {
  const groups = new Map<string, string[]>();
  const re = /\(([^()]*)\)/g;
  let match: RegExpExecArray | null;
  while ((match = re.exec(message)) !== null) {
    const parts = match[1].trim().split(/\s+/).filter((p) => p.length > 0);
    if (parts.length === 0) {
      throw new ProtocolError(`empty group in ${JSON.stringify(message)}`);
    }
    groups.set(parts[0], parts.slice(1));
  }
  if (groups.size === 0) {
    throw new ProtocolError(`no groups found in ${JSON.stringify(message)}`);
  }
  return groups;
}

function floats(tokens: string[], key: string): number[] {
  return tokens.map((t) => {
    const v = Number(t);
    if (Number.isNaN(v)) {
      throw new ProtocolError(`bad number ${JSON.stringify(t)} in (${key} ...)`);
    }
    return v;
  });
}

function one(groups: Map<string, string[]>, key: string): number {
  const tokens = groups.get(key);
  if (!tokens || tokens.length !== 1) {
    throw new ProtocolError(`expected one (${key} F) group`);
  }
  return floats(tokens, key)[0];
}

export function encodeInit(clientId: string, beamAnglesDeg: number[]): string {
  if (beamAnglesDeg.length !== N_BEAMS) {
    throw new ProtocolError(
      `init needs ${N_BEAMS} beam angles, got ${beamAnglesDeg.length}`);
  }
  return `${clientId}(init ${beamAnglesDeg.map((a) => String(a)).join(" ")})`;
}

export function encodeAction(action: Action): string {
  if (action.kind === "ts") {
    return `(trackpos ${fmtAction(clip(action.trackPos, -1, 1))})` +
      `(speed ${fmtAction(clip(action.speed, -1, 1))})`;
  }
  const gear = action.gear ?? 0;
  return `(accel ${fmtAction(clip(action.accel, 0, 1))})` +
    `(brake ${fmtAction(clip(action.brake, 0, 1))})` +
    `(steer ${fmtAction(clip(action.steer, -1, 1))})(gear ${gear})`;
}

export function encodeMetaRestart(): string {
  return "(meta 1)";
}

export function decodeAction(message: string): Action | "meta" {
  const groups = parseGroups(message);
  if (groups.has("meta")) {
    return "meta";
  }
  if (groups.has("trackpos") || groups.has("speed")) {
    return {
      kind: "ts",
      trackPos: clip(one(groups, "trackpos"), -1, 1),
      speed: clip(one(groups, "speed"), -1, 1),
    };
  }
  const gearTokens = groups.get("gear");
  const gear = gearTokens && gearTokens.length === 1 ? Number(gearTokens[0]) : 0;
  return {
    kind: "sab",
    steer: clip(one(groups, "steer"), -1, 1),
    accel: clip(one(groups, "accel"), 0, 1),
    brake: clip(one(groups, "brake"), 0, 1),
    gear: gear > 0 ? gear : undefined,
  };
}

export function decodeSensorFrame(message: string): SensorFrame {
  const groups = parseGroups(message);
  const missing = SENSOR_FIELDS.filter((f) => !groups.has(f));
  if (missing.length > 0) {
    throw new ProtocolError(`sensor string missing fields: ${missing.join(", ")}`);
  }
  const track = floats(groups.get("track")!, "track");
  const opponents = floats(groups.get("opponents")!, "opponents");
  if (track.length !== N_BEAMS) {
    throw new ProtocolError(`track carries ${track.length} values, expected ${N_BEAMS}`);
  }
  if (opponents.length !== N_OPPONENT_SECTORS) {
    throw new ProtocolError(
      `opponents carries ${opponents.length} values, expected ${N_OPPONENT_SECTORS}`);
  }
  const doneReason = groups.get("doneReason")!;
  return {
    angle: one(groups, "angle"),
    curLapTime: one(groups, "curLapTime"),
    damage: one(groups, "damage"),
    distFromStart: one(groups, "distFromStart"),
    distRaced: one(groups, "distRaced"),
    gear: Math.trunc(one(groups, "gear")),
    racePos: Math.trunc(one(groups, "racePos")),
    rpm: one(groups, "rpm"),
    speedX: one(groups, "speedX"),
    speedY: one(groups, "speedY"),
    speedZ: one(groups, "speedZ"),
    track,
    trackPos: one(groups, "trackPos"),
    opponents,
    reward: one(groups, "reward"),
    done: groups.get("done")![0] === "1",
    doneReason: doneReason.length > 0 ? doneReason[0] : "none",
    comms: groups.has("comms") ? floats(groups.get("comms")!, "comms") : [],
  };
}

// -- observation vector mirror -----------------------------------------------

export type ObservationMode = "basic" | "traffic" | "comms";

export interface ObservationSpec {
  mode: ObservationMode;
  normalize: boolean;
  obsMin?: Record<string, number>;
  obsMax?: Record<string, number>;
}

const DEFAULT_BOUNDS: Record<string, [number, number]> = {
  angle: [-Math.PI, Math.PI],
  track: [0, 200],
  track_pos: [-1, 1],
  speed_x: [-100, 300],
  speed_y: [-100, 300],
  speed_z: [-100, 300],
  opponents: [0, 200],
};

const MODE_VARS: Record<ObservationMode, string[]> = {
  basic: ["angle", "track", "track_pos", "speed_x", "speed_y", "speed_z"],
  traffic: ["angle", "track", "track_pos", "speed_x", "speed_y", "speed_z",
            "opponents"],
  comms: ["angle", "track", "track_pos", "speed_x", "speed_y", "speed_z",
          "opponents"],
};

export function modeWidth(mode: ObservationMode, commsWidth = 0): number {
  const widths: Record<string, number> = {
    angle: 1, track: N_BEAMS, track_pos: 1,
    speed_x: 1, speed_y: 1, speed_z: 1, opponents: N_OPPONENT_SECTORS,
  };
  const base = MODE_VARS[mode].reduce((acc, v) => acc + widths[v], 0);
  return mode === "comms" ? base + commsWidth : base;
}

function frameValues(frame: SensorFrame, variable: string): number[] {
  switch (variable) {
    case "angle": return [frame.angle];
    case "track": return frame.track;
    case "track_pos": return [frame.trackPos];
    case "speed_x": return [frame.speedX];
    case "speed_y": return [frame.speedY];
    case "speed_z": return [frame.speedZ];
    case "opponents": return frame.opponents;
    default: throw new ProtocolError(`unknown observation variable ${variable}`);
  }
}

/**
 * Flatten the mode's variables in the server's documented order, affinely
 * mapped to [-1, 1] when normalizing; the comms block is appended unscaled.
 */
export function observationVector(frame: SensorFrame, spec: ObservationSpec): number[] {
  const out: number[] = [];
  for (const variable of MODE_VARS[spec.mode]) {
    const [defLo, defHi] = DEFAULT_BOUNDS[variable];
    const lo = spec.obsMin?.[variable] ?? defLo;
    const hi = spec.obsMax?.[variable] ?? defHi;
    for (const value of frameValues(frame, variable)) {
      if (spec.normalize) {
        out.push(clip(2 * (value - lo) / (hi - lo) - 1, -1, 1));
      } else {
        out.push(value);
      }
    }
  }
  if (spec.mode === "comms") {
    out.push(...frame.comms);
  }
  return out;
}
