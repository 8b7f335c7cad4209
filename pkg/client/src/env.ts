/**
 * Gym-style per-agent environment handle over the UDP wire protocol.
 *
 * One handle owns one socket talking to one server session port. step()
 * sends an action and resolves with the next frame; after a done frame,
 * step() throws until reset() has observed the world restart. The handle
 * never forces a world reset: reset() only expresses readiness and blocks
 * until every agent has finished and the server restarts the episode.
 */

import dgram from "node:dgram";

import {
  Action,
  DONE_PREFIX,
  ERROR_PREFIX,
  IDENTIFIED,
  ObservationSpec,
  ProtocolError,
  RESTART,
  SHUTDOWN,
  SensorFrame,
  decodeSensorFrame,
  encodeAction,
  encodeInit,
  encodeMetaRestart,
  isControlMessage,
  observationVector,
} from "./codec.js";

export class TimeoutError extends Error {}
export class ServerShutdown extends Error {}

export interface ConnectOptions {
  host?: string;
  port: number;
  clientId?: string;
  beamAnglesDeg?: number[];
  observation?: ObservationSpec;
  timeoutMs?: number;
  retries?: number;
}

export interface StepResult {
  observation: number[];
  reward: number;
  done: boolean;
  info: { doneReason: string; frame: SensorFrame; raw: string };
}

/** 19 beams evenly spanning [-90, +90] degrees. */
export function defaultBeamAngles(): number[] {
  return Array.from({ length: 19 }, (_, i) => -90 + 10 * i);
}

type Waiter = {
  resolve: (msg: string) => void;
  reject: (err: Error) => void;
  timer: NodeJS.Timeout;
};

export class TrackEnv {
  readonly port: number;
  readonly host: string;
  readonly observation: ObservationSpec;
  episodeStatus: "running" | "done" | "shutdown" = "running";
  lastRawFrame = "";

  private socket: dgram.Socket;
  private queue: string[] = [];
  private waiter: Waiter | null = null;
  private timeoutMs: number;

  private constructor(socket: dgram.Socket, opts: ConnectOptions) {
    this.socket = socket;
    this.host = opts.host ?? "127.0.0.1";
    this.port = opts.port;
    this.observation = opts.observation ?? { mode: "basic", normalize: true };
    this.timeoutMs = opts.timeoutMs ?? 5000;
    socket.on("message", (data) => this.onMessage(data.toString("ascii")));
  }

  /** Handshake with the server and wait for the first observation. */
  static async connect(opts: ConnectOptions): Promise<{ env: TrackEnv; observation: number[] }> {
    const socket = dgram.createSocket("udp4");
    const env = new TrackEnv(socket, opts);
    const beams = opts.beamAnglesDeg ?? defaultBeamAngles();
    const retries = opts.retries ?? 3;
    let identified = false;
    for (let attempt = 0; attempt <= retries && !identified; attempt++) {
      env.send(encodeInit(opts.clientId ?? "SCR", beams));
      try {
        const reply = await env.nextMessage();
        if (reply.startsWith(ERROR_PREFIX)) {
          env.close();
          throw new ProtocolError(`server rejected init: ${reply}`);
        }
        if (reply === IDENTIFIED) {
          identified = true;
        }
      } catch (err) {
        if (!(err instanceof TimeoutError) || attempt === retries) {
          env.close();
          throw err;
        }
      }
    }
    const frame = await env.nextFrame();
    return { env, observation: observationVector(frame, env.observation) };
  }

  private onMessage(message: string): void {
    if (this.waiter) {
      const { resolve, timer } = this.waiter;
      this.waiter = null;
      clearTimeout(timer);
      resolve(message);
    } else {
      this.queue.push(message);
    }
  }

  private send(text: string): void {
    this.socket.send(Buffer.from(text, "ascii"), this.port, this.host);
  }

  private nextMessage(): Promise<string> {
    if (this.queue.length > 0) {
      return Promise.resolve(this.queue.shift()!);
    }
    if (this.waiter) {
      return Promise.reject(new ProtocolError("concurrent receive on one handle"));
    }
    return new Promise<string>((resolve, reject) => {
      const timer = setTimeout(() => {
        this.waiter = null;
        reject(new TimeoutError(
          `no datagram from ${this.host}:${this.port} within ${this.timeoutMs} ms`));
      }, this.timeoutMs);
      this.waiter = { resolve, reject, timer };
    });
  }

  /** Receive until a sensor frame arrives; route control messages to state. */
  private async nextFrame(): Promise<SensorFrame> {
    for (;;) {
      const message = await this.nextMessage();
      if (isControlMessage(message)) {
        if (message === SHUTDOWN) {
          this.episodeStatus = "shutdown";
          throw new ServerShutdown("server shut down");
        }
        if (message.startsWith(DONE_PREFIX)) {
          this.episodeStatus = "done";
          continue;
        }
        if (message === RESTART) {
          // a restart seen here means the caller missed the done frame;
          // surface it as a desync rather than guessing at state
          throw new ProtocolError("unexpected ***restart*** outside reset()");
        }
        throw new ProtocolError(`unexpected control message: ${message}`);
      }
      this.lastRawFrame = message;
      return decodeSensorFrame(message);
    }
  }

  /** Send one action; resolve with the resulting observation. */
  async step(action: Action): Promise<StepResult> {
    if (this.episodeStatus === "shutdown") {
      throw new ServerShutdown("server shut down");
    }
    if (this.episodeStatus === "done") {
      throw new ProtocolError("episode is done; call reset() before step()");
    }
    this.send(encodeAction(action));
    const frame = await this.nextFrame();
    if (frame.done) {
      this.episodeStatus = "done";
    }
    return {
      observation: observationVector(frame, this.observation),
      reward: frame.reward,
      done: frame.done,
      info: { doneReason: frame.doneReason, frame, raw: this.lastRawFrame },
    };
  }

  /**
   * Express restart readiness and block until the next episode's first frame.
   * While other agents still run, this waits on them; it cannot force the
   * world to reset.
   */
  async reset(waitMs?: number): Promise<number[]> {
    if (this.episodeStatus === "shutdown") {
      throw new ServerShutdown("server shut down");
    }
    if (this.episodeStatus === "running") {
      // abandoning a live episode: the server marks this agent done
      this.send(encodeMetaRestart());
    }
    const deadline = Date.now() + (waitMs ?? 60_000);
    for (;;) {
      if (Date.now() > deadline) {
        throw new TimeoutError(
          `world did not restart within ${waitMs ?? 60_000} ms ` +
          `(episode status: ${this.episodeStatus})`);
      }
      const message = await this.nextMessage();
      if (message === RESTART) {
        break;
      }
      if (message === SHUTDOWN) {
        this.episodeStatus = "shutdown";
        throw new ServerShutdown("server shut down while awaiting restart");
      }
      // frames for still-running steps and the ***done*** echo are drained
    }
    const frame = await this.nextFrame();
    this.episodeStatus = "running";
    return observationVector(frame, this.observation);
  }

  close(): void {
    this.socket.close();
  }
}
