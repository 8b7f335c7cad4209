export {
  Action,
  DesireAction,
  ObservationMode,
  ObservationSpec,
  PrimitiveAction,
  ProtocolError,
  SensorFrame,
  SENSOR_FIELDS,
  N_BEAMS,
  N_OPPONENT_SECTORS,
  decodeAction,
  decodeSensorFrame,
  encodeAction,
  encodeInit,
  encodeMetaRestart,
  isControlMessage,
  modeWidth,
  observationVector,
} from "./codec.js";

export {
  ConnectOptions,
  ServerShutdown,
  StepResult,
  TimeoutError,
  TrackEnv,
  defaultBeamAngles,
} from "./env.js";
