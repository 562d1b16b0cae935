export {
  AuthError,
  MemoryClient,
  MemoryClientError,
  NotFoundError,
  SchemaMismatchError,
  ServerError,
  TransportError,
  ValidationError,
} from "./client.js";
export type {
  FeedbackResult,
  MemoryClientOptions,
  RankedMeta,
  RetrieveResult,
  SubmitResult,
  TrajectorySegment,
} from "./client.js";
