/**
 * Typed client for the memograph HTTP service.
 *
 * Mirrors the wire schema one-to-one: retrieve, trajectory submission and
 * reward feedback. GETs are retried on transient failures; POSTs are never
 * retried automatically (they mutate the graph).
 */

const SCHEMA_VERSION = 1;

export interface MemoryClientOptions {
  baseUrl?: string;
  token?: string;
  timeoutMs?: number;
  /** Extra attempts for idempotent requests after the first one. */
  retries?: number;
  /** Injectable for tests; defaults to global fetch. */
  fetchImpl?: typeof fetch;
}

export interface RankedMeta {
  id: string;
  score: number;
  rank: number;
  summary: string;
}

export interface RetrieveResult {
  metas: RankedMeta[];
  prompt: string;
}

export interface TrajectorySegment {
  kind: "think" | "tool_call" | "tool_response" | "answer";
  content: string;
}

export interface SubmitResult {
  queryId: string;
  pathIds: string[];
  speculativeMetas: string[];
}

export interface FeedbackResult {
  meta: string;
  rho: number;
  deltaR: number;
}

export class MemoryClientError extends Error {}

/** Network-level failure: connection refused, timeout, dns. */
export class TransportError extends MemoryClientError {}

/** 401 from the service. */
export class AuthError extends MemoryClientError {}

/** 404: the referenced node does not exist. */
export class NotFoundError extends MemoryClientError {}

/** 400: the request body failed validation. */
export class ValidationError extends MemoryClientError {}

/** 5xx after retries were exhausted. */
export class ServerError extends MemoryClientError {}

/** The service speaks a different schema_version than this client. */
export class SchemaMismatchError extends MemoryClientError {}

const RETRYABLE_STATUS = new Set([429, 502, 503, 504, 500]);

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class MemoryClient {
  readonly baseUrl: string;
  readonly timeoutMs: number;
  readonly retries: number;
  private readonly token?: string;
  private readonly fetchImpl: typeof fetch;

  constructor(options: MemoryClientOptions = {}) {
    const envUrl =
      typeof process !== "undefined" ? process.env.MEMOGRAPH_URL : undefined;
    const envToken =
      typeof process !== "undefined" ? process.env.MEMOGRAPH_TOKEN : undefined;
    const base = options.baseUrl ?? envUrl;
    if (!base) {
      throw new MemoryClientError(
        "no base URL: pass baseUrl or set MEMOGRAPH_URL",
      );
    }
    this.baseUrl = base.replace(/\/+$/, "");
    this.token = options.token ?? envToken;
    this.timeoutMs = options.timeoutMs ?? 30_000;
    this.retries = options.retries ?? 2;
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  async retrieve(question: string, k = 3): Promise<RetrieveResult> {
    if (k < 0) throw new ValidationError("k must be >= 0");
    const params = new URLSearchParams({ q: question, k: String(k) });
    const body = await this.request(
      "GET",
      `/v1/retrieve?${params.toString()}`,
      undefined,
      true,
    );
    return {
      metas: (body.metas as RankedMeta[]).map((m) => ({
        id: m.id,
        score: m.score,
        rank: m.rank,
        summary: m.summary,
      })),
      prompt: body.prompt as string,
    };
  }

  async submitTrajectory(
    question: string,
    segments: TrajectorySegment[],
    reward: number,
  ): Promise<SubmitResult> {
    if (!question) throw new ValidationError("question must be non-empty");
    if (segments.length === 0) {
      throw new ValidationError("segments must be non-empty");
    }
    const body = await this.request("POST", "/v1/trajectories", {
      schema_version: SCHEMA_VERSION,
      question,
      segments,
      reward,
    });
    return {
      queryId: body.query_id as string,
      pathIds: body.path_ids as string[],
      speculativeMetas: (body.speculative_metas ?? []) as string[],
    };
  }

  async sendFeedback(
    queryId: string,
    metaId: string,
    rWith: number,
    rWo: number,
  ): Promise<FeedbackResult> {
    const body = await this.request("POST", "/v1/feedback", {
      schema_version: SCHEMA_VERSION,
      query: queryId,
      sampled_meta: metaId,
      r_with: rWith,
      r_wo: rWo,
    });
    return {
      meta: body.meta as string,
      rho: body.rho as number,
      deltaR: body.delta_r as number,
    };
  }

  private async request(
    method: "GET" | "POST",
    path: string,
    payload?: unknown,
    idempotent = false,
  ): Promise<Record<string, unknown>> {
    const url = `${this.baseUrl}${path}`;
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers.authorization = `Bearer ${this.token}`;
    const attempts = idempotent ? this.retries + 1 : 1;
    let lastError: Error | undefined;
    for (let attempt = 0; attempt < attempts; attempt++) {
      if (attempt > 0) await sleep(100 * 2 ** (attempt - 1));
      let response: Response;
      try {
        response = await this.fetchImpl(url, {
          method,
          headers,
          body: payload === undefined ? undefined : JSON.stringify(payload),
          signal: AbortSignal.timeout(this.timeoutMs),
        });
      } catch (error) {
        lastError = new TransportError(`${method} ${url} failed: ${error}`);
        if (!idempotent) throw lastError;
        continue;
      }
      if (response.status >= 500 || response.status === 429) {
        lastError = new ServerError(
          `${method} ${url} returned ${response.status}`,
        );
        if (!idempotent) throw lastError;
        continue;
      }
      if (response.status === 401) {
        throw new AuthError(await detail(response));
      }
      if (response.status === 404) {
        throw new NotFoundError(await detail(response));
      }
      if (response.status >= 400) {
        throw new ValidationError(await detail(response));
      }
      const body = (await response.json()) as Record<string, unknown>;
      if (
        typeof body.schema_version === "number" &&
        body.schema_version !== SCHEMA_VERSION
      ) {
        throw new SchemaMismatchError(
          `server schema_version ${body.schema_version}, client expects ${SCHEMA_VERSION}`,
        );
      }
      return body;
    }
    throw lastError ?? new TransportError(`${method} ${url} failed`);
  }
}

async function detail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? `HTTP ${response.status}`;
  } catch {
    return `HTTP ${response.status}`;
  }
}
