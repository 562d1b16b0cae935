/**
 * Differential test: the SDK against a live fixture service must return
 * results identical to direct in-process operations on the same graph state
 * (the expected.json fixtures, regenerated by test/generate_fixtures.py).
 */

import { spawn, type ChildProcess } from "node:child_process";
import { copyFileSync, mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { MemoryClient, NotFoundError } from "../src/client.js";

const FIXTURES = join(__dirname, "fixtures");
const expected = JSON.parse(
  readFileSync(join(FIXTURES, "expected.json"), "utf-8"),
);
const PORT = 8700 + (process.pid % 200);
const BASE_URL = `http://127.0.0.1:${PORT}`;

let service: ChildProcess;
let client: MemoryClient;

async function waitForHealth(timeoutMs = 20_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE_URL}/v1/health`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error(`service did not come up on ${BASE_URL}`);
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "memograph-sdk-"));
  const graphCopy = join(dir, "fixture.graph.json");
  copyFileSync(join(FIXTURES, "fixture.graph.json"), graphCopy);
  service = spawn(
    "python3",
    ["-m", "memograph.cli", "serve", "--graph", graphCopy,
     "--host", "127.0.0.1", "--port", String(PORT)],
    { stdio: "ignore" },
  );
  client = new MemoryClient({ baseUrl: BASE_URL });
  await waitForHealth();
}, 30_000);

afterAll(() => {
  service?.kill("SIGTERM");
});

describe("differential against the live fixture service", () => {
  it("retrieve matches the in-process ranking", async () => {
    const result = await client.retrieve("first question", 3);
    expect(result).toEqual(expected.retrieveBefore);
  });

  it("retrieve with k=0 is the identity augmentation", async () => {
    const result = await client.retrieve("bare question", 0);
    expect(result).toEqual(expected.retrieveKZero);
  });

  it("submitTrajectory matches the in-process ingest", async () => {
    const result = await client.submitTrajectory(
      "new question via sdk",
      [
        { kind: "think", content: "the sdk submitted this" },
        { kind: "answer", content: "a plausible answer" },
      ],
      1.0,
    );
    expect(result).toEqual(expected.submit);
  });

  it("sendFeedback matches the in-process weight update", async () => {
    const result = await client.sendFeedback("q1", "m1", 1.0, 0.0);
    expect(result).toEqual(expected.feedback);
  });

  it("retrieve after feedback reflects the strengthened chain", async () => {
    const result = await client.retrieve("first question", 1);
    expect(result).toEqual(expected.retrieveAfter);
    expect(result.metas[0].score).toBeGreaterThan(
      expected.retrieveBefore.metas.find(
        (m: { id: string }) => m.id === result.metas[0].id,
      )!.score,
    );
  });

  it("duplicate submission appends new nodes", async () => {
    const again = await client.submitTrajectory(
      "new question via sdk",
      [
        { kind: "think", content: "the sdk submitted this" },
        { kind: "answer", content: "a plausible answer" },
      ],
      1.0,
    );
    expect(again.queryId).not.toBe(expected.submit.queryId);
    expect(again.pathIds).not.toEqual(expected.submit.pathIds);
  });

  it("zero reward gap leaves the score unchanged", async () => {
    const before = await client.retrieve("first question", 1);
    await client.sendFeedback("q1", "m1", 0.5, 0.5);
    const after = await client.retrieve("first question", 1);
    expect(after).toEqual(before);
  });

  it("unknown ids surface as typed not-found errors", async () => {
    await expect(
      client.sendFeedback("q1", "m999", 1, 0),
    ).rejects.toBeInstanceOf(NotFoundError);
  });
});
