import { spawn } from "node:child_process";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  corrupt,
  heuristicResponse,
  parseArgs,
  roundHalfAway,
  shouldCorrupt,
} from "../src/protocol";

const here = dirname(fileURLToPath(import.meta.url));
const CLIENT = join(here, "..", "dist", "client.js");
const GOLDEN_REQUESTS = join(here, "golden", "requests.jsonl");
const GOLDEN_RESPONSES = join(here, "golden", "responses.jsonl");

function runClient(args: string[], input: string): Promise<{ out: string; code: number }> {
  return new Promise((resolve, reject) => {
    const child = spawn("node", [CLIENT, ...args], { stdio: ["pipe", "pipe", "pipe"] });
    let out = "";
    let err = "";
    child.stdout.on("data", (chunk) => (out += chunk));
    child.stderr.on("data", (chunk) => (err += chunk));
    child.on("error", reject);
    child.on("close", (code) => {
      if (code !== 0 && code !== null) {
        reject(new Error(`client exited ${code}: ${err}`));
      } else {
        resolve({ out, code: code ?? 0 });
      }
    });
    child.stdin.write(input);
    child.stdin.end();
  });
}

function isValidResponse(line: string): boolean {
  if (!line.trim()) {
    return false;
  }
  let obj: any;
  try {
    obj = JSON.parse(line);
  } catch {
    return false;
  }
  const body = obj?.impact_analysis;
  if (typeof body !== "object" || body === null) {
    return false;
  }
  if (!Array.isArray(body.affected_companies) || typeof body.analysis !== "string") {
    return false;
  }
  for (const c of body.affected_companies) {
    if (typeof c?.name !== "string" || !c.name) {
      return false;
    }
    if (!["positive", "negative", "neutral"].includes(c.impact_type)) {
      return false;
    }
    if (!Number.isInteger(c.impact_score) || c.impact_score < -10 || c.impact_score > 10) {
      return false;
    }
    const s = c.impact_score;
    const consistent =
      (c.impact_type === "positive" && s > 0) ||
      (c.impact_type === "negative" && s < 0) ||
      (c.impact_type === "neutral" && s === 0);
    if (!consistent) {
      return false;
    }
  }
  return true;
}

describe("rounding", () => {
  it("rounds halves away from zero on both sides", () => {
    expect(roundHalfAway(1.5)).toBe(2);
    expect(roundHalfAway(2.5)).toBe(3);
    expect(roundHalfAway(-1.5)).toBe(-2);
    expect(roundHalfAway(-2.5)).toBe(-3);
    expect(roundHalfAway(0.4999)).toBe(0);
    expect(roundHalfAway(-0.4999)).toBe(0);
  });
});

describe("heuristic response", () => {
  const request = {
    id: "x1",
    event: { company_codes: ["AAA", "AAA"] },
    context: {
      firms: ["AAA", "BBB", "CCC"],
      edges: [
        ["AAA", "BBB", "supply_chain", 1.0],
        ["AAA", "CCC", "leadership", -0.6],
        ["BBB", "CCC", "fund_holding", 0.9],
      ] as [string, string, string, number][],
    },
  };

  it("claims deduped seeds first, then sorted scored neighbors", () => {
    const parsed = JSON.parse(heuristicResponse(request, 0.5));
    const names = parsed.impact_analysis.affected_companies.map((c: any) => c.name);
    expect(names).toEqual(["AAA", "BBB", "CCC"]);
    const byName = Object.fromEntries(
      parsed.impact_analysis.affected_companies.map((c: any) => [c.name, c.impact_score]),
    );
    expect(byName.AAA).toBe(8);
    expect(byName.BBB).toBe(4); // round(8 * 0.5 * 1.0)
    expect(byName.CCC).toBe(-2); // round(8 * 0.5 * -0.6) away from zero
  });

  it("drops zero-score neighbors", () => {
    const tiny = {
      ...request,
      context: { firms: ["AAA", "BBB"], edges: [["AAA", "BBB", "technical", 0.01]] },
    } as any;
    const parsed = JSON.parse(heuristicResponse(tiny, 0.5));
    expect(parsed.impact_analysis.affected_companies).toHaveLength(1);
  });
});

describe("chaos plumbing", () => {
  it("corrupts exactly the configured fraction", () => {
    let hits = 0;
    for (let i = 0; i < 1000; i += 1) {
      if (shouldCorrupt(i, 0.3)) {
        hits += 1;
      }
    }
    expect(hits).toBe(300);
  });

  it("every corruption kind breaks the schema", () => {
    const line = heuristicResponse(
      {
        id: "c1",
        event: { company_codes: ["AAA"] },
        context: { firms: ["AAA"], edges: [] },
      },
      0.5,
    );
    expect(isValidResponse(line)).toBe(true);
    for (const kind of [0, 1, 2]) {
      expect(isValidResponse(corrupt(line, kind))).toBe(false);
    }
  });
});

describe("argument parsing", () => {
  it("rejects unknown flags and bad rates", () => {
    expect(() => parseArgs(["--bogus"])).toThrow();
    expect(() => parseArgs(["--chaos-rate", "1.5"])).toThrow();
    expect(() => parseArgs(["--mode", "golden-echo"])).toThrow();
  });
});

describe("golden conformance", () => {
  const requests = readFileSync(GOLDEN_REQUESTS, "utf-8");
  const responses = readFileSync(GOLDEN_RESPONSES, "utf-8");

  it("heuristic mode reproduces the golden responses byte for byte", async () => {
    const { out } = await runClient(["--mode", "heuristic", "--decay", "0.5"], requests);
    expect(out).toBe(responses);
  });

  it("golden-echo replays fixture lines byte for byte", async () => {
    const { out } = await runClient(
      ["--mode", "golden-echo", "--fixtures", GOLDEN_RESPONSES],
      requests,
    );
    expect(out).toBe(responses);
  });
});

describe("serving behavior", () => {
  const oneRequest = JSON.stringify({
    id: "r1",
    event: { company_codes: ["AAA"] },
    context: { firms: ["AAA"], edges: [] },
  });

  it("answers a malformed request with an empty line and keeps serving", async () => {
    const input = `not json at all\n${oneRequest}\n`;
    const { out } = await runClient([], input);
    const lines = out.split("\n");
    expect(lines[0]).toBe("");
    expect(isValidResponse(lines[1])).toBe(true);
  });

  it("chaos at full rate refuses everything", async () => {
    const input = Array.from({ length: 20 }, (_, i) =>
      JSON.stringify({
        id: `e${i}`,
        event: { company_codes: ["AAA"] },
        context: { firms: ["AAA"], edges: [] },
      }),
    ).join("\n");
    const { out } = await runClient(["--mode", "chaos", "--chaos-rate", "1.0"], input + "\n");
    const lines = out.split("\n").slice(0, 20);
    expect(lines).toHaveLength(20);
    for (const line of lines) {
      expect(isValidResponse(line)).toBe(false);
    }
  });

  it("chaos at 0.3 over 1000 requests lands within the tolerance band", async () => {
    const input = Array.from({ length: 1000 }, (_, i) =>
      JSON.stringify({
        id: `e${i}`,
        event: { company_codes: ["AAA"] },
        context: { firms: ["AAA"], edges: [] },
      }),
    ).join("\n");
    const { out } = await runClient(["--mode", "chaos", "--chaos-rate", "0.3"], input + "\n");
    const lines = out.split("\n").slice(0, 1000);
    const refused = lines.filter((line) => !isValidResponse(line)).length;
    const rate = refused / 1000;
    expect(Math.abs(rate - 0.3)).toBeLessThanOrEqual(0.05);
    expect(refused).toBe(300); // the counter makes the fraction exact
  });

  it("honors the response delay", async () => {
    const start = Date.now();
    await runClient(["--delay-ms", "150"], oneRequest + "\n" + oneRequest + "\n");
    expect(Date.now() - start).toBeGreaterThanOrEqual(300);
  });
});
