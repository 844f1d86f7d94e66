/**
 * Reference client for the external-propagator line protocol.
 *
 * Reads one JSON request per stdin line and writes one response line per
 * request. Stateless per request; a malformed request gets an empty line
 * (which the host counts as a refusal) and serving continues.
 *
 *   node dist/client.js --mode heuristic|golden-echo|chaos
 *                       [--decay 0.5] [--chaos-rate 0.3]
 *                       [--delay-ms 0] [--fixtures responses.jsonl]
 */

import { readFileSync } from "node:fs";
import * as readline from "node:readline";
import { setTimeout as sleep } from "node:timers/promises";

import {
  ClientConfig,
  corrupt,
  heuristicResponse,
  parseArgs,
  shouldCorrupt,
} from "./protocol";

function loadFixtures(path: string): Map<string, string> {
  const fixtures = new Map<string, string>();
  for (const raw of readFileSync(path, "utf-8").split("\n")) {
    const line = raw.trim();
    if (!line) {
      continue;
    }
    fixtures.set(String(JSON.parse(line).id), line);
  }
  return fixtures;
}

async function serve(cfg: ClientConfig): Promise<void> {
  const fixtures = cfg.mode === "golden-echo" ? loadFixtures(cfg.fixtures as string) : null;
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  let served = 0;
  let corrupted = 0;
  for await (const raw of rl) {
    if (cfg.delayMs > 0) {
      await sleep(cfg.delayMs);
    }
    let request: { id?: unknown };
    try {
      request = JSON.parse(raw.trim());
      if (typeof request !== "object" || request === null || !("id" in request)) {
        throw new Error("missing id");
      }
    } catch {
      process.stdout.write("\n");
      continue;
    }
    let line: string;
    if (fixtures) {
      line = fixtures.get(String(request.id)) ?? "";
    } else {
      line = heuristicResponse(request as never, cfg.decay);
      if (cfg.mode === "chaos" && shouldCorrupt(served, cfg.chaosRate)) {
        line = corrupt(line, corrupted % 3);
        corrupted += 1;
      }
    }
    served += 1;
    process.stdout.write(line + "\n");
  }
}

function main(): void {
  let cfg: ClientConfig;
  try {
    cfg = parseArgs(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n`);
    process.exit(2);
  }
  serve(cfg).catch((err) => {
    process.stderr.write(`fatal: ${(err as Error).message}\n`);
    process.exit(1);
  });
}

main();
