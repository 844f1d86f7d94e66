/**
 * Wire-protocol logic for the reference propagator client.
 *
 * Responses must be byte-identical to the Python reference client, so every
 * detail here is pinned: claim order (seeds in request order, then neighbors
 * sorted by name), half-away-from-zero rounding, compact JSON with keys in
 * schema order, and first-occurrence-only chaos substitutions.
 */

export interface WireRequest {
  id: string;
  event?: { company_codes?: string[] };
  context?: { firms?: string[]; edges?: [string, string, string, number][] };
}

export interface Claim {
  name: string;
  impact_type: "positive" | "negative" | "neutral";
  impact_score: number;
}

/** Round half away from zero (Math.round rounds -1.5 the wrong way). */
export function roundHalfAway(x: number): number {
  const r = x >= 0 ? Math.floor(x + 0.5) : Math.ceil(x - 0.5);
  return r === 0 ? 0 : r; // fold Math.ceil's negative zero
}

export function heuristicResponse(request: WireRequest, decay: number): string {
  const codes = request.event?.company_codes ?? [];
  const seeds = [...new Set(codes)];
  const edges = request.context?.edges ?? [];

  const flow = new Map<string, number>();
  for (const edge of edges) {
    const src = edge[0];
    const dst = edge[1];
    const mu = Number(edge[3]);
    if (seeds.includes(src) && !seeds.includes(dst)) {
      flow.set(dst, (flow.get(dst) ?? 0) + mu);
    }
  }

  const companies: Claim[] = seeds.map((name) => ({
    name,
    impact_type: "positive",
    impact_score: 8,
  }));
  for (const name of [...flow.keys()].sort()) {
    let score = roundHalfAway(8.0 * decay * (flow.get(name) as number));
    score = Math.max(-10, Math.min(10, score));
    if (score === 0) {
      continue;
    }
    companies.push({
      name,
      impact_type: score > 0 ? "positive" : "negative",
      impact_score: score,
    });
  }

  const payload = {
    id: request.id,
    impact_analysis: {
      affected_companies: companies,
      analysis:
        `Heuristic propagation from ${seeds.length} seed firms ` +
        `to ${companies.length - seeds.length} neighbors.`,
    },
  };
  return JSON.stringify(payload);
}

/** Corruption kinds rotate: truncation, out-of-range score, wrong key. */
export function corrupt(line: string, kind: number): string {
  if (kind === 1) {
    const out = line.replace('"impact_score":8', '"impact_score":15');
    if (out !== line) {
      return out;
    }
  } else if (kind === 2) {
    return line.replace('"impact_analysis"', '"impactAnalysis"');
  }
  return line.slice(0, Math.floor(line.length / 2));
}

/** Corrupt exactly floor(n * rate) of the first n responses (Bresenham). */
export function shouldCorrupt(served: number, rate: number): boolean {
  return Math.floor((served + 1) * rate) > Math.floor(served * rate);
}

export interface ClientConfig {
  mode: "heuristic" | "golden-echo" | "chaos";
  decay: number;
  chaosRate: number;
  delayMs: number;
  fixtures: string | null;
}

export function parseArgs(argv: string[]): ClientConfig {
  const cfg: ClientConfig = {
    mode: "heuristic",
    decay: 0.5,
    chaosRate: 0,
    delayMs: 0,
    fixtures: null,
  };
  for (let i = 0; i < argv.length; i += 1) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--mode":
        if (value !== "heuristic" && value !== "golden-echo" && value !== "chaos") {
          throw new Error(`unknown mode: ${value}`);
        }
        cfg.mode = value;
        i += 1;
        break;
      case "--decay":
        cfg.decay = Number(value);
        i += 1;
        break;
      case "--chaos-rate":
        cfg.chaosRate = Number(value);
        i += 1;
        break;
      case "--delay-ms":
        cfg.delayMs = Number(value);
        i += 1;
        break;
      case "--fixtures":
        cfg.fixtures = value;
        i += 1;
        break;
      default:
        throw new Error(`unknown flag: ${flag}`);
    }
  }
  if (!(cfg.chaosRate >= 0 && cfg.chaosRate <= 1)) {
    throw new Error("--chaos-rate must be in [0,1]");
  }
  if (cfg.mode === "golden-echo" && !cfg.fixtures) {
    throw new Error("golden-echo mode needs --fixtures");
  }
  return cfg;
}
