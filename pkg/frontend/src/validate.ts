/** Client-side design validation mirroring the service's rules. */

import type { DesignDoc } from "./types.js";

const DESIGN_KEYS = new Set([
  "alpha",
  "hypotheses",
  "initial_weights",
  "transition",
  "exhaustion_weights",
  "stages",
  "spending",
  "information_fractions",
  "q",
  "epsilon",
  "delta0",
]);

const REQUIRED_KEYS = [
  "alpha",
  "initial_weights",
  "transition",
  "stages",
  "spending",
  "information_fractions",
];

const SPENDING_KINDS = new Set(["pocock_like", "obf_like", "power"]);

export interface DesignIssue {
  /** Design key the problem belongs to, or "" for document-level issues. */
  field: string;
  /** Row index for matrix/vector issues, if applicable. */
  row?: number;
  message: string;
}

const TOL = 1e-9;

function isNum(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function numVector(x: unknown): x is number[] {
  return Array.isArray(x) && x.length > 0 && x.every(isNum);
}

function checkSpending(doc: Record<string, unknown>, issues: DesignIssue[]): void {
  const raw = doc["spending"];
  const entries = Array.isArray(raw) ? raw : [raw];
  entries.forEach((entry, i) => {
    const row = Array.isArray(raw) ? i : undefined;
    if (typeof entry !== "object" || entry === null || Array.isArray(entry)) {
      issues.push({ field: "spending", row, message: "spending must be a {kind, rho?} object" });
      return;
    }
    const e = entry as Record<string, unknown>;
    const kind = e["kind"];
    if (typeof kind !== "string" || !SPENDING_KINDS.has(kind)) {
      issues.push({
        field: "spending",
        row,
        message: `unknown spending kind: ${JSON.stringify(kind)}`,
      });
      return;
    }
    if (kind === "power") {
      if (!isNum(e["rho"]) || (e["rho"] as number) <= 0) {
        issues.push({ field: "spending", row, message: "power spending requires rho > 0" });
      }
    } else if ("rho" in e && e["rho"] !== undefined) {
      issues.push({ field: "spending", row, message: `${kind} spending takes no rho` });
    }
    for (const k of Object.keys(e)) {
      if (k !== "kind" && k !== "rho") {
        issues.push({ field: "spending", row, message: `unknown spending key: ${k}` });
      }
    }
  });
  if (Array.isArray(raw)) {
    const w = doc["initial_weights"];
    if (numVector(w) && raw.length !== w.length) {
      issues.push({
        field: "spending",
        message: `spending list has ${raw.length} entries for ${w.length} hypotheses`,
      });
    }
  }
}

/**
 * Validate a raw design document.
 *
 * Returns a list of issues; an empty list means the document is a
 * structurally valid design the service will accept.
 */
export function validateDesign(doc: Record<string, unknown>): DesignIssue[] {
  const issues: DesignIssue[] = [];
  for (const key of Object.keys(doc)) {
    if (!DESIGN_KEYS.has(key)) {
      issues.push({ field: key, message: `unknown design key: ${key}` });
    }
  }
  for (const key of REQUIRED_KEYS) {
    if (!(key in doc) || doc[key] === undefined || doc[key] === null) {
      issues.push({ field: key, message: `missing required key: ${key}` });
    }
  }
  if (issues.some((i) => i.message.startsWith("missing"))) return issues;

  const alpha = doc["alpha"];
  if (!isNum(alpha) || alpha <= 0 || alpha >= 1) {
    issues.push({ field: "alpha", message: "alpha must be a number in (0, 1)" });
  }

  const w = doc["initial_weights"];
  let m = 0;
  if (!numVector(w)) {
    issues.push({ field: "initial_weights", message: "initial_weights must be a numeric vector" });
  } else {
    m = w.length;
    if (w.some((x) => x < 0)) {
      issues.push({ field: "initial_weights", message: "weights must be non-negative" });
    }
    const s = w.reduce((a, b) => a + b, 0);
    if (s > 1 + TOL) {
      issues.push({ field: "initial_weights", message: `weights sum to ${s}, must be <= 1` });
    }
  }

  const g = doc["transition"];
  if (!Array.isArray(g) || g.length !== m || !g.every(numVector)) {
    issues.push({ field: "transition", message: `transition must be a ${m}x${m} numeric matrix` });
  } else {
    g.forEach((rowVals: number[], i: number) => {
      if (rowVals.length !== m) {
        issues.push({ field: "transition", row: i, message: `row ${i + 1} has length ${rowVals.length}, expected ${m}` });
        return;
      }
      if (rowVals.some((x) => x < 0)) {
        issues.push({ field: "transition", row: i, message: `row ${i + 1} has negative entries` });
      }
      if (Math.abs(rowVals[i]) > TOL) {
        issues.push({ field: "transition", row: i, message: `diagonal entry ${i + 1} must be 0` });
      }
      const s = rowVals.reduce((a, b) => a + b, 0);
      if (s > 1 + TOL) {
        issues.push({ field: "transition", row: i, message: `row ${i + 1} sums to ${s}, must be <= 1` });
      }
    });
  }

  const ew = doc["exhaustion_weights"];
  if (ew !== undefined && ew !== null) {
    if (!numVector(ew) || ew.length !== m) {
      issues.push({ field: "exhaustion_weights", message: `exhaustion_weights must be a length-${m} numeric vector` });
    } else {
      if (ew.some((x) => x < 0)) {
        issues.push({ field: "exhaustion_weights", message: "weights must be non-negative" });
      }
      const s = ew.reduce((a, b) => a + b, 0);
      if (s > 1 + TOL) {
        issues.push({ field: "exhaustion_weights", message: `weights sum to ${s}, must be <= 1` });
      }
    }
  }

  const names = doc["hypotheses"];
  if (names !== undefined && names !== null) {
    if (!Array.isArray(names) || names.length !== m || !names.every((n) => typeof n === "string" && n.length > 0)) {
      issues.push({ field: "hypotheses", message: `hypotheses must be ${m} non-empty names` });
    } else if (new Set(names).size !== m) {
      issues.push({ field: "hypotheses", message: "hypothesis names must be unique" });
    }
  }

  const stages = doc["stages"];
  if (!isNum(stages) || !Number.isInteger(stages) || stages < 1) {
    issues.push({ field: "stages", message: "stages must be a positive integer" });
  }

  const t = doc["information_fractions"];
  if (!numVector(t)) {
    issues.push({ field: "information_fractions", message: "information_fractions must be a numeric vector" });
  } else {
    if (isNum(stages) && t.length !== stages) {
      issues.push({ field: "information_fractions", message: `expected ${stages} fractions, got ${t.length}` });
    }
    if (t[0] <= 0 || t.some((x, i) => i > 0 && x <= t[i - 1])) {
      issues.push({ field: "information_fractions", message: "fractions must be strictly increasing and positive" });
    }
    if (Math.abs(t[t.length - 1] - 1) > TOL) {
      issues.push({ field: "information_fractions", message: "final fraction must equal 1" });
    }
  }

  checkSpending(doc, issues);

  const q = doc["q"];
  if (q !== undefined && q !== null && (!isNum(q) || q <= 0 || q > 1)) {
    issues.push({ field: "q", message: "q must be in (0, 1]" });
  }
  const eps = doc["epsilon"];
  if (eps !== undefined && eps !== null && (!isNum(eps) || eps <= 0)) {
    issues.push({ field: "epsilon", message: "epsilon must be positive" });
  }
  const d0 = doc["delta0"];
  if (d0 !== undefined && d0 !== null && (!isNum(d0) || d0 <= 0)) {
    issues.push({ field: "delta0", message: "delta0 must be positive" });
  }
  return issues;
}

/** Hypothesis display names: explicit list or H1..Hm. */
export function hypothesisNames(design: DesignDoc): string[] {
  if (design.hypotheses && design.hypotheses.length > 0) return design.hypotheses;
  return design.initial_weights.map((_, i) => `H${i + 1}`);
}
