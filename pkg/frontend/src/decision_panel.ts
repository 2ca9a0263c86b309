/** Stop-decision checkboxes committed to the service between stages. */

import type { DesignDoc, StageSnapshot } from "./types.js";
import { hypothesisNames } from "./validate.js";

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

/**
 * Render the decision panel after a stage analysis.
 *
 * `collecting` is the session view's list of hypotheses still collecting
 * data; the rest are shown checked and disabled. Hypotheses the
 * stop-on-reject reading just rejected are pre-checked with a hint:
 * stopping them keeps the stop-on-reject bounds valid going forward.
 */
export function renderDecisionPanel(
  design: DesignDoc,
  snapshot: StageSnapshot,
  collecting: number[],
  isFinalStage: boolean,
): string {
  const names = hypothesisNames(design);
  if (isFinalStage) {
    return `<section class="decision-panel"><p class="done">Final stage analyzed; no further decisions.</p></section>`;
  }
  const hint = new Set(snapshot.stop_on_reject_hint);
  const parts: string[] = [
    `<form id="decision-form" class="decision-panel" data-stage="${snapshot.stage}">`,
    `<h2>Stop decisions before stage ${snapshot.stage + 1}</h2>`,
  ];
  names.forEach((name, j) => {
    const stopped = !collecting.includes(j);
    const hinted = hint.has(j);
    const checked = stopped || hinted ? " checked" : "";
    const disabled = stopped ? " disabled" : "";
    parts.push(
      `<label class="decision${stopped ? " stopped" : ""}${hinted ? " hinted" : ""}" data-hypothesis="${esc(name)}">`,
      `<input type="checkbox" name="stop-${j}" value="${esc(name)}"${checked}${disabled}/>`,
      `<span>${esc(name)}</span>`,
      stopped ? '<span class="badge stopped-badge">already stopped</span>' : "",
      hinted && !stopped
        ? '<span class="badge hint-badge">rejected under stop-on-reject — stop to keep those bounds valid</span>'
        : "",
      `</label>`,
    );
  });
  parts.push('<button type="submit" id="commit-decisions">Commit decisions</button>', "</form>");
  return parts.join("");
}

/** Hypothesis names for newly checked boxes (already-stopped ones excluded). */
export function collectStops(design: DesignDoc, collecting: number[], checkedIndices: number[]): string[] {
  const names = hypothesisNames(design);
  return checkedIndices.filter((j) => collecting.includes(j)).map((j) => names[j]);
}
