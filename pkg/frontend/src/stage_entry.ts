/** Per-stage observation entry and the results panel for a stage snapshot. */

import type { Bound, DesignDoc, SessionView, StageSnapshot } from "./types.js";
import { hypothesisNames } from "./validate.js";

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

/** Display formatting for a bound; null means no informative bound. */
export function formatBound(x: Bound): string {
  if (x === null) return "−∞";
  return x.toFixed(4);
}

/**
 * Render the observation-entry form for the next stage.
 *
 * Hypotheses whose data collection has stopped are grayed out and their
 * inputs disabled; the service would reject observations for them.
 */
export function renderStageEntry(view: SessionView): string {
  const names = hypothesisNames(view.design);
  const stage = view.stage + 1;
  if (view.stage >= view.n_stages) {
    return `<p class="done">All ${view.n_stages} stages analyzed.</p>`;
  }
  const t = view.design.information_fractions[view.stage];
  const parts: string[] = [
    `<form id="stage-form" class="stage-entry" data-stage="${stage}">`,
    `<h2>Stage ${stage} of ${view.n_stages} observations</h2>`,
    `<table><thead><tr><th>hypothesis</th><th>estimate</th><th>std. error</th><th>info fraction</th></tr></thead><tbody>`,
  ];
  names.forEach((name, j) => {
    const active = view.collecting.includes(j);
    const cls = active ? "active" : "stopped";
    const dis = active ? "" : " disabled";
    parts.push(
      `<tr class="${cls}" data-hypothesis="${esc(name)}">`,
      `<td>${esc(name)}${active ? "" : ' <span class="badge stopped-badge">stopped</span>'}</td>`,
      `<td><input name="est-${j}" inputmode="decimal"${dis}/></td>`,
      `<td><input name="se-${j}" inputmode="decimal"${dis}/></td>`,
      `<td><input name="frac-${j}" value="${t}"${dis}/></td>`,
      `</tr>`,
    );
  });
  parts.push("</tbody></table>", `<button type="submit" id="submit-stage">Analyze stage ${stage}</button>`, "</form>");
  return parts.join("");
}

function rejectedList(names: string[], idx: number[]): string {
  if (idx.length === 0) return "∅";
  return idx.map((j) => esc(names[j])).join(", ");
}

function gapBadge(snapshot: StageSnapshot, lam: "r" | "s", epsilon: number): string {
  const info = snapshot.informative[lam];
  const gap = info.gap;
  const shown = gap === null ? "−∞" : gap.toExponential(2);
  const warn = info.timed_out || (gap !== null && gap > epsilon);
  return `<span class="badge gap-badge${warn ? " warn" : " ok"}">gap ${shown}${info.timed_out ? " (timed out)" : ""}</span>`;
}

/**
 * Render the results panel for one analyzed stage: rejection sets for the
 * stop-on-reject, continue-all, and retest readings, compatible bounds,
 * and informative brackets with an accuracy badge.
 */
export function renderStageResults(design: DesignDoc, snapshot: StageSnapshot): string {
  const names = hypothesisNames(design);
  const epsilon = design.epsilon ?? 1e-6;
  const parts: string[] = [`<section class="stage-results" data-stage="${snapshot.stage}">`];
  parts.push(`<h2>Stage ${snapshot.stage} results</h2>`);
  parts.push(
    `<dl class="rejections">`,
    `<dt>Rejected (stop on reject)</dt><dd id="rejected-r">${rejectedList(names, snapshot.rejected.r)}</dd>`,
    `<dt>Rejected (all continue)</dt><dd id="rejected-s">${rejectedList(names, snapshot.rejected.s)}</dd>`,
    `<dt>Rejected (final retest)</dt><dd id="rejected-c">${rejectedList(names, snapshot.rejected.c)}</dd>`,
    `</dl>`,
  );
  parts.push(
    `<table class="bounds"><thead><tr><th>hypothesis</th>`,
    `<th>compatible r</th><th>compatible s</th><th>compatible retest</th>`,
    `<th>informative r ${gapBadge(snapshot, "r", epsilon)}</th>`,
    `<th>informative s ${gapBadge(snapshot, "s", epsilon)}</th>`,
    `<th>informative retest</th></tr></thead><tbody>`,
  );
  names.forEach((name, j) => {
    // data_stages holds 0-based last data stages; snapshot.stage is 1-based.
    const active = snapshot.data_stages[j] + 1 >= snapshot.stage;
    const infoR = snapshot.informative.r;
    const infoS = snapshot.informative.s;
    parts.push(
      `<tr class="${active ? "active" : "stopped"}" data-hypothesis="${esc(name)}">`,
      `<td>${esc(name)}</td>`,
      `<td>${formatBound(snapshot.compatible.r.lower[j])}</td>`,
      `<td>${formatBound(snapshot.compatible.s.lower[j])}</td>`,
      `<td>${formatBound(snapshot.compatible.c.lower[j])}</td>`,
      `<td>[${formatBound(infoR.lower[j])}, ${formatBound(infoR.upper[j])}]</td>`,
      `<td>[${formatBound(infoS.lower[j])}, ${formatBound(infoS.upper[j])}]</td>`,
      `<td>${formatBound(snapshot.informative.c.lower[j])}</td>`,
      `</tr>`,
    );
  });
  parts.push("</tbody></table></section>");
  return parts.join("");
}

/**
 * Tiny inline sparkline of a bound trajectory across analyzed stages.
 * Null bounds are drawn as gaps.
 */
export function renderSparkline(values: Bound[], width = 80, height = 20): string {
  const finite = values.filter((v): v is number => v !== null);
  if (finite.length === 0) return `<svg class="sparkline" viewBox="0 0 ${width} ${height}"></svg>`;
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  const span = hi - lo || 1;
  const pts = values
    .map((v, i) => {
      if (v === null) return null;
      const x = values.length === 1 ? width / 2 : (i / (values.length - 1)) * (width - 4) + 2;
      const y = height - 3 - ((v - lo) / span) * (height - 6);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .filter((p): p is string => p !== null);
  return `<svg class="sparkline" viewBox="0 0 ${width} ${height}"><polyline points="${pts.join(" ")}" fill="none" stroke="#2b5f9e" stroke-width="1.5"/></svg>`;
}
