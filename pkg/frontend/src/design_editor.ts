/** Design entry form: textarea-per-field editing with inline validation. */

import type { DesignIssue } from "./validate.js";
import { validateDesign } from "./validate.js";
import { renderGraphPreview } from "./graph_preview.js";
import type { DesignDoc } from "./types.js";

export interface EditorState {
  /** Raw field texts as typed by the user. */
  fields: Record<string, string>;
}

const FIELD_HELP: Record<string, string> = {
  alpha: "overall one-sided level, e.g. 0.025",
  hypotheses: "optional names, e.g. H1, H2, H3, H4",
  initial_weights: "e.g. 1, 0, 0, 0",
  transition: "one row per line, e.g. 0 1 0 0",
  exhaustion_weights: "optional; used once every hypothesis is rejected",
  stages: "number of analyses, e.g. 2",
  spending: "pocock_like | obf_like | power:rho (one entry, or one per hypothesis)",
  information_fractions: "strictly increasing to 1, e.g. 0.5, 1",
  q: "informative-bound weight drift in (0, 1], default 0.3",
  epsilon: "bracket accuracy target, default 1e-6",
  delta0: "optional first step size of the bracket iteration",
};

export const FIELD_ORDER = Object.keys(FIELD_HELP);

export function emptyEditorState(): EditorState {
  const fields: Record<string, string> = {};
  for (const k of FIELD_ORDER) fields[k] = "";
  return { fields };
}

function splitList(text: string): string[] {
  return text
    .split(/[,\s]+/)
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}

function parseNumberList(text: string): number[] {
  return splitList(text).map((s) => Number(s));
}

function parseSpendingEntry(token: string): Record<string, unknown> {
  const [kind, rho] = token.split(":");
  const entry: Record<string, unknown> = { kind };
  if (rho !== undefined) entry["rho"] = Number(rho);
  return entry;
}

/**
 * Convert the raw field texts into a design document.
 *
 * Unparseable numbers become NaN so that validateDesign reports them on
 * the right field rather than this function throwing.
 */
export function parseEditorState(state: EditorState): Record<string, unknown> {
  const f = state.fields;
  const doc: Record<string, unknown> = {};
  if (f["alpha"]?.trim()) doc["alpha"] = Number(f["alpha"]);
  if (f["hypotheses"]?.trim()) doc["hypotheses"] = splitList(f["hypotheses"]);
  if (f["initial_weights"]?.trim()) doc["initial_weights"] = parseNumberList(f["initial_weights"]);
  if (f["transition"]?.trim()) {
    doc["transition"] = f["transition"]
      .split(/\n+/)
      .map((line) => line.trim())
      .filter((line) => line.length > 0)
      .map(parseNumberList);
  }
  if (f["exhaustion_weights"]?.trim()) doc["exhaustion_weights"] = parseNumberList(f["exhaustion_weights"]);
  if (f["stages"]?.trim()) doc["stages"] = Number(f["stages"]);
  if (f["spending"]?.trim()) {
    const entries = splitList(f["spending"]).map(parseSpendingEntry);
    doc["spending"] = entries.length === 1 ? entries[0] : entries;
  }
  if (f["information_fractions"]?.trim()) doc["information_fractions"] = parseNumberList(f["information_fractions"]);
  for (const k of ["q", "epsilon", "delta0"]) {
    if (f[k]?.trim()) doc[k] = Number(f[k]);
  }
  return doc;
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function issuesFor(issues: DesignIssue[], field: string): DesignIssue[] {
  return issues.filter((i) => i.field === field);
}

/**
 * Render the editor form. Fields with validation issues get the
 * "invalid" class; transition rows named in an issue get data-invalid-row
 * markers so the app can highlight them.
 */
export function renderDesignEditor(state: EditorState, issues: DesignIssue[]): string {
  const parts: string[] = ['<form id="design-form" class="design-editor">'];
  for (const key of FIELD_ORDER) {
    const fieldIssues = issuesFor(issues, key);
    const invalid = fieldIssues.length > 0;
    const rows = [...new Set(fieldIssues.filter((i) => i.row !== undefined).map((i) => i.row))];
    const tag = key === "transition" ? "textarea" : "input";
    const cls = `field${invalid ? " invalid" : ""}`;
    parts.push(`<label class="${cls}" data-field="${key}"${rows.length ? ` data-invalid-rows="${rows.join(",")}"` : ""}>`);
    parts.push(`<span class="field-name">${key}</span>`);
    const value = esc(state.fields[key] ?? "");
    if (tag === "textarea") {
      parts.push(`<textarea name="${key}" rows="4">${value}</textarea>`);
    } else {
      parts.push(`<input name="${key}" value="${value}"/>`);
    }
    parts.push(`<span class="hint">${esc(FIELD_HELP[key])}</span>`);
    for (const issue of fieldIssues) {
      parts.push(`<span class="error">${esc(issue.message)}</span>`);
    }
    parts.push("</label>");
  }
  const unknown = issues.filter((i) => !FIELD_ORDER.includes(i.field));
  for (const issue of unknown) {
    parts.push(`<span class="error">${esc(issue.message)}</span>`);
  }
  const blocked = issues.length > 0 || !state.fields["alpha"]?.trim();
  parts.push(`<button type="submit" id="create-session"${blocked ? " disabled" : ""}>Start session</button>`);
  parts.push("</form>");
  return parts.join("");
}

/** Editor view: form plus a live graph preview when the design parses clean. */
export function renderEditorView(state: EditorState): string {
  const doc = parseEditorState(state);
  const hasInput = Object.keys(doc).length > 0;
  const issues = hasInput ? validateDesign(doc) : [{ field: "", message: "enter a design" }];
  const form = renderDesignEditor(state, hasInput ? issues : []);
  const preview = issues.length === 0 ? renderGraphPreview(doc as unknown as DesignDoc) : "";
  return `<section class="editor-pane">${form}</section><section class="preview-pane">${preview}</section>`;
}
