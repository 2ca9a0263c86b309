/** DOM wiring: single-page flow design editor -> stages -> decisions. */

import { MonitorClient, ApiError } from "./api.js";
import { emptyEditorState, parseEditorState, renderEditorView, FIELD_ORDER } from "./design_editor.js";
import { validateDesign } from "./validate.js";
import { renderStageEntry, renderStageResults } from "./stage_entry.js";
import { renderDecisionPanel, collectStops } from "./decision_panel.js";
import type { Observation, SessionView, StageSnapshot } from "./types.js";
import { hypothesisNames } from "./validate.js";

const client = new MonitorClient("");

interface AppState {
  view: SessionView | null;
  snapshots: StageSnapshot[];
  error: string;
}

const state: AppState = { view: null, snapshots: [], error: "" };
const editor = emptyEditorState();

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function showError(msg: string): void {
  state.error = msg;
  el("error-bar").textContent = msg;
  el("error-bar").className = msg ? "error-bar visible" : "error-bar";
}

function render(): void {
  const root = el("app");
  if (!state.view) {
    root.innerHTML = renderEditorView(editor);
    bindEditor();
    return;
  }
  const view = state.view;
  const parts: string[] = [`<h1>Session ${view.session_id}</h1>`];
  for (const snap of state.snapshots) {
    parts.push(renderStageResults(view.design, snap));
  }
  const last = state.snapshots[state.snapshots.length - 1];
  if (last && last.stage === view.stage && view.stage < view.n_stages) {
    parts.push(renderDecisionPanel(view.design, last, view.collecting, false));
  }
  parts.push(renderStageEntry(view));
  root.innerHTML = parts.join("");
  bindSession();
}

function bindEditor(): void {
  const form = document.getElementById("design-form") as HTMLFormElement | null;
  if (!form) return;
  form.querySelectorAll<HTMLInputElement | HTMLTextAreaElement>("input, textarea").forEach((input) => {
    input.addEventListener("change", () => {
      editor.fields[input.name] = input.value;
      render();
    });
  });
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void createSession();
  });
}

async function createSession(): Promise<void> {
  const doc = parseEditorState(editor);
  if (validateDesign(doc).length > 0) return;
  try {
    const { session_id } = await client.createSession(doc);
    await refresh(session_id);
    showError("");
  } catch (e) {
    showError(e instanceof ApiError ? e.detail : String(e));
  }
}

async function refresh(sid: string): Promise<void> {
  state.view = await client.getSession(sid);
  render();
}

function readObservations(form: HTMLFormElement, view: SessionView): Observation[] {
  const names = hypothesisNames(view.design);
  const obs: Observation[] = [];
  for (const j of view.collecting) {
    const est = (form.elements.namedItem(`est-${j}`) as HTMLInputElement).value;
    const se = (form.elements.namedItem(`se-${j}`) as HTMLInputElement).value;
    const frac = (form.elements.namedItem(`frac-${j}`) as HTMLInputElement).value;
    obs.push({
      hypothesis: names[j],
      estimate: Number(est),
      std_error: Number(se),
      info_fraction: Number(frac),
    });
  }
  return obs;
}

function bindSession(): void {
  const view = state.view;
  if (!view) return;
  const stageForm = document.getElementById("stage-form") as HTMLFormElement | null;
  if (stageForm) {
    stageForm.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void (async () => {
        try {
          const snap = await client.submitStage(view.session_id, readObservations(stageForm, view));
          state.snapshots.push(snap);
          await refresh(view.session_id);
          showError("");
        } catch (e) {
          showError(e instanceof ApiError ? e.detail : String(e));
        }
      })();
    });
  }
  const decisionForm = document.getElementById("decision-form") as HTMLFormElement | null;
  if (decisionForm) {
    decisionForm.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void (async () => {
        const checked: number[] = [];
        decisionForm.querySelectorAll<HTMLInputElement>("input[type=checkbox]").forEach((box, j) => {
          if (box.checked && !box.disabled) checked.push(j);
        });
        const stops = collectStops(view.design, view.collecting, checked);
        try {
          await client.applyDecisions(view.session_id, stops);
          await refresh(view.session_id);
          showError("");
        } catch (e) {
          showError(e instanceof ApiError ? e.detail : String(e));
        }
      })();
    });
  }
}

export function start(): void {
  for (const k of FIELD_ORDER) editor.fields[k] ??= "";
  render();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  start();
}
