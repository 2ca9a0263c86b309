/** JSON shapes mirrored from the monitoring service; no local business logic. */

export interface SpendingDoc {
  kind: string;
  rho?: number;
}

export interface DesignDoc {
  alpha: number;
  hypotheses?: string[];
  initial_weights: number[];
  transition: number[][];
  exhaustion_weights?: number[];
  stages: number;
  spending: SpendingDoc | SpendingDoc[];
  information_fractions: number[];
  q?: number;
  epsilon?: number;
  delta0?: number;
}

export interface SessionView {
  session_id: string;
  design: DesignDoc;
  stage: number;
  n_stages: number;
  collecting: number[];
  taus: Record<string, number>;
  snapshots: number[];
}

export interface Observation {
  hypothesis: string;
  estimate: number;
  std_error: number;
  info_fraction: number;
}

/** A bound value; null encodes "no informative bound" (-infinity). */
export type Bound = number | null;

export interface CompatibleSnapshot {
  lower: Bound[];
  rejected: number[];
}

export interface InformativeSnapshot {
  lower: Bound[];
  upper: Bound[];
  gap: Bound;
  converged: boolean;
  timed_out: boolean;
  rejected: number[];
}

export interface StageSnapshot {
  stage: number;
  data_stages: number[];
  rejected: { r: number[]; s: number[]; c: number[] };
  compatible: { r: CompatibleSnapshot; s: CompatibleSnapshot; c: CompatibleSnapshot };
  informative: { r: InformativeSnapshot; s: InformativeSnapshot; c: CompatibleSnapshot };
  stop_on_reject_hint: number[];
}
