"""Stagewise execution of graphical group sequential tests.

Runs the trial state machine: at each stage, every not-yet-rejected
hypothesis is tested with its repeated (lambda='r') or sequential
(lambda='s') p-value at its last data stage against its current graph
level; rejections redistribute level until no further rejection is
possible. A follow-up adjustment retests each sequentially rejected
hypothesis with its repeated p-value at the level it would receive if all
other sequential rejections were kept.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NotCollecting, StageOverrun, ValidationError
from .graph import GraphSpec, GraphState, initial_state, replay_rejections, update_after_rejection


@dataclass
class TrialState:
    """Bookkeeping for one running trial.

    Attributes:
        m: number of hypotheses.
        n_stages: planned number of analyses K.
        stage: number of completed analyses.
        collecting: indices with ongoing data collection (D).
        rejected: cumulative rejection set.
        taus: final data stage (0-based) per stopped hypothesis.
        history: rejection set snapshot after each completed stage.
    """

    m: int
    n_stages: int
    stage: int = 0
    collecting: set = field(default_factory=set)
    rejected: set = field(default_factory=set)
    taus: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def active(self) -> set:
        """Indices not yet rejected (I)."""
        return set(range(self.m)) - self.rejected

    def last_data_stage(self, j: int, k: int | None = None) -> int:
        """k_j*: the last stage (0-based) with data for j, as of stage k."""
        if k is None:
            k = max(self.stage - 1, 0)
        return min(self.taus.get(j, self.n_stages - 1), k)

    def final_data_stages(self) -> np.ndarray:
        """tau_j* vector once the trial has ended."""
        return np.array([self.last_data_stage(j) for j in range(self.m)])


def new_trial(graph: GraphSpec, n_stages: int) -> TrialState:
    return TrialState(m=graph.m, n_stages=n_stages, collecting=set(range(graph.m)))


def advance_stage(
    state: TrialState,
    graph_state: GraphState,
    family,
    lam: str,
    alpha: float,
    allow_collect_after_reject: bool = False,
):
    """Run the stage-``state.stage`` analysis and apply all possible rejections.

    Returns:
        (state, graph_state, newly_rejected) with the stage counter advanced.

    Raises:
        StageOverrun: all planned analyses already ran.
        ValidationError: lambda='r' with data still being collected for a
            rejected hypothesis (backward-inconsistent; override with
            ``allow_collect_after_reject``).
    """
    if lam not in ("r", "s"):
        raise ValidationError(f"lambda must be 'r' or 's', got {lam!r}")
    k = state.stage
    if k >= state.n_stages:
        raise StageOverrun(f"all {state.n_stages} stages already analyzed")
    if lam == "r" and state.rejected & state.collecting:
        if not allow_collect_after_reject:
            raise ValidationError(
                "lambda='r' requires stopping data collection for rejected "
                "hypotheses (see stop_on_reject)"
            )
        warnings.warn(
            "continuing data collection for rejected hypotheses under "
            "lambda='r' is backward-inconsistent; results are for research "
            "use only",
            stacklevel=2,
        )

    active = sorted(state.active)
    pvals = {}
    for j in active:
        kj = state.last_data_stage(j, k)
        pvals[j] = family.repeated(j, kj) if lam == "r" else family.sequential(j, kj)

    newly = set()
    while True:
        eligible = [
            j
            for j in sorted(graph_state.active & state.active - newly)
            if pvals[j] <= graph_state.weights[j] * alpha
        ]
        if not eligible:
            break
        j = eligible[0]
        graph_state = update_after_rejection(graph_state, j)
        newly.add(j)

    state = TrialState(
        m=state.m,
        n_stages=state.n_stages,
        stage=k + 1,
        collecting=set(state.collecting),
        rejected=state.rejected | newly,
        taus=dict(state.taus),
        history=state.history + [frozenset(state.rejected | newly)],
    )
    return state, graph_state, frozenset(newly)


def apply_stop_decisions(
    state: TrialState,
    stops,
    lam: str = "s",
    stop_on_reject: bool = True,
) -> TrialState:
    """Stop data collection for the given indices after the current stage.

    For lambda='r' with ``stop_on_reject`` (the default), newly rejected
    hypotheses are stopped automatically so that rejected hypotheses never
    keep collecting data.

    Raises:
        NotCollecting: a stop names a hypothesis that already stopped.
    """
    stops = set(stops)
    bad = stops - state.collecting
    if bad:
        raise NotCollecting(f"data collection already ended for {sorted(bad)}")
    if lam == "r" and stop_on_reject:
        stops = stops | (state.rejected & state.collecting)
    if not stops:
        return state
    k_last = state.stage - 1
    taus = dict(state.taus)
    for j in stops:
        taus[j] = k_last
    return TrialState(
        m=state.m,
        n_stages=state.n_stages,
        stage=state.stage,
        collecting=state.collecting - stops,
        rejected=set(state.rejected),
        taus=taus,
        history=list(state.history),
    )


def run_trial(
    graph: GraphSpec,
    family,
    alpha: float,
    lam: str,
    n_stages: int,
    stop_rule=None,
    stop_on_reject: bool = True,
    allow_collect_after_reject: bool = False,
):
    """Execute all stages of Algorithm-style trial monitoring.

    Args:
        stop_rule: optional callable ``(state, newly_rejected, stage) ->
            indices`` of additional hypotheses to stop after each stage.

    Returns:
        (state, graph_state): final trial bookkeeping and graph state.
    """
    state = new_trial(graph, n_stages)
    graph_state = initial_state(graph)
    for k in range(n_stages):
        state, graph_state, newly = advance_stage(
            state, graph_state, family, lam, alpha, allow_collect_after_reject
        )
        extra = set(stop_rule(state, newly, k)) & state.collecting if stop_rule else set()
        state = apply_stop_decisions(state, extra, lam=lam, stop_on_reject=stop_on_reject)
        if not state.collecting:
            break
    return state, graph_state


def efficient_multiple_adjustment(graph: GraphSpec, R_s, taus, repeated_p, alpha: float):
    """Retest each sequentially rejected hypothesis at its closed-test level.

    Args:
        graph: the validated graphical test.
        R_s: rejection set of the sequential (lambda='s') run.
        taus: final data stage per hypothesis (bookkeeping; the p-values
            below must already be evaluated there).
        repeated_p: vector of repeated p-values p_{j, tau_j} at shift 0.

    Returns:
        frozenset R_c of hypotheses that stay rejected; always a subset of R_s.
    """
    R_s = set(R_s)
    repeated_p = np.asarray(repeated_p, dtype=float)
    if repeated_p.shape != (graph.m,):
        raise ValidationError("repeated_p must have one entry per hypothesis")
    out = set()
    for j in sorted(R_s):
        level = replay_rejections(graph, R_s - {j}).weights[j] * alpha
        if repeated_p[j] <= level:
            out.add(j)
    return frozenset(out)
