"""Simultaneous confidence bounds compatible with the graphical test decisions.

The lower bound for a rejected hypothesis is clamped at 0 (unless every
hypothesis is rejected, in which case the level is redistributed via the
exhaustion weights), and the bound for a non-rejected hypothesis is the
p-value inverse at the level the hypothesis holds after replaying all
rejections. Sign patterns therefore reproduce the test decisions exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph import GraphSpec, replay_rejections

NEG_INF = float("-inf")


@dataclass(frozen=True)
class CompatibleBounds:
    """Lower confidence bounds with their variant tag ('r', 's', or 'c')."""

    variant: str
    lower: np.ndarray
    rejected: frozenset


def _exhaustion(graph: GraphSpec) -> np.ndarray:
    if graph.exhaustion_weights is None:
        raise ValidationError(
            "all hypotheses rejected: the design needs exhaustion weights "
            "summing to 1 to compute confidence bounds"
        )
    return graph.exhaustion_weights


def bounds_for_rejections(
    graph: GraphSpec,
    rejected,
    stages,
    family,
    lam: str,
    alpha: float,
) -> np.ndarray:
    """Lower bounds for a given rejection set and per-hypothesis data stages.

    Args:
        rejected: the rejection set of the test being inverted.
        stages: vector of 0-based stages k_j* at which each hypothesis is
            evaluated.
        lam: 'r' for repeated, 's' for sequential p-value inversion.
    """
    rejected = set(rejected)
    m = graph.m
    stages = np.asarray(stages, dtype=int)
    lower = np.empty(m)
    if len(rejected) == m:
        ew = _exhaustion(graph)
        for j in range(m):
            lower[j] = max(0.0, family.inverse(j, stages[j], lam, ew[j] * alpha))
        return lower
    weights = replay_rejections(graph, rejected).weights
    for j in range(m):
        if j in rejected:
            lower[j] = 0.0
        else:
            lower[j] = family.inverse(j, stages[j], lam, weights[j] * alpha)
    return lower


def compatible_bounds(graph: GraphSpec, state, family, lam: str, alpha: float, stage=None) -> CompatibleBounds:
    """Stagewise compatible bounds for a trial run with Algorithm-1 decisions.

    Args:
        state: TrialState after at least one completed stage.
        stage: 1-based completed stage to evaluate at (default: latest).
    """
    if stage is None:
        stage = state.stage
    if not 1 <= stage <= state.stage:
        raise ValidationError(f"stage {stage} not yet analyzed")
    rejected = set(state.history[stage - 1])
    stages = [state.last_data_stage(j, stage - 1) for j in range(graph.m)]
    lower = bounds_for_rejections(graph, rejected, stages, family, lam, alpha)
    return CompatibleBounds(variant=lam, lower=lower, rejected=frozenset(rejected))


def compatible_bounds_adjustment(
    graph: GraphSpec,
    R_s,
    R_c,
    taus,
    family,
    alpha: float,
) -> CompatibleBounds:
    """Lower bounds compatible with the efficient-multiple-adjustment test.

    Bounds are 0 for hypotheses kept rejected (variant 'c') unless the
    sequential run rejected everything, in which case the exhaustion weights
    apply; every other hypothesis is retested at the level it would hold with
    all other sequential rejections replayed.
    """
    R_s, R_c = set(R_s), set(R_c)
    if not R_c <= R_s:
        raise ValidationError("adjusted rejections must be a subset of the sequential ones")
    m = graph.m
    taus = np.asarray(taus, dtype=int)
    lower = np.empty(m)
    all_rejected = len(R_s) == m
    ew = _exhaustion(graph) if all_rejected else None
    for j in range(m):
        if j in R_c:
            if all_rejected:
                lower[j] = max(0.0, family.inverse(j, taus[j], "r", ew[j] * alpha))
            else:
                lower[j] = 0.0
        else:
            level = replay_rejections(graph, R_s - {j}).weights[j] * alpha
            lower[j] = family.inverse(j, taus[j], "r", level)
    return CompatibleBounds(variant="c", lower=lower, rejected=frozenset(R_c))
