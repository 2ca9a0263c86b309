"""Median-conservative effect estimators.

Each estimator reruns one of the lower-bound constructions with the overall
level raised to 0.5: only the initial local levels are rescaled; transition
matrix, p-value families, and frozen data stages stay as they were in the
level-alpha analysis. The resulting bound vector is the estimate; its median
sits at or below the true effect componentwise.

Variants:
    'a': compatible bounds of the single-stage graph test (lam 'r' or 's').
    'b': compatible bounds of the retested ('adjusted') rejection set.
    'c': informative bounds from the bracketed fixed-point iteration.
    'd': informative bounds retested via the weight-adjustment equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batch import (
    BatchPValues,
    batch_adjust_test,
    batch_compatible,
    batch_compatible_adjustment,
    batch_isci_adjustment,
    batch_primary,
    batch_reject,
)
from .compatible import bounds_for_rejections, compatible_bounds_adjustment
from .engine import efficient_multiple_adjustment
from .errors import ValidationError
from .graph import GraphSpec, run_single_stage_test
from .informative import IterationConfig, isci_efficient_adjustment, primary_algorithm

ALPHA_M = 0.5
VARIANTS = ("a", "b", "c", "d")
NO_ESTIMATE = "no informative estimate"


@dataclass(frozen=True)
class EstimatorResult:
    """Estimates with bookkeeping about degenerate components.

    Attributes:
        variant: one of 'a', 'b', 'c', 'd'.
        lam: p-value family used ('r' or 's'; 'r' for the retest variants).
        estimates: vector in R union {-inf}.
        stages: frozen 0-based data stage per hypothesis.
        degenerate: True where a variant-a/b estimate is stuck at 0 by the
            rejection clamp rather than located by inversion.
    """

    variant: str
    lam: str
    estimates: np.ndarray
    stages: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def describe(self, j: int) -> str:
        if np.isneginf(self.estimates[j]):
            return NO_ESTIMATE
        return f"{self.estimates[j]:.6g}"


def _single_stage_pvalues(family, stages, lam):
    return np.array(
        [
            family.repeated(j, stages[j]) if lam == "r" else family.sequential(j, stages[j])
            for j in range(len(stages))
        ]
    )


def median_estimators(
    variant: str,
    graph: GraphSpec,
    family,
    stages,
    lam: str = "s",
    cfg: IterationConfig | None = None,
) -> EstimatorResult:
    """Rerun the requested bound construction at overall level 0.5.

    Args:
        stages: frozen data stages k_j* from the level-alpha analysis.
        lam: p-value family for variants 'a'/'c' ('b'/'d' fix it by design).
        cfg: iteration knobs, required for the informative variants.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if lam not in ("r", "s"):
        raise ValidationError(f"lambda must be 'r' or 's', got {lam!r}")
    stages = np.asarray(stages, dtype=int)
    m = graph.m
    if stages.shape != (m,):
        raise ValidationError("stages must have one entry per hypothesis")
    degenerate = np.zeros(m, dtype=bool)

    if variant == "a":
        p = _single_stage_pvalues(family, stages, lam)
        rejected, _ = run_single_stage_test(graph, p, ALPHA_M)
        est = bounds_for_rejections(graph, rejected, stages, family, lam, ALPHA_M)
        if len(rejected) == m:
            degenerate = est == 0.0
        else:
            degenerate[sorted(rejected)] = True
    elif variant == "b":
        p_s = _single_stage_pvalues(family, stages, "s")
        r_s, _ = run_single_stage_test(graph, p_s, ALPHA_M)
        p_r = _single_stage_pvalues(family, stages, "r")
        r_c = efficient_multiple_adjustment(graph, r_s, stages, p_r, ALPHA_M)
        est = compatible_bounds_adjustment(graph, r_s, r_c, stages, family, ALPHA_M).lower
        lam = "r"
        if len(r_s) == m:
            degenerate = np.array([j in r_c and est[j] == 0.0 for j in range(m)])
        else:
            degenerate[sorted(r_c)] = True
    else:
        if cfg is None:
            raise ValidationError("informative variants need an IterationConfig")
        if variant == "c":
            est = primary_algorithm(graph, family, stages, lam, ALPHA_M, cfg).lower
        else:
            lower_s = primary_algorithm(graph, family, stages, "s", ALPHA_M, cfg).lower
            est, _ = isci_efficient_adjustment(graph, family, lower_s, stages, ALPHA_M, cfg.q)
            lam = "r"
    return EstimatorResult(
        variant=variant, lam=lam, estimates=est, stages=stages, degenerate=degenerate
    )


def batch_median_estimates(
    variant: str,
    graph: GraphSpec,
    bp: BatchPValues,
    stages,
    lam: str = "s",
    cfg: IterationConfig | None = None,
) -> np.ndarray:
    """Vectorized counterpart of :func:`median_estimators` (estimates only)."""
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    R, m = bp.n_reps, bp.m
    stages = np.asarray(stages, dtype=int)
    zeros = np.zeros((R, m))

    def single_stage(lam_):
        w = np.broadcast_to(graph.weights, (R, m)).copy()
        g = np.broadcast_to(graph.transition, (R, m, m)).copy()
        p = np.exp(bp.log_p(lam_, stages, zeros))
        return batch_reject(w, g, p, ALPHA_M, np.zeros((R, m), dtype=bool))

    if variant == "a":
        rejected = single_stage(lam)
        return batch_compatible(graph, rejected, stages, bp, lam, ALPHA_M)
    if variant == "b":
        r_s = single_stage("s")
        r_c = batch_adjust_test(graph, r_s, stages, ALPHA_M, bp)
        return batch_compatible_adjustment(graph, r_s, r_c, stages, bp, ALPHA_M)
    if cfg is None:
        raise ValidationError("informative variants need an IterationConfig")
    if variant == "c":
        lower, _, _, _ = batch_primary(graph, bp, stages, lam, ALPHA_M, cfg)
        return lower
    lower_s, _, _, _ = batch_primary(graph, bp, stages, "s", ALPHA_M, cfg)
    return batch_isci_adjustment(graph, bp, lower_s, stages, ALPHA_M, cfg.q)
