"""Graphical multiple tests: weight graphs, rejection updates, and dual graphs.

A graphical test is given by initial node weights ``w`` (fractions of the
overall level) and a transition matrix ``g`` whose entry ``g[i, j]`` is the
fraction of node ``i``'s level passed to node ``j`` when ``i`` is rejected.
Dual graphs extend the node set with one shifted-hypothesis node per
hypothesis and drive the informative confidence-bound machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InactiveNode,
    InvalidTransition,
    InvalidWeight,
    NegativeWeight,
    RowSumExceeded,
    WeightSumExceeded,
)

SUM_TOL = 1e-12
CONSERVATION_TOL = 1e-10

# Exponent cap for q**x; beyond this the level underflows to an exact zero.
_MAX_SHIFT_EXPONENT = 500.0


@dataclass(frozen=True)
class GraphSpec:
    """A validated graphical multiple test.

    Attributes:
        weights: initial node weights, fractions of the overall level.
        transition: m x m transition matrix with zero diagonal, row sums <= 1.
        exhaustion_weights: weights used for the confidence bounds once every
            hypothesis is rejected; must sum to exactly 1.
        names: optional hypothesis names for reporting.
    """

    weights: np.ndarray
    transition: np.ndarray
    exhaustion_weights: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    @property
    def m(self) -> int:
        return self.weights.shape[0]


def validate_graph(
    weights,
    transition,
    exhaustion_weights=None,
    names=None,
) -> GraphSpec:
    """Check all structural invariants and return an immutable GraphSpec.

    Raises:
        NegativeWeight, WeightSumExceeded, RowSumExceeded, InvalidTransition,
        DimensionMismatch: on the corresponding violation.
    """
    w = np.asarray(weights, dtype=float).copy()
    g = np.asarray(transition, dtype=float).copy()
    if w.ndim != 1 or w.size == 0:
        raise DimensionMismatch("weights must be a non-empty 1-d vector")
    m = w.shape[0]
    if g.shape != (m, m):
        raise DimensionMismatch(f"transition must be {m}x{m}, got {g.shape}")
    if np.any(w < 0) or np.any(g < 0):
        raise NegativeWeight("weights and transition entries must be >= 0")
    if w.sum() > 1 + SUM_TOL:
        raise WeightSumExceeded(f"initial weights sum to {w.sum():.12g} > 1")
    rows = g.sum(axis=1)
    if np.any(rows > 1 + SUM_TOL):
        bad = int(np.argmax(rows))
        raise RowSumExceeded(f"row {bad} of transition sums to {rows[bad]:.12g} > 1")
    if np.any(np.abs(np.diag(g)) > 0):
        raise InvalidTransition("transition diagonal must be zero")
    ew = None
    if exhaustion_weights is not None:
        ew = np.asarray(exhaustion_weights, dtype=float).copy()
        if ew.shape != (m,):
            raise DimensionMismatch("exhaustion weights must match the number of hypotheses")
        if np.any(ew < 0):
            raise NegativeWeight("exhaustion weights must be >= 0")
        if abs(ew.sum() - 1.0) > SUM_TOL:
            raise WeightSumExceeded(f"exhaustion weights sum to {ew.sum():.12g}, need exactly 1")
        ew.flags.writeable = False
    elif abs(w.sum() - 1.0) <= SUM_TOL:
        ew = w.copy()
        ew.flags.writeable = False
    if names is not None:
        names = tuple(names)
        if len(names) != m:
            raise DimensionMismatch("names must match the number of hypotheses")
    w.flags.writeable = False
    g.flags.writeable = False
    return GraphSpec(weights=w, transition=g, exhaustion_weights=ew, names=names)


@dataclass(frozen=True)
class GraphState:
    """Current weights and transitions over the not-yet-rejected nodes."""

    active: frozenset
    weights: np.ndarray
    transition: np.ndarray


def initial_state(graph: GraphSpec) -> GraphState:
    return GraphState(
        active=frozenset(range(graph.m)),
        weights=graph.weights.copy(),
        transition=graph.transition.copy(),
    )


def update_after_rejection(state: GraphState, j: int) -> GraphState:
    """Remove node ``j`` and redistribute its weight along outgoing arrows."""
    if j not in state.active:
        raise InactiveNode(f"node {j} is not active")
    w = state.weights.copy()
    g = state.transition.copy()
    active = state.active - {j}
    idx = sorted(active)
    w[idx] = w[idx] + w[j] * g[j, idx]
    w[j] = 0.0

    gj_out = g[j, :].copy()
    gj_in = g[:, j].copy()
    new_g = np.zeros_like(g)
    for ell in idx:
        denom = 1.0 - gj_in[ell] * gj_out[ell]
        if denom <= 0:
            continue
        for i in idx:
            if i == ell:
                continue
            new_g[ell, i] = (g[ell, i] + gj_in[ell] * gj_out[i]) / denom
    return GraphState(active=frozenset(active), weights=w, transition=new_g)


def replay_rejections(graph: GraphSpec, rejected) -> GraphState:
    """Graph state after rejecting the given indices (order-invariant)."""
    state = initial_state(graph)
    for j in sorted(rejected):
        state = update_after_rejection(state, j)
    return state


def run_single_stage_test(graph: GraphSpec, pvalues, alpha: float):
    """Run the sequentially rejective graph test on one p-value vector.

    A p-value of 0 is rejectable even at a local level of 0 (comparison is
    ``p <= level``).

    Returns:
        (rejected, final_state): the rejected index set (frozenset) and the
        graph state after all rejections.
    """
    p = np.asarray(pvalues, dtype=float)
    if p.shape != (graph.m,):
        raise DimensionMismatch("p-value vector length must match the graph")
    if not 0 < alpha < 1:
        raise InvalidWeight("alpha must be in (0, 1)")
    state = initial_state(graph)
    rejected = set()
    for _ in range(graph.m):
        eligible = [j for j in sorted(state.active) if p[j] <= state.weights[j] * alpha]
        if not eligible:
            break
        j = eligible[0]
        state = update_after_rejection(state, j)
        rejected.add(j)
    return frozenset(rejected), state


@dataclass(frozen=True)
class DualGraph:
    """Augmented graph over original and shifted-hypothesis nodes.

    Nodes 0..m-1 are the original hypotheses (present only where the shift is
    positive); nodes m..2m-1 are the shifted hypotheses.
    """

    present: np.ndarray
    weights: np.ndarray
    transition: np.ndarray
    q: float
    mu: np.ndarray


def build_dual_graph(graph: GraphSpec, mu, q: float) -> DualGraph:
    """Construct the dual graph for shift vector ``mu`` and weight ``q``.

    For ``mu[j] > 0`` the original node keeps its weight and passes the
    fraction ``q**mu[j]`` (plus any unassigned residual of a non-complete
    row) to its shifted copy; remaining arrows are scaled by
    ``1 - q**mu[j]``. For ``mu[j] <= 0`` the node is replaced by its shifted
    copy, which keeps the weight and has no outgoing arrows.
    """
    if not 0 < q < 1:
        raise InvalidWeight(f"information weight must be in (0, 1), got {q}")
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (graph.m,):
        raise DimensionMismatch("shift vector length must match the graph")
    m = graph.m
    present = np.zeros(2 * m, dtype=bool)
    weights = np.zeros(2 * m)
    trans = np.zeros((2 * m, 2 * m))
    pos = mu > 0
    present[:m] = pos
    present[m:] = True

    def target(j):
        return j if pos[j] else m + j

    row_sums = graph.transition.sum(axis=1)
    for j in range(m):
        if pos[j]:
            weights[j] = graph.weights[j]
            keep = q ** min(mu[j], _MAX_SHIFT_EXPONENT)
            for i in range(m):
                if i != j and graph.transition[j, i] > 0:
                    trans[j, target(i)] = graph.transition[j, i] * (1.0 - keep)
            trans[j, m + j] = keep + (1.0 - keep) * (1.0 - row_sums[j])
        else:
            weights[m + j] = graph.weights[j]
    return DualGraph(present=present, weights=weights, transition=trans, q=q, mu=mu)


@dataclass(frozen=True)
class LocalLevels:
    """Levels of the shifted hypotheses and their graph factors."""

    alpha_mu: np.ndarray
    nu: np.ndarray


def local_levels(graph: GraphSpec, mu, q: float, alpha: float) -> LocalLevels:
    """Local levels of the shifted intersection test defined by the dual graph.

    Rejects every original node of the dual graph and reads off the level
    left on each shifted node. Satisfies ``sum(alpha_mu) == alpha`` and
    ``alpha_mu[j] == q**max(mu[j], 0) * nu[j] * alpha``.
    """
    dual = build_dual_graph(graph, mu, q)
    m = graph.m
    state = GraphState(
        active=frozenset(np.flatnonzero(dual.present).tolist()),
        weights=dual.weights.copy(),
        transition=dual.transition.copy(),
    )
    for j in range(m):
        if dual.present[j]:
            state = update_after_rejection(state, j)
    frac = state.weights[m:]
    alpha_mu = frac * alpha
    y = q ** np.minimum(np.maximum(dual.mu, 0.0), _MAX_SHIFT_EXPONENT)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(y > 0, frac / y, np.inf)
    nu = np.where(frac == 0, 0.0, nu)
    return LocalLevels(alpha_mu=alpha_mu, nu=nu)


def local_level_fractions_batch(graph: GraphSpec, y: np.ndarray) -> np.ndarray:
    """Vectorized dual-graph level fractions for many shift vectors at once.

    Args:
        y: array (..., m) with ``y[..., j] = q**max(mu[j], 0)``. A value of 1
            encodes a non-positive shift.

    Returns:
        Array (..., m) of level fractions ``alpha_mu / alpha``.

    Uses the identity that replacing a non-positive-shift node by its shifted
    copy equals keeping it with a full-weight arrow to the copy and rejecting
    it: with ``y[j] = 1`` the scaled outgoing arrows vanish and the arrow to
    the copy has weight 1, so all original nodes can be eliminated uniformly
    in index order (the result is order-invariant).
    """
    y = np.asarray(y, dtype=float)
    m = graph.m
    if y.shape[-1] != m:
        raise DimensionMismatch("last axis of y must match the number of hypotheses")
    lead = y.shape[:-1]
    g0 = graph.transition
    row_sums = g0.sum(axis=1)

    w = np.broadcast_to(graph.weights, lead + (m,)).copy()
    ws = np.zeros(lead + (m,))
    # A[..., i, j]: arrows between original nodes; B[..., i, j]: to shifted copies.
    A = g0 * (1.0 - y)[..., :, None]
    A = np.broadcast_to(A, lead + (m, m)).copy()
    B = np.zeros(lead + (m, m))
    di = np.arange(m)
    B[..., di, di] = y + (1.0 - y) * (1.0 - row_sums)

    for j in range(m):
        wj = w[..., j].copy()
        ws += wj[..., None] * B[..., j, :]
        w += wj[..., None] * A[..., j, :]
        w[..., j] = 0.0
        a_in = A[..., :, j].copy()   # arrows ell -> j
        a_out = A[..., j, :].copy()  # arrows j -> i
        b_out = B[..., j, :].copy()
        # denom[..., ell] = 1 - g[ell, j] * g[j, ell]
        denom = 1.0 - a_in * a_out
        ok = denom > 0
        denom = np.where(ok, denom, 1.0)
        A = (A + a_in[..., :, None] * a_out[..., None, :]) / denom[..., :, None]
        B = (B + a_in[..., :, None] * b_out[..., None, :]) / denom[..., :, None]
        A = np.where(ok[..., :, None], A, 0.0)
        B = np.where(ok[..., :, None], B, 0.0)
        A[..., j, :] = 0.0
        A[..., :, j] = 0.0
        B[..., j, :] = 0.0
        A[..., di, di] = 0.0
    return ws
