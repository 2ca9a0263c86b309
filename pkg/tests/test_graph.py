import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqgraph.errors import (
    DimensionMismatch,
    InactiveNode,
    InvalidTransition,
    InvalidWeight,
    NegativeWeight,
    RowSumExceeded,
    WeightSumExceeded,
)
from seqgraph.graph import (
    build_dual_graph,
    initial_state,
    local_level_fractions_batch,
    local_levels,
    replay_rejections,
    run_single_stage_test,
    update_after_rejection,
    validate_graph,
)


def holm_graph(m):
    w = np.full(m, 1.0 / m)
    g = np.full((m, m), 1.0 / (m - 1))
    np.fill_diagonal(g, 0.0)
    return validate_graph(w, g)


def hierarchical_graph():
    """Two primaries splitting evenly, each feeding its own secondary."""
    w = np.array([0.5, 0.5, 0.0, 0.0])
    g = np.array(
        [
            [0.0, 0.5, 0.5, 0.0],
            [0.5, 0.0, 0.0, 0.5],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ]
    )
    return validate_graph(w, g)


@st.composite
def random_graphs(draw, max_m=5):
    m = draw(st.integers(2, max_m))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    w = rng.dirichlet(np.ones(m)) * draw(st.floats(0.2, 1.0))
    g = np.zeros((m, m))
    for i in range(m):
        row = rng.dirichlet(np.ones(m - 1)) * rng.uniform(0.0, 1.0)
        g[i, [j for j in range(m) if j != i]] = row
    return validate_graph(w, g)


class TestValidation:
    def test_rejects_weight_sum_above_one(self):
        with pytest.raises(WeightSumExceeded):
            validate_graph([0.7, 0.7], [[0, 1], [1, 0]])

    def test_rejects_row_sum_above_one(self):
        with pytest.raises(RowSumExceeded):
            validate_graph([0.5, 0.5], [[0, 1.2], [1, 0]])

    def test_rejects_negative_entries(self):
        with pytest.raises(NegativeWeight):
            validate_graph([0.5, -0.1], [[0, 1], [1, 0]])
        with pytest.raises(NegativeWeight):
            validate_graph([0.5, 0.5], [[0, -0.5], [1, 0]])

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(InvalidTransition):
            validate_graph([0.5, 0.5], [[0.1, 0.9], [1, 0]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            validate_graph([0.5, 0.5], [[0, 1, 0], [1, 0, 0], [0, 0, 0]])

    def test_tolerates_tiny_roundoff(self):
        w = [1 / 3, 1 / 3, 1 / 3]
        g = np.full((3, 3), 0.5)
        np.fill_diagonal(g, 0.0)
        validate_graph(w, g)

    def test_exhaustion_weights_default_to_full_initial_weights(self):
        spec = holm_graph(3)
        assert np.allclose(spec.exhaustion_weights, spec.weights)

    def test_exhaustion_weights_must_sum_to_one(self):
        with pytest.raises(WeightSumExceeded):
            validate_graph([0.5, 0.5], [[0, 1], [1, 0]], exhaustion_weights=[0.5, 0.4])

    def test_non_exhaustive_graph_has_no_default_exhaustion_weights(self):
        spec = validate_graph([0.3, 0.3], [[0, 1], [1, 0]])
        assert spec.exhaustion_weights is None


class TestRejectionUpdate:
    def test_holm_update_renormalizes(self):
        spec = holm_graph(3)
        state = update_after_rejection(initial_state(spec), 0)
        assert state.active == frozenset({1, 2})
        assert np.allclose(state.weights[[1, 2]], 0.5)
        assert np.allclose(state.transition[1, 2], 1.0)
        assert np.allclose(state.transition[2, 1], 1.0)

    def test_inactive_node_rejected_twice(self):
        spec = holm_graph(3)
        state = update_after_rejection(initial_state(spec), 0)
        with pytest.raises(InactiveNode):
            update_after_rejection(state, 0)

    def test_hierarchical_secondary_inherits_primary_weight(self):
        spec = hierarchical_graph()
        state = replay_rejections(spec, [0])
        assert state.weights[1] == pytest.approx(0.75)
        assert state.weights[2] == pytest.approx(0.25)
        assert state.weights[3] == pytest.approx(0.0)

    @given(random_graphs())
    @settings(max_examples=40, deadline=None)
    def test_weight_never_lost_beyond_initial_deficit(self, spec):
        state = initial_state(spec)
        for j in range(spec.m):
            total_before = state.weights.sum()
            state = update_after_rejection(state, j)
            assert state.weights.sum() <= total_before + 1e-10

    @given(random_graphs(max_m=4))
    @settings(max_examples=30, deadline=None)
    def test_rejection_order_invariance(self, spec):
        subset = list(range(spec.m - 1))
        ref = replay_rejections(spec, subset)
        for order in itertools.permutations(subset):
            state = initial_state(spec)
            for j in order:
                state = update_after_rejection(state, j)
            assert np.allclose(state.weights, ref.weights, atol=1e-10)
            assert np.allclose(state.transition, ref.transition, atol=1e-10)


class TestSingleStageTest:
    def test_holm_matches_closed_form(self):
        spec = holm_graph(3)
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = rng.uniform(0, 0.2, size=3)
            rejected, _ = run_single_stage_test(spec, p, alpha=0.05)
            # Classical step-down Holm on the same p-values.
            order = np.argsort(p)
            expect = set()
            for rank, j in enumerate(order):
                if p[j] <= 0.05 / (3 - rank):
                    expect.add(int(j))
                else:
                    break
            assert rejected == frozenset(expect)

    def test_zero_pvalue_rejectable_at_zero_weight(self):
        spec = hierarchical_graph()
        rejected, _ = run_single_stage_test(spec, [0.0, 1.0, 0.0, 1.0], alpha=0.025)
        assert rejected == frozenset({0, 2})

    def test_alpha_domain(self):
        spec = holm_graph(2)
        with pytest.raises(InvalidWeight):
            run_single_stage_test(spec, [0.01, 0.01], alpha=0.0)


class TestDualGraph:
    def test_row_sums_preserved(self):
        spec = hierarchical_graph()
        dual = build_dual_graph(spec, mu=[0.5, -0.2, 1.0, 0.3], q=0.3)
        rows = dual.transition.sum(axis=1)
        for j in range(spec.m):
            if dual.mu[j] > 0:
                assert rows[j] == pytest.approx(1.0)
        # Shifted nodes have no outgoing arrows.
        assert np.all(dual.transition[spec.m :, :] == 0)

    def test_weight_placement(self):
        spec = hierarchical_graph()
        dual = build_dual_graph(spec, mu=[0.5, -0.2, 1.0, 0.3], q=0.3)
        assert dual.weights[0] == 0.5 and dual.weights[4] == 0.0
        assert dual.weights[1] == 0.0 and dual.weights[5] == 0.5

    def test_q_domain(self):
        spec = holm_graph(2)
        with pytest.raises(InvalidWeight):
            build_dual_graph(spec, [0.1, 0.1], q=1.0)

    def test_serial_chain_levels(self):
        # Two hypotheses in series: all weight on the first, passed on fully.
        # The terminal node has no outgoing arrows, so its shifted copy takes
        # the full inherited level regardless of the shift size.
        spec = validate_graph([1.0, 0.0], [[0, 1], [0, 0]])
        q = 0.4
        mu = np.array([0.7, 0.3])
        out = local_levels(spec, mu, q=q, alpha=0.025)
        assert out.alpha_mu[0] == pytest.approx(q**0.7 * 0.025)
        assert out.alpha_mu[1] == pytest.approx((1 - q**0.7) * 0.025)

    def test_four_node_chain_with_nonpositive_middle_shift(self):
        # Serial chain H1 -> H2 -> H3 -> H4 with a non-positive shift at H3:
        # H3's node is replaced by its shifted copy, which absorbs all level
        # flowing in and passes nothing to H4.
        spec = validate_graph(
            [1.0, 0.0, 0.0, 0.0],
            [[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 0]],
        )
        q, alpha = 0.3, 0.025
        mu = np.array([0.6, 0.9, -0.4, 0.5])
        out = local_levels(spec, mu, q=q, alpha=alpha)
        expect = np.array(
            [q**0.6, (1 - q**0.6) * q**0.9, (1 - q**0.6) * (1 - q**0.9), 0.0]
        ) * alpha
        assert np.allclose(out.alpha_mu, expect, atol=1e-12)
        assert out.alpha_mu.sum() == pytest.approx(alpha)

    @given(random_graphs(max_m=4), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_levels_sum_to_alpha_for_exhaustive_graphs(self, spec, seed):
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(spec.m))
        g = np.zeros((spec.m, spec.m))
        for i in range(spec.m):
            g[i, [j for j in range(spec.m) if j != i]] = rng.dirichlet(np.ones(spec.m - 1))
        spec = validate_graph(w, g)
        mu = rng.normal(0, 1, size=spec.m)
        out = local_levels(spec, mu, q=rng.uniform(0.05, 0.95), alpha=0.025)
        assert out.alpha_mu.sum() == pytest.approx(0.025, abs=1e-10)

    def test_levels_reduce_to_original_weights_at_zero_shift(self):
        spec = hierarchical_graph()
        out = local_levels(spec, mu=np.zeros(4), q=0.3, alpha=0.025)
        assert np.allclose(out.alpha_mu, spec.weights * 0.025)

    def test_level_monotone_in_own_shift(self):
        spec = hierarchical_graph()
        base = local_levels(spec, mu=[0.4, 0.2, 0.1, 0.3], q=0.3, alpha=0.025)
        bumped = local_levels(spec, mu=[0.8, 0.2, 0.1, 0.3], q=0.3, alpha=0.025)
        assert bumped.alpha_mu[0] < base.alpha_mu[0]

    def test_level_independent_of_nonpositive_shift_magnitude(self):
        spec = hierarchical_graph()
        a = local_levels(spec, mu=[-0.5, 0.2, 0.1, 0.3], q=0.3, alpha=0.025)
        b = local_levels(spec, mu=[-3.0, 0.2, 0.1, 0.3], q=0.3, alpha=0.025)
        assert np.allclose(a.alpha_mu, b.alpha_mu)

    def test_small_q_limit_matches_unshifted_graph_after_rejections(self):
        # As q -> 0 a positively shifted node behaves like a rejected node.
        spec = hierarchical_graph()
        out = local_levels(spec, mu=[1.0, 0.0, 0.0, 0.0], q=1e-9, alpha=0.025)
        state = replay_rejections(spec, [0])
        assert np.allclose(out.alpha_mu[1:], state.weights[1:] * 0.025, atol=1e-8)
        assert out.alpha_mu[0] <= 1e-9


class TestBatchLevels:
    @given(random_graphs(max_m=5), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_batch_matches_scalar_construction(self, spec, seed):
        rng = np.random.default_rng(seed)
        q = rng.uniform(0.05, 0.95)
        mu = rng.normal(0, 1, size=(6, spec.m))
        y = q ** np.maximum(mu, 0.0)
        frac = local_level_fractions_batch(spec, y)
        for r in range(6):
            out = local_levels(spec, mu[r], q=q, alpha=1.0)
            assert np.allclose(frac[r], out.alpha_mu, atol=1e-12)

    def test_accepts_leading_axes(self):
        spec = hierarchical_graph()
        y = np.full((3, 2, 4), 0.7)
        frac = local_level_fractions_batch(spec, y)
        assert frac.shape == (3, 2, 4)
