import numpy as np
import pytest

from seqgraph.batch import BatchPValues
from seqgraph.boundaries import HypothesisPlan, PValueFamily, SpendingFunction
from seqgraph.errors import ValidationError
from seqgraph.estimators import (
    ALPHA_M,
    NO_ESTIMATE,
    EstimatorResult,
    batch_median_estimates,
    median_estimators,
)
from seqgraph.graph import validate_graph
from seqgraph.informative import IterationConfig

from conftest import CHAIN_TRANSITION, CHAIN_WEIGHTS, estimates_for_repeated_p

CFG = IterationConfig(q=0.3, epsilon=1e-7)
PLAN = HypothesisPlan(SpendingFunction("pocock_like"), (0.5, 1.0))


def chain(ew=(0.25, 0.25, 0.25, 0.25)):
    return validate_graph(CHAIN_WEIGHTS, CHAIN_TRANSITION, exhaustion_weights=ew)


def two_chain():
    return validate_graph([1.0, 0.0], [[0.0, 1.0], [0.0, 0.0]])


def family(est, se=None):
    est = np.asarray(est, dtype=float)
    se = np.ones_like(est) if se is None else np.asarray(se, dtype=float)
    return PValueFamily([PLAN] * est.shape[0], est, se)


class TestValidation:
    def test_unknown_variant(self):
        with pytest.raises(ValidationError):
            median_estimators("x", chain(), family(np.zeros((4, 2))), [1] * 4)

    def test_informative_needs_config(self):
        with pytest.raises(ValidationError):
            median_estimators("c", chain(), family(np.zeros((4, 2))), [1] * 4)

    def test_bad_lambda(self):
        with pytest.raises(ValidationError):
            median_estimators("a", chain(), family(np.zeros((4, 2))), [1] * 4, lam="q")


class TestCompatibleVariants:
    def test_chain_levels_rescale_to_half(self):
        # No rejection at level 0.5: the chain head is estimated by inverting
        # its p-value at local level 1.0 * 0.5; the tail has no level at all.
        fam = family([[0.1, 0.1], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        res = median_estimators("a", chain(), fam, [1] * 4, lam="r")
        assert res.estimates[0] == pytest.approx(fam.inverse(0, 1, "r", ALPHA_M))
        assert res.estimates[0] < 0
        assert np.all(np.isneginf(res.estimates[1:]))
        assert not res.degenerate.any()
        assert res.describe(1) == NO_ESTIMATE

    def test_partial_rejection_sticks_at_zero(self):
        fam = family([[3.5, 3.5], [3.5, 3.5], [-1.0, -1.0], [-1.0, -1.0]])
        res = median_estimators("a", chain(), fam, [1] * 4, lam="r")
        assert res.estimates[0] == 0.0 and res.estimates[1] == 0.0
        assert res.degenerate[0] and res.degenerate[1]
        assert not res.degenerate[2] and not res.degenerate[3]

    def test_all_rejected_uses_exhaustion_weights(self):
        fam = family(np.full((4, 2), 6.0))
        res = median_estimators("a", chain(), fam, [1] * 4, lam="r")
        for j in range(4):
            expect = max(0.0, fam.inverse(j, 1, "r", 0.25 * ALPHA_M))
            assert res.estimates[j] == pytest.approx(expect)
        assert not res.degenerate.any()  # all located by inversion, not clamped

    def test_variant_b_uses_repeated_retest(self):
        fam = family([[3.5, 3.5], [2.2, 2.2], [-1.0, -1.0], [-1.0, -1.0]])
        res = median_estimators("b", chain(), fam, [1] * 4)
        assert res.lam == "r"
        assert res.variant == "b"
        # H1/H2 sequentially rejected and retested; H3 gets H1's passed-down
        # level with the other rejection replayed.
        assert res.degenerate[:2].all()


class TestInformativeVariants:
    def test_two_chain_head_matches_dense_grid(self):
        # With only the chain head holding level, its estimate solves
        # 1 - Phi(est - x) = q^(x v 0) * 0.5 at a single stage.
        plan1 = HypothesisPlan(SpendingFunction("pocock_like"), (1.0,))
        fam = PValueFamily([plan1] * 2, [[1.4], [-9.0]], [[1.0], [1.0]])
        res = median_estimators("c", two_chain(), fam, [0, 0], lam="r", cfg=CFG)
        xs = np.linspace(-12.0, 12.0, 2_000_001)
        f = fam.log_repeated(0, 0, xs) - np.maximum(xs, 0.0) * np.log(CFG.q) - np.log(ALPHA_M)
        expect = xs[np.argmin(np.abs(f))]
        assert res.estimates[0] == pytest.approx(expect, abs=2e-5)

    def test_sequential_estimates_monotone_across_stages(self):
        fam = family([[1.5, 2.5], [0.5, 1.8], [0.2, 0.9], [-0.5, 0.1]])
        for variant in ("c", "d"):
            e1 = median_estimators(variant, chain(), fam, [0] * 4, lam="s", cfg=CFG).estimates
            e2 = median_estimators(variant, chain(), fam, [1] * 4, lam="s", cfg=CFG).estimates
            assert np.all(e2 >= e1 - 1e-9)

    def test_informativeness_bump(self):
        base = np.array([[1.5, 2.5], [0.5, 1.8], [0.2, 0.9], [-0.5, 0.1]])
        e0 = median_estimators("c", chain(), family(base), [1] * 4, lam="s", cfg=CFG).estimates
        for j in range(4):
            if np.isneginf(e0[j]):
                continue
            bumped = base.copy()
            bumped[j] += 0.5
            e1 = median_estimators("c", chain(), family(bumped), [1] * 4, lam="s", cfg=CFG).estimates
            assert e1[j] > e0[j]

    def test_variant_d_dominated_by_sequential(self):
        fam = family([[1.5, 2.5], [0.5, 1.8], [0.2, 0.9], [-0.5, 0.1]])
        ec = median_estimators("c", chain(), fam, [1] * 4, lam="s", cfg=CFG).estimates
        ed = median_estimators("d", chain(), fam, [1] * 4, cfg=CFG).estimates
        assert np.all(ed <= ec + 1e-6)


class TestBatchEquivalence:
    @pytest.mark.parametrize("variant", ["a", "b", "c", "d"])
    def test_matches_scalar(self, variant):
        rng = np.random.default_rng(11)
        R = 10
        est = rng.normal(1.2, 1.8, size=(R, 4, 2))
        se = rng.uniform(0.6, 1.4, size=(R, 4, 2))
        bp = BatchPValues([PLAN] * 4, est, se)
        stages = rng.integers(0, 2, size=(R, 4))
        graph = chain()
        batch = batch_median_estimates(variant, graph, bp, stages, lam="s", cfg=CFG)
        for r in range(R):
            fam = PValueFamily([PLAN] * 4, est[r], se[r])
            want = median_estimators(variant, graph, fam, stages[r], lam="s", cfg=CFG).estimates
            np.testing.assert_allclose(batch[r], want, atol=2e-6)
