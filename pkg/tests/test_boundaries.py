import numpy as np
import pytest
from scipy.special import ndtri
from scipy.stats import multivariate_normal, norm

from seqgraph.errors import (
    DimensionMismatch,
    MissingObservation,
    OutOfDomain,
    SpendingMonotonicityViolation,
    SpentIncrementNonpositive,
)
from seqgraph.boundaries import (
    BoundaryTable,
    HypothesisPlan,
    InjectedPValueFamily,
    PValueFamily,
    SpendingFunction,
    get_table,
    nominal_levels,
    spend,
    validate_fractions,
)

POCOCK = SpendingFunction("pocock_like")
OBF = SpendingFunction("obf_like")


def seq_cov(t):
    t = np.asarray(t, dtype=float)
    return np.sqrt(np.minimum.outer(t, t) / np.maximum.outer(t, t))


def no_crossing_prob(levels, t):
    """P(no boundary crossing) from the multivariate normal CDF (oracle)."""
    c = -ndtri(np.asarray(levels))
    return multivariate_normal(mean=np.zeros(len(t)), cov=seq_cov(t)).cdf(c)


class TestSpend:
    def test_full_fraction_spends_gamma(self):
        assert spend(POCOCK, 0.025, 1.0) == pytest.approx(0.025, abs=1e-12)
        assert spend(SpendingFunction("power", 2.0), 0.025, 1.0) == pytest.approx(0.025)
        assert spend(OBF, 0.025, 1.0) == pytest.approx(0.025, abs=1e-12)

    def test_zero_fraction_spends_nothing(self):
        for f in (POCOCK, OBF, SpendingFunction("power", 0.5)):
            assert spend(f, 0.025, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_closed_forms(self):
        assert spend(SpendingFunction("power", 1.0), 0.025, 0.5) == pytest.approx(0.0125)
        assert spend(POCOCK, 0.025, 0.5) == pytest.approx(
            0.025 * np.log(1 + (np.e - 1) * 0.5)
        )
        z = norm.isf(0.025 / 2)
        assert spend(OBF, 0.025, 0.5) == pytest.approx(2 * norm.sf(z / np.sqrt(0.5)))

    def test_domain_checks(self):
        with pytest.raises(OutOfDomain):
            spend(POCOCK, 0.0, 0.5)
        with pytest.raises(OutOfDomain):
            spend(POCOCK, 1.5, 0.5)
        with pytest.raises(OutOfDomain):
            spend(POCOCK, 0.025, 1.5)
        with pytest.raises(OutOfDomain):
            SpendingFunction("power", -1.0)
        with pytest.raises(OutOfDomain):
            SpendingFunction("bonferroni")

    def test_monotone_in_fraction(self):
        t = np.linspace(0, 1, 50)
        for f in (POCOCK, OBF, SpendingFunction("power", 3.0)):
            a = spend(f, 0.025, t)
            assert np.all(np.diff(a) >= 0)


class TestSchedules:
    def test_rejects_bad_fractions(self):
        for bad in ([0.5, 0.4, 1.0], [0.0, 1.0], [0.5, 0.9], [0.5, 1.1], []):
            with pytest.raises((OutOfDomain, DimensionMismatch)):
                validate_fractions(bad)


class TestNominalLevels:
    def test_single_stage_spends_everything(self):
        assert nominal_levels(POCOCK, [1.0], 0.025)[0] == pytest.approx(0.025)

    def test_first_stage_level_is_first_increment(self):
        lv = nominal_levels(POCOCK, [0.5, 1.0], 0.025)
        assert lv[0] == pytest.approx(spend(POCOCK, 0.025, 0.5), abs=1e-14)

    @pytest.mark.parametrize(
        "f,t",
        [
            (POCOCK, [0.5, 1.0]),
            (POCOCK, [0.3, 0.7, 1.0]),
            (SpendingFunction("power", 1.0), [0.25, 0.5, 1.0]),
            (SpendingFunction("power", 3.0), [1 / 3, 2 / 3, 1.0]),
            (OBF, [0.4, 0.8, 1.0]),
        ],
    )
    def test_total_crossing_mass_is_gamma(self, f, t):
        gamma = 0.025
        lv = nominal_levels(f, t, gamma)
        # Tolerance covers scipy's own MVN CDF integration error.
        assert 1 - no_crossing_prob(lv, t) == pytest.approx(gamma, abs=1e-5)

    def test_stagewise_crossing_masses_match_mvn_oracle(self):
        t = [0.5, 1.0]
        gamma = 0.025
        lv = nominal_levels(POCOCK, t, gamma)
        c = -ndtri(lv)
        # P(first crossing at stage 2) = P(Z1 <= c1) - P(Z1 <= c1, Z2 <= c2)
        stage2 = norm.cdf(c[0]) - no_crossing_prob(lv, t)
        assert stage2 == pytest.approx(gamma - spend(POCOCK, gamma, 0.5), abs=2e-6)

    def test_monotone_in_gamma(self):
        lo = nominal_levels(POCOCK, [0.5, 1.0], 0.01)
        hi = nominal_levels(POCOCK, [0.5, 1.0], 0.05)
        assert np.all(lo < hi)

    def test_degenerate_schedule_rejected(self):
        # OBF at gamma = 1 spends the full level at the first look.
        with pytest.raises(SpentIncrementNonpositive):
            nominal_levels(OBF, [0.5, 1.0], 1.0)

    def test_gamma_one_final_stage_level_is_one(self):
        lv = nominal_levels(POCOCK, [0.25, 0.5, 0.75, 1.0], 1.0)
        assert lv[-1] == pytest.approx(1.0)

    def test_obf_warns_beyond_proven_range(self):
        with pytest.warns(UserWarning):
            nominal_levels(OBF, [0.5, 1.0], 0.4)


class TestBoundaryTable:
    def test_matches_exact_recursion(self):
        tab = BoundaryTable(SpendingFunction("power", 3.0), [1 / 3, 2 / 3, 1.0])
        for g in (1e-8, 1e-3, 0.025, 0.2, 0.5):
            ex = nominal_levels(SpendingFunction("power", 3.0), [1 / 3, 2 / 3, 1.0], g)
            ta = np.array([tab.levels(g, k) for k in range(3)])
            assert np.allclose(ta, ex, rtol=2e-3)

    def test_round_trip_is_exact(self):
        tab = BoundaryTable(POCOCK, [0.4, 1.0])
        lg = np.log(np.array([1e-6, 0.013, 0.025, 0.31, 0.9]))
        for k in range(2):
            ll = tab.log_levels(lg, k)
            assert np.abs(tab.log_gamma_of_level(ll, k) - lg).max() < 1e-12

    def test_levels_monotone_in_gamma(self):
        tab = BoundaryTable(POCOCK, [0.2, 0.6, 1.0])
        g = np.exp(np.linspace(np.log(1e-12), 0, 500))
        for k in range(3):
            assert np.all(np.diff(tab.levels(g, k)) > 0)

    def test_extrapolates_below_grid(self):
        tab = BoundaryTable(POCOCK, [0.5, 1.0])
        lv = tab.levels(1e-20, 0)
        assert lv == pytest.approx(spend(POCOCK, 1e-20, 0.5), rel=1e-6)

    def test_repeated_level_caps_at_one(self):
        tab = BoundaryTable(POCOCK, [0.5, 1.0])
        big = np.log(0.9)
        assert tab.repeated_level(big, 0) == 1.0

    def test_obf_refuses_inversion_beyond_range(self):
        tab = get_table(OBF, (0.5, 1.0))
        with pytest.raises(SpendingMonotonicityViolation):
            tab.log_gamma_of_level(np.log(0.9), 1)

    def test_cache_returns_same_object(self):
        a = get_table(POCOCK, (0.5, 1.0))
        b = get_table(POCOCK, [0.5, 1.0])
        assert a is b


def two_stage_family(est=(0.2, 0.3), se=(0.5, 0.4)):
    plans = [HypothesisPlan(POCOCK, (0.5, 1.0))]
    return PValueFamily(plans, [list(est)], [list(se)])


class TestPValueFamily:
    def test_single_stage_repeated_equals_local_p(self):
        fam = PValueFamily([HypothesisPlan(POCOCK, (1.0,))], [[0.3]], [[0.5]])
        assert fam.repeated(0, 0) == pytest.approx(norm.sf(0.3 / 0.5), rel=1e-4)

    def test_sequential_below_repeated(self):
        fam = two_stage_family()
        for mu in (-1.0, 0.0, 0.5):
            assert fam.sequential(0, 1, mu) <= fam.repeated(0, 1, mu) <= 1.0

    def test_sequential_nonincreasing_in_stage(self):
        fam = two_stage_family()
        assert fam.sequential(0, 1) <= fam.sequential(0, 0)

    def test_strictly_increasing_in_mu(self):
        fam = two_stage_family()
        mus = np.linspace(-2, 1.5, 40)
        pr = np.array([fam.repeated(0, 1, m) for m in mus])
        inside = pr < 1.0
        assert np.all(np.diff(pr[inside]) > 0)

    def test_limits_in_mu(self):
        fam = two_stage_family()
        assert fam.repeated(0, 1, -np.inf) == 0.0
        assert fam.repeated(0, 1, -50.0) < 1e-12
        assert fam.repeated(0, 1, 50.0) == 1.0

    @pytest.mark.parametrize("lam", ["r", "s"])
    @pytest.mark.parametrize("gamma", [0.01, 0.025, 0.1])
    def test_round_trip_identities(self, lam, gamma):
        fam = two_stage_family()
        mu = fam.inverse(0, 1, lam, gamma)
        p = fam.repeated(0, 1, mu) if lam == "r" else fam.sequential(0, 1, mu)
        assert p == pytest.approx(gamma, abs=1e-8)

    def test_inverse_at_zero_is_minus_inf(self):
        fam = two_stage_family()
        assert fam.inverse(0, 1, "r", 0.0) == -np.inf
        assert fam.inverse(0, 1, "s", 0.0) == -np.inf

    def test_sequential_inverse_is_max_of_stagewise(self):
        fam = two_stage_family()
        g = 0.05
        stagewise = [fam.inverse(0, k, "r", g) for k in range(2)]
        assert fam.inverse(0, 1, "s", g) == pytest.approx(max(stagewise))

    def test_single_stage_fixed_design_quantile(self):
        fam = PValueFamily([HypothesisPlan(POCOCK, (1.0,))], [[0.3]], [[0.5]])
        mu = fam.inverse(0, 0, "r", 0.025)
        assert mu == pytest.approx(0.3 - 0.5 * norm.isf(0.025), rel=1e-4)

    def test_missing_observation(self):
        fam = PValueFamily(
            [HypothesisPlan(POCOCK, (0.5, 1.0))], [[0.2, np.nan]], [[0.5, np.nan]]
        )
        with pytest.raises(MissingObservation):
            fam.repeated(0, 1)

    def test_vectorized_mu(self):
        fam = two_stage_family()
        mus = np.array([-np.inf, -1.0, 0.0, 2.0])
        pr = fam.repeated(0, 1, mus)
        assert pr.shape == (4,)
        assert pr[0] == 0.0 and pr[-1] == 1.0


class TestInjectedFamily:
    def test_worked_example_sequential_minima(self):
        fam = InjectedPValueFamily(
            [[0.02, 0.03], [0.04, 0.02], [0.02, 0.03], [0.02, 0.01]]
        )
        assert fam.sequential(2, 1) == pytest.approx(0.02)
        assert fam.sequential(3, 1) == pytest.approx(0.01)

    def test_rejects_nonzero_shift_and_inversion(self):
        fam = InjectedPValueFamily([[0.02, 0.03]])
        with pytest.raises(OutOfDomain):
            fam.repeated(0, 0, mu=0.5)
        with pytest.raises(OutOfDomain):
            fam.inverse(0, 0, "r", 0.025)
