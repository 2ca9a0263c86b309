"""Monte Carlo harness: correlated trial data, FWER, coverage, and
median-coverage estimation, plus the standalone brute-force oracles.

Data model: each hypothesis j accrues a score process W_{j,k} built from
independent stagewise increments with mean theta_j * dt * sqrt(I_j) and
variance dt, correlated across hypotheses at each stage via the Cholesky
factor of the scenario's correlation matrix. The standardized statistic
Z_{j,k} = W_{j,k}/sqrt(t_k) then satisfies cov(Z_{j,k}, Z_{j,k'}) =
sqrt(t_k/t_k'), and the reported estimate is theta_hat = Z/sqrt(I_{j,k})
with SE = 1/sqrt(I_{j,k}) and I_{j,k} = t_k * I_j.

Reproducibility: replication r uses its own counter-based substream
(Philox advanced by r * 2^20), so results are bit-identical for a given
seed regardless of execution order or batching.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .batch import (
    BatchPValues,
    batch_adjust_test,
    batch_compatible,
    batch_compatible_adjustment,
    batch_isci,
    batch_isci_adjustment,
    batch_run_trial,
)
from scipy.special import ndtri

from .boundaries import nominal_levels
from .errors import NotPSD, ValidationError
from .estimators import batch_median_estimates
from .graph import GraphSpec, replay_rejections
from .informative import IterationConfig

_SUBSTREAM_STRIDE = 1 << 20

TEST_PROCEDURES = ("gsd-r", "gsd-s", "adjust", "isci-r", "isci-s", "isci-adjust")
BOUND_PROCEDURES = ("compatible-r", "compatible-s", "adjust", "isci-r", "isci-s", "isci-adjust")


@dataclass(frozen=True)
class ScenarioSpec:
    """One Monte Carlo configuration.

    Attributes:
        graph: validated graphical test.
        plans: one HypothesisPlan per hypothesis (common stage count).
        theta: true effects, one per hypothesis.
        correlation: cross-hypothesis correlation of the stagewise score
            increments (default: independent).
        information: planned maximum information I_j per hypothesis.
        stop_policy: 'stop-on-reject', 'never-stop', or a dict mapping
            0-based stages to collections of hypotheses stopped there.
        n_reps: number of replications (>= 1).
        seed: stream key; replications are substreams of it.
    """

    graph: GraphSpec
    plans: list
    theta: np.ndarray
    correlation: np.ndarray = None
    information: np.ndarray = None
    stop_policy: object = "stop-on-reject"
    n_reps: int = 10_000
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self):
        m = self.graph.m
        if len(self.plans) != m:
            raise ValidationError("one plan per hypothesis required")
        K = len(self.plans[0].fractions)
        if any(len(p.fractions) != K for p in self.plans):
            raise ValidationError("all hypotheses must share the number of stages")
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (m,):
            raise ValidationError("theta must have one entry per hypothesis")
        object.__setattr__(self, "theta", theta)
        corr = np.eye(m) if self.correlation is None else np.asarray(self.correlation, dtype=float)
        if corr.shape != (m, m) or not np.allclose(corr, corr.T):
            raise NotPSD("correlation must be a symmetric m x m matrix")
        try:
            chol = np.linalg.cholesky(corr + 1e-12 * np.eye(m))
        except np.linalg.LinAlgError:
            raise NotPSD("correlation matrix is not positive semi-definite") from None
        object.__setattr__(self, "correlation", corr)
        object.__setattr__(self, "_chol", chol)
        info = np.ones(m) if self.information is None else np.asarray(self.information, dtype=float)
        if info.shape != (m,) or np.any(info <= 0):
            raise ValidationError("information must be positive, one entry per hypothesis")
        object.__setattr__(self, "information", info)
        if isinstance(self.stop_policy, str):
            if self.stop_policy not in ("stop-on-reject", "never-stop"):
                raise ValidationError(f"unknown stop policy {self.stop_policy!r}")
        elif not isinstance(self.stop_policy, dict):
            raise ValidationError("stop_policy must be a name or a stage->indices dict")
        if self.n_reps < 1:
            raise ValidationError("n_reps must be >= 1")

    @property
    def m(self):
        return self.graph.m

    @property
    def n_stages(self):
        return len(self.plans[0].fractions)

    def std_errors(self):
        """(m, K) standard errors, identical across replications."""
        t = np.array([p.fractions for p in self.plans])
        return 1.0 / np.sqrt(t * self.information[:, None])


def _rep_rng(seed, rep_index):
    return np.random.Generator(np.random.Philox(key=seed).advance(rep_index * _SUBSTREAM_STRIDE))


def simulate_trial(spec: ScenarioSpec, rep_index: int):
    """One replication: (estimates, std_errors), each (m, K).

    Uses a dedicated substream per replication, so any subset of
    replications can be generated in any order with identical results.
    """
    rng = _rep_rng(spec.seed, rep_index)
    m, K = spec.m, spec.n_stages
    t = np.array([p.fractions for p in spec.plans])
    dt = np.diff(t, prepend=0.0, axis=1)
    eps = rng.standard_normal((K, m))
    incr = (spec.theta * np.sqrt(spec.information))[:, None] * dt + np.sqrt(dt) * (
        eps @ spec._chol.T
    ).T
    w = np.cumsum(incr, axis=1)
    se = spec.std_errors()
    est = w / (t * np.sqrt(spec.information)[:, None])
    return est, se


def simulate_batch(spec: ScenarioSpec, start: int = 0, count: int | None = None) -> BatchPValues:
    """Replications [start, start+count) as a BatchPValues array."""
    count = spec.n_reps if count is None else count
    est = np.empty((count, spec.m, spec.n_stages))
    se = np.empty_like(est)
    for i in range(count):
        est[i], se[i] = simulate_trial(spec, start + i)
    return BatchPValues(spec.plans, est, se)


def _scripted_taus(spec, R):
    taus = np.full((R, spec.m), spec.n_stages - 1)
    for k, idx in spec.stop_policy.items():
        for j in idx:
            taus[:, j] = min(taus[0, j], int(k))
    return taus


def _run_tests(spec, bp, procedure, alpha, cfg):
    """Final rejection masks (R, m) and data stages for one procedure."""
    if isinstance(spec.stop_policy, dict):
        raise ValidationError("scripted stops are supported for estimator studies only")
    stop = spec.stop_policy == "stop-on-reject"
    if procedure in ("gsd-r", "gsd-s"):
        lam = procedure[-1]
        history, taus = batch_run_trial(spec.graph, bp, alpha, lam, spec.n_stages, stop)
        return history[-1], taus
    if procedure == "adjust":
        history, taus = batch_run_trial(spec.graph, bp, alpha, "s", spec.n_stages, stop)
        return batch_adjust_test(spec.graph, history[-1], taus, alpha, bp), taus
    if procedure in ("isci-r", "isci-s"):
        lam = procedure[-1]
        _, rejections, taus = batch_isci(spec.graph, bp, alpha, lam, spec.n_stages, cfg, stop)
        return rejections[-1], taus
    if procedure == "isci-adjust":
        lowers, _, taus = batch_isci(spec.graph, bp, alpha, "s", spec.n_stages, cfg, stop)
        lower_c = batch_isci_adjustment(spec.graph, bp, lowers[-1], taus, alpha, cfg.q)
        return lower_c >= 0.0, taus
    raise ValidationError(f"unknown procedure {procedure!r}; expected one of {TEST_PROCEDURES}")


def _rate(hits, n):
    rate = hits / n
    return rate, float(np.sqrt(rate * (1.0 - rate) / n))


def estimate_fwer(spec: ScenarioSpec, procedure: str, alpha: float, cfg: IterationConfig | None = None):
    """Fraction of replications rejecting at least one true null (theta <= 0)."""
    bp = simulate_batch(spec)
    rejected, _ = _run_tests(spec, bp, procedure, alpha, cfg)
    false = rejected & (spec.theta <= 0.0)
    return _rate(int(false.any(axis=1).sum()), spec.n_reps)


def _bounds_at_stage(spec, bp, procedure, alpha, cfg, stage):
    """(R, m) lower bounds for one procedure evaluated after `stage` stages."""
    if isinstance(spec.stop_policy, dict):
        raise ValidationError("scripted stops are supported for estimator studies only")
    stop = spec.stop_policy == "stop-on-reject"
    K = spec.n_stages
    if procedure in ("compatible-r", "compatible-s"):
        lam = procedure[-1]
        history, taus = batch_run_trial(spec.graph, bp, alpha, lam, K, stop)
        stages = np.minimum(taus, stage)
        return batch_compatible(spec.graph, history[stage], stages, bp, lam, alpha)
    if procedure == "adjust":
        history, taus = batch_run_trial(spec.graph, bp, alpha, "s", K, stop)
        stages = np.minimum(taus, stage)
        r_c = batch_adjust_test(spec.graph, history[stage], stages, alpha, bp)
        return batch_compatible_adjustment(spec.graph, history[stage], r_c, stages, bp, alpha)
    if procedure in ("isci-r", "isci-s"):
        lam = procedure[-1]
        lowers, _, _ = batch_isci(spec.graph, bp, alpha, lam, K, cfg, stop)
        return lowers[stage]
    if procedure == "isci-adjust":
        lowers, _, taus = batch_isci(spec.graph, bp, alpha, "s", K, cfg, stop)
        stages = np.minimum(taus, stage)
        return batch_isci_adjustment(spec.graph, bp, lowers[stage], stages, alpha, cfg.q)
    raise ValidationError(f"unknown procedure {procedure!r}; expected one of {BOUND_PROCEDURES}")


def estimate_coverage(
    spec: ScenarioSpec,
    procedure: str,
    alpha: float,
    cfg: IterationConfig | None = None,
    stage: int | None = None,
):
    """Fraction of replications with theta strictly above every lower bound.

    Args:
        stage: 0-based analysis stage (default: final). Components with a
            bound of -inf always count as covered.
    """
    stage = spec.n_stages - 1 if stage is None else stage
    bp = simulate_batch(spec)
    lower = _bounds_at_stage(spec, bp, procedure, alpha, cfg, stage)
    covered = (spec.theta > lower) | np.isneginf(lower)
    return _rate(int(covered.all(axis=1).sum()), spec.n_reps)


def estimate_median_coverage(
    spec: ScenarioSpec,
    variant: str,
    alpha: float,
    cfg: IterationConfig | None = None,
    lam: str = "s",
    batch_size: int = 20_000,
):
    """Fraction of replications with every estimate at or below its theta.

    The level-alpha test matching the variant is run first to freeze the
    per-hypothesis data stages; the estimator then reruns the bound
    machinery at overall level 0.5 on those stages.
    """
    hits = 0
    done = 0
    while done < spec.n_reps:
        count = min(batch_size, spec.n_reps - done)
        bp = simulate_batch(spec, start=done, count=count)
        if isinstance(spec.stop_policy, dict):
            taus = _scripted_taus(spec, count)
        else:
            lam_eff = lam if variant in ("a", "c") else "s"
            stop = spec.stop_policy == "stop-on-reject"
            _, taus = batch_run_trial(spec.graph, bp, alpha, lam_eff, spec.n_stages, stop)
        est = batch_median_estimates(variant, spec.graph, bp, taus, lam=lam, cfg=cfg)
        ok = (est <= spec.theta) | np.isneginf(est)
        hits += int(ok.all(axis=1).sum())
        done += count
    return _rate(hits, spec.n_reps)


def result_rows(scenario, procedure, metric, estimate, mc_se, n_reps):
    return {
        "scenario": scenario,
        "procedure": procedure,
        "metric": metric,
        "estimate": estimate,
        "mc_se": mc_se,
        "n_reps": n_reps,
    }


def write_results_csv(path, rows):
    """Write result rows with the standard column set."""
    fields = ["scenario", "procedure", "metric", "estimate", "mc_se", "n_reps"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Standalone brute-force oracles


def boundary_crossing_oracle(spending, fractions, gamma, n_reps=1_000_000, seed=2024):
    """MC estimate of the crossing probability of the nominal-level boundary.

    Simulates standardized statistics with cov(Z_k, Z_k') = sqrt(t_k/t_k')
    under the null and reports the fraction of paths whose local p-value
    falls at or below the stage's nominal level at any stage. Should match
    gamma to Monte Carlo error.
    """
    t = np.asarray(fractions, dtype=float)
    levels = nominal_levels(spending, t, gamma)
    rng = np.random.Generator(np.random.Philox(key=seed))
    dt = np.diff(t, prepend=0.0)
    hits = 0
    chunk = 200_000
    done = 0
    crit = -ndtri(levels)
    while done < n_reps:
        n = min(chunk, n_reps - done)
        w = np.cumsum(rng.standard_normal((n, len(t))) * np.sqrt(dt), axis=1)
        z = w / np.sqrt(t)
        hits += int((z >= crit).any(axis=1).sum())
        done += n
    return _rate(hits, n_reps)


def dense_grid_root(f, lo, hi, n=4_000_001):
    """Location of the smallest |f| on a dense grid (sign-agnostic oracle)."""
    xs = np.linspace(lo, hi, n)
    return float(xs[np.argmin(np.abs(f(xs)))])


def exhaustive_ordering_oracle(graph: GraphSpec, rejected):
    """Replay a rejection set in every order; return the set of distinct
    (weights, transition) outcomes (order-invariance means exactly one)."""
    outcomes = set()
    for order in permutations(sorted(rejected)):
        state = replay_rejections(graph, [])
        from .graph import update_after_rejection

        for j in order:
            state = update_after_rejection(state, j)
        outcomes.add(
            (
                tuple(np.round(state.weights, 12)),
                tuple(np.round(state.transition, 12).ravel()),
            )
        )
    return outcomes
