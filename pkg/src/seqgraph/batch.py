"""Replication-vectorized kernels behind the Monte Carlo harness.

Every function here mirrors a scalar operation from :mod:`seqgraph.graph`,
:mod:`seqgraph.engine`, :mod:`seqgraph.compatible`, or
:mod:`seqgraph.informative`, with a leading replication axis so thousands of
simulated trials reduce to a handful of array operations. Scalar/batch
equivalence is enforced by tests; the scalar modules remain the reference
implementations.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

from .errors import DimensionMismatch
from .graph import _MAX_SHIFT_EXPONENT, GraphSpec, local_level_fractions_batch, replay_rejections
from .informative import IterationConfig

NEG_INF = float("-inf")
_BISECT_ITERS = 60
_DOUBLINGS = 45


def _eliminate(w, g, rows, j):
    """Reject node ``j[i]`` in replication ``rows[i]``, in place."""
    n = np.arange(len(rows))
    wj = w[rows, j]
    w[rows] += wj[:, None] * g[rows, j, :]
    w[rows, j] = 0.0
    gin = g[rows, :, j].copy()
    gout = g[rows, j, :].copy()
    denom = 1.0 - gin * gout
    ok = denom > 0
    denom = np.where(ok, denom, 1.0)
    gnew = (g[rows] + gin[:, :, None] * gout[:, None, :]) / denom[:, :, None]
    gnew = np.where(ok[:, :, None], gnew, 0.0)
    gnew[n, j, :] = 0.0
    gnew[n, :, j] = 0.0
    m = w.shape[1]
    di = np.arange(m)
    gnew[:, di, di] = 0.0
    g[rows] = gnew


def batch_reject(w, g, p, alpha, rejected):
    """One full rejection sweep per replication (lowest eligible index first).

    Mutates ``w``/``g`` and returns the boolean mask of new rejections.
    """
    newly = np.zeros_like(rejected)
    while True:
        elig = ~rejected & ~newly & (p <= w * alpha)
        rows = np.flatnonzero(elig.any(axis=1))
        if rows.size == 0:
            return newly
        j = np.argmax(elig[rows], axis=1)
        _eliminate(w, g, rows, j)
        newly[rows, j] = True


class BatchPValues:
    """Repeated/sequential p-values for a whole array of simulated trials.

    Args:
        plans: one HypothesisPlan per hypothesis (tables are shared).
        estimates: (R, m, K) stagewise estimates.
        std_errors: (R, m, K) standard errors.
    """

    def __init__(self, plans, estimates, std_errors):
        self.tables = [p.table() for p in plans]
        self.est = np.asarray(estimates, dtype=float)
        self.se = np.asarray(std_errors, dtype=float)
        if self.est.ndim != 3 or self.est.shape != self.se.shape:
            raise DimensionMismatch("estimates/std_errors must be (R, m, K)-shaped")
        if self.est.shape[1] != len(plans):
            raise DimensionMismatch("one plan per hypothesis required")

    @property
    def n_reps(self):
        return self.est.shape[0]

    @property
    def m(self):
        return self.est.shape[1]

    @property
    def n_stages(self):
        return self.est.shape[2]

    def _rows(self, rows):
        return np.arange(self.n_reps) if rows is None else rows

    def _log_rep_col(self, j, k, x, rows):
        est = self.est[rows, j, k]
        se = self.se[rows, j, k]
        neg = np.isneginf(x)
        lp = log_ndtr((np.where(neg, 0.0, x) - est) / se)
        out = np.asarray(self.tables[j].log_repeated_level(lp, k), dtype=float)
        out[neg] = NEG_INF
        return out

    def _inv_col(self, j, k, lg, rows):
        est = self.est[rows, j, k]
        se = self.se[rows, j, k]
        finite = ~np.isneginf(lg)
        z = -ndtri_exp(self.tables[j].log_levels(np.where(finite, lg, -1.0), k))
        with np.errstate(invalid="ignore"):
            return np.where(finite, est - se * z, NEG_INF)

    def log_p_col(self, lam, j, stages, x, rows=None):
        """log p^lam for hypothesis j at per-replication stages, shifted by x."""
        rows = self._rows(rows)
        stages = np.asarray(stages)
        out = np.empty(len(rows))
        if lam == "r":
            for k in np.unique(stages):
                mask = stages == k
                out[mask] = self._log_rep_col(j, int(k), x[mask], rows[mask])
        else:
            out.fill(np.inf)
            for s in range(self.n_stages):
                mask = stages >= s
                if not mask.any():
                    break
                out[mask] = np.minimum(out[mask], self._log_rep_col(j, s, x[mask], rows[mask]))
        return out

    def inverse_log_col(self, lam, j, stages, lg, rows=None):
        """Shift with log p^lam equal to lg, per replication."""
        rows = self._rows(rows)
        stages = np.asarray(stages)
        out = np.full(len(rows), NEG_INF)
        if lam == "r":
            for k in np.unique(stages):
                mask = stages == k
                out[mask] = self._inv_col(j, int(k), lg[mask], rows[mask])
        else:
            for s in range(self.n_stages):
                mask = stages >= s
                if not mask.any():
                    break
                out[mask] = np.maximum(out[mask], self._inv_col(j, s, lg[mask], rows[mask]))
        return out

    def log_p(self, lam, stages, x, rows=None):
        rows = self._rows(rows)
        out = np.empty((len(rows), self.m))
        for j in range(self.m):
            out[:, j] = self.log_p_col(lam, j, stages[:, j], x[:, j], rows)
        return out

    def inverse_log(self, lam, stages, lg, rows=None):
        rows = self._rows(rows)
        out = np.empty((len(rows), self.m))
        for j in range(self.m):
            out[:, j] = self.inverse_log_col(lam, j, stages[:, j], lg[:, j], rows)
        return out


def batch_run_trial(graph: GraphSpec, bp: BatchPValues, alpha, lam, n_stages, stop_on_reject=True):
    """Stagewise graphical test over all replications.

    Returns:
        (history, taus): history is a list of (R, m) rejection masks per
        stage; taus the (R, m) final data stages.
    """
    R, m = bp.n_reps, bp.m
    w = np.broadcast_to(graph.weights, (R, m)).copy()
    g = np.broadcast_to(graph.transition, (R, m, m)).copy()
    rejected = np.zeros((R, m), dtype=bool)
    taus = np.full((R, m), n_stages - 1)
    collecting = np.ones((R, m), dtype=bool)
    history = []
    zeros = np.zeros((R, m))
    for k in range(n_stages):
        kj = np.minimum(taus, k)
        p = np.exp(bp.log_p(lam, kj, zeros))
        rejected = rejected | batch_reject(w, g, p, alpha, rejected)
        history.append(rejected.copy())
        if lam == "r" and stop_on_reject:
            stop = rejected & collecting
            taus[stop] = k
            collecting &= ~stop
    return history, taus


def _group_bits(masks):
    m = masks.shape[1]
    return masks @ (1 << np.arange(m))


def batch_adjust_test(graph: GraphSpec, rejected_s, taus, alpha, bp: BatchPValues):
    """Retest every sequentially rejected hypothesis at its closed-test level."""
    R, m = rejected_s.shape
    zeros = np.zeros((R, m))
    log_p = bp.log_p("r", taus, zeros)
    out = np.zeros((R, m), dtype=bool)
    bits = _group_bits(rejected_s)
    for b in np.unique(bits):
        rows = np.flatnonzero(bits == b)
        rset = {j for j in range(m) if b & (1 << j)}
        for j in rset:
            level = replay_rejections(graph, rset - {j}).weights[j] * alpha
            with np.errstate(divide="ignore"):
                out[rows, j] = log_p[rows, j] <= (np.log(level) if level > 0 else NEG_INF)
    return out


def batch_compatible(graph: GraphSpec, rejected, stages, bp: BatchPValues, lam, alpha):
    """Compatible lower bounds per replication (grouped by rejection set)."""
    R, m = rejected.shape
    lg = np.full((R, m), NEG_INF)
    clamp_zero = np.zeros((R, m), dtype=bool)
    floor_zero = np.zeros((R, m), dtype=bool)
    bits = _group_bits(rejected)
    for b in np.unique(bits):
        rows = bits == b
        rset = {j for j in range(m) if b & (1 << j)}
        if len(rset) == m:
            ew = graph.exhaustion_weights
            for j in range(m):
                if ew[j] > 0:
                    lg[rows, j] = np.log(ew[j] * alpha)
                floor_zero[rows, j] = True
            continue
        weights = replay_rejections(graph, rset).weights
        for j in range(m):
            if j in rset:
                clamp_zero[rows, j] = True
            elif weights[j] > 0:
                lg[rows, j] = np.log(weights[j] * alpha)
    lower = bp.inverse_log(lam, stages, lg)
    lower = np.where(floor_zero, np.maximum(lower, 0.0), lower)
    return np.where(clamp_zero, 0.0, lower)


def batch_compatible_adjustment(graph: GraphSpec, r_s, r_c, taus, bp: BatchPValues, alpha):
    """Lower bounds compatible with the batch efficient-adjustment test."""
    R, m = r_s.shape
    lg = np.full((R, m), NEG_INF)
    clamp_zero = np.zeros((R, m), dtype=bool)
    floor_zero = np.zeros((R, m), dtype=bool)
    bits = _group_bits(r_s)
    for b in np.unique(bits):
        rows_b = bits == b
        rset = {j for j in range(m) if b & (1 << j)}
        all_rejected = len(rset) == m
        for j in range(m):
            in_c = rows_b & r_c[:, j]
            out_c = rows_b & ~r_c[:, j]
            if all_rejected:
                ew = graph.exhaustion_weights[j]
                if ew > 0:
                    lg[in_c, j] = np.log(ew * alpha)
                floor_zero[in_c, j] = True
            else:
                clamp_zero[in_c, j] = True
            if out_c.any():
                level = replay_rejections(graph, rset - {j}).weights[j] * alpha
                if level > 0:
                    lg[out_c, j] = np.log(level)
    lower = bp.inverse_log("r", taus, lg)
    lower = np.where(floor_zero, np.maximum(lower, 0.0), lower)
    return np.where(clamp_zero, 0.0, lower)


def _shift_exponents(v):
    return np.minimum(np.maximum(v, 0.0), _MAX_SHIFT_EXPONENT)


def _log_nu(graph, vec, logq):
    pos = _shift_exponents(vec)
    frac = local_level_fractions_batch(graph, np.exp(pos * logq))
    with np.errstate(divide="ignore"):
        return np.where(frac > 0, np.log(np.where(frac > 0, frac, 1.0)) - pos * logq, NEG_INF)


def _solve(bp, lam, stages, c, logq, rows):
    """Elementwise root of log p(x) = (x v 0) * logq + c (see scalar solver)."""
    n, m = c.shape
    x = np.full((n, m), NEG_INF)
    finite = ~np.isneginf(c)
    if not finite.any():
        return x
    lp0 = bp.log_p(lam, stages, np.zeros((n, m)), rows)
    closed = finite & (lp0 >= c)
    if closed.any():
        inv = bp.inverse_log(lam, stages, np.where(closed, c, -1.0), rows)
        x[closed] = inv[closed]
    pos = finite & ~closed
    if pos.any():
        lo = np.zeros((n, m))
        hi = np.ones((n, m))
        for _ in range(_DOUBLINGS):
            f_hi = bp.log_p(lam, stages, hi, rows) - hi * logq - c
            grow = pos & (f_hi < 0)
            if not grow.any():
                break
            lo[grow] = hi[grow]
            hi[grow] *= 2.0
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            below = bp.log_p(lam, stages, mid, rows) - mid * logq < c
            lo = np.where(pos & below, mid, lo)
            hi = np.where(pos & ~below, mid, hi)
        x[pos] = (0.5 * (lo + hi))[pos]
    return x


def _gap_rows(mu, rho):
    mismatch = np.isneginf(mu) ^ np.isneginf(rho)
    d = np.where(np.isneginf(mu), 0.0, rho) - np.where(np.isneginf(mu), 0.0, mu)
    gap = np.sqrt(np.sum(d * d, axis=1))
    return np.where(mismatch.any(axis=1), np.inf, gap)


def default_starts(graph, bp: BatchPValues, stages, lam, alpha, delta0, rows=None):
    """Batch version of the always-valid starting vectors."""
    rows = bp._rows(rows)
    n = len(rows)
    with np.errstate(divide="ignore"):
        lg = np.broadcast_to(
            np.where(graph.weights > 0, np.log(graph.weights * alpha), NEG_INF), (n, graph.m)
        )
    lower = np.minimum(0.0, bp.inverse_log(lam, stages, lg, rows))
    upper = bp.inverse_log(lam, stages, np.full((n, graph.m), np.log(alpha + delta0)), rows)
    return lower, upper


def batch_primary(graph, bp: BatchPValues, stages, lam, alpha, cfg: IterationConfig, start_lower=None):
    """Bracketed fixed-point iteration across replications.

    Start vectors are trusted (callers pass theoretically valid warm starts);
    the scalar implementation is the validating reference.

    Returns:
        (lower, upper, gap, converged) arrays with leading axis R.
    """
    R, m = stages.shape
    logq = np.log(cfg.q)
    log_alpha = np.log(alpha)
    d0 = cfg.delta(alpha, 0)
    def_lower, upper = default_starts(graph, bp, stages, lam, alpha, d0)
    lower = def_lower if start_lower is None else np.asarray(start_lower, dtype=float).copy()
    gap = _gap_rows(lower, upper)
    active = np.flatnonzero(gap >= cfg.epsilon)
    ell = 0
    while active.size and ell < cfg.max_iters:
        mu = lower[active]
        rho = upper[active]
        st = stages[active]
        c_lo = _log_nu(graph, mu, logq) + log_alpha
        c_hi = _log_nu(graph, rho, logq) + np.log(alpha + cfg.delta(alpha, ell))
        mu = np.maximum(mu, _solve(bp, lam, st, c_lo, logq, active))
        rho = np.minimum(rho, _solve(bp, lam, st, c_hi, logq, active))
        mu[mu < cfg.floor] = NEG_INF
        rho[rho < cfg.floor] = NEG_INF
        lower[active] = mu
        upper[active] = rho
        gap[active] = _gap_rows(mu, rho)
        active = active[gap[active] >= cfg.epsilon]
        ell += 1
    return lower, upper, gap, gap < cfg.epsilon


def batch_isci(graph, bp: BatchPValues, alpha, lam, n_stages, cfg, stop_on_reject=True):
    """Stagewise informative bounds across replications with warm starts.

    Returns:
        (lowers, rejections, taus): per-stage (R, m) bound arrays and
        rejection masks, plus final data stages.
    """
    R, m = bp.n_reps, bp.m
    taus = np.full((R, m), n_stages - 1)
    collecting = np.ones((R, m), dtype=bool)
    d0 = cfg.delta(alpha, 0)
    lowers, rejections = [], []
    prev_lower = None
    prev_rej = None
    for k in range(n_stages):
        stages_k = np.minimum(taus, k)
        start = None
        if prev_lower is not None:
            if lam == "s":
                start = prev_lower
            elif stop_on_reject:
                start, _ = default_starts(graph, bp, stages_k, lam, alpha, d0)
                start = np.where(prev_rej, prev_lower, start)
        lower, _, _, _ = batch_primary(graph, bp, stages_k, lam, alpha, cfg, start_lower=start)
        rej = lower >= 0.0
        lowers.append(lower)
        rejections.append(rej)
        prev_lower, prev_rej = lower, rej
        if lam == "r" and stop_on_reject:
            stop = rej & collecting
            taus[stop] = k
            collecting &= ~stop
    return lowers, rejections, taus


def batch_isci_adjustment(graph, bp: BatchPValues, lower_s, taus, alpha, q):
    """Batch informative retest of the sequential bounds (repeated p-values)."""
    R, m = lower_s.shape
    logq = np.log(q)
    log_alpha = np.log(alpha)
    lower_c = np.empty((R, m))
    for j in range(m):
        def log_omega(xj):
            v = lower_s.copy()
            v[:, j] = xj
            frac = local_level_fractions_batch(graph, np.exp(_shift_exponents(v) * logq))[:, j]
            with np.errstate(divide="ignore"):
                return np.where(frac > 0, np.log(np.where(frac > 0, frac, 1.0)), NEG_INF)

        st = taus[:, j]
        lw0 = log_omega(np.zeros(R))
        have = ~np.isneginf(lw0)
        root = bp.inverse_log_col("r", j, st, np.where(have, lw0 + log_alpha, -1.0))
        pos = have & (root > 0)
        if pos.any():
            lo = np.zeros(R)
            hi = np.where(pos, root, 1.0)
            f_hi = bp.log_p_col("r", j, st, hi) - log_omega(hi) - log_alpha
            widen = pos & (f_hi < 0)
            if widen.any():
                cap = bp.inverse_log_col("r", j, st, np.full(R, log_alpha))
                hi = np.where(widen, cap, hi)
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                below = bp.log_p_col("r", j, st, mid) - log_omega(mid) - log_alpha < 0
                lo = np.where(pos & below, mid, lo)
                hi = np.where(pos & ~below, mid, hi)
            root = np.where(pos, 0.5 * (lo + hi), root)
        lower_c[:, j] = np.where(have, np.minimum(root, lower_s[:, j]), NEG_INF)
    return lower_c
