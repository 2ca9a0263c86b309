"""Informative simultaneous lower confidence bounds for graphical GSDs.

The bounds are characterized component-wise by the fixed-point equation
``p_{j,k_j*}(L_j) = q**(L_j v 0) * nu_j(L) * alpha``, where the shifted local
levels come from the dual-graph construction in :mod:`seqgraph.graph`. The
primary algorithm brackets the solution between a lower sequence (iterating
the equation at level alpha, non-decreasing) and an upper sequence (at level
alpha + delta with delta -> 0, non-increasing); both converge to the same
limit. Stagewise drivers warm-start from the previous stage's bounds, and a
follow-up adjustment retests each hypothesis with its repeated p-value using
the evidence the other sequential bounds provide.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidStartVector, InvalidWeight, NotCollecting, OutOfDomain
from .graph import _MAX_SHIFT_EXPONENT, GraphSpec, local_level_fractions_batch

NEG_INF = float("-inf")
_BISECT_ITERS = 80
_START_TOL = 1e-7


@dataclass(frozen=True)
class IterationConfig:
    """Tuning knobs for the bracketed fixed-point iteration.

    Attributes:
        q: information weight in (0, 1); smaller values keep the induced test
            closer to the underlying graphical test.
        epsilon: Euclidean gap tolerance between lower and upper iterates
            (matched -inf components are excluded from the norm).
        max_iters: iteration cap; on timeout the still-valid lower bound is
            returned with ``converged=False``.
        delta0: first element of the slack sequence delta_l = delta0 * 2**-l;
            defaults to min(0.9 * (1 - alpha), 0.1).
        floor: iterates below this value are reported as -inf.
    """

    q: float
    epsilon: float = 1e-6
    max_iters: int = 500
    delta0: float | None = None
    floor: float = -1e6

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise InvalidWeight(f"information weight must be in (0, 1), got {self.q}")
        if not self.epsilon > 0:
            raise OutOfDomain("epsilon must be positive")
        if self.max_iters < 1:
            raise OutOfDomain("max_iters must be at least 1")
        if not self.floor < 0:
            raise OutOfDomain("divergence floor must be negative")

    def delta(self, alpha: float, ell: int) -> float:
        """Slack delta_l: strictly decreasing to 0 with alpha + delta_0 < 1."""
        d0 = self.delta0 if self.delta0 is not None else min(0.9 * (1.0 - alpha), 0.1)
        if not 0 < d0 < 1 - alpha:
            raise OutOfDomain("delta0 must satisfy 0 < delta0 < 1 - alpha")
        return d0 * 0.5**ell


@dataclass(frozen=True)
class BoundsBracket:
    """Lower/upper iterates enclosing the informative bound vector.

    Attributes:
        lower: valid 1 - alpha simultaneous lower confidence bounds.
        upper: upper enclosure of the limit (also a bound from above).
        gap: Euclidean distance between the two (matched -inf excluded).
        iterations: number of update steps performed.
        converged: gap fell below the configured tolerance.
    """

    lower: np.ndarray
    upper: np.ndarray
    gap: float
    iterations: int
    converged: bool


def _log_p(family, j, k, lam, x):
    if lam == "r":
        return family.log_repeated(j, k, x)
    return family.log_sequential(j, k, x)


def _shift_exponents(vec):
    return np.minimum(np.maximum(np.asarray(vec, dtype=float), 0.0), _MAX_SHIFT_EXPONENT)


def _log_nu(graph, vec, logq):
    """log nu_j(vec) for all j; -inf where the dual-graph level is zero."""
    pos = _shift_exponents(vec)
    frac = local_level_fractions_batch(graph, np.exp(pos * logq))
    with np.errstate(divide="ignore"):
        return np.where(frac > 0, np.log(np.where(frac > 0, frac, 1.0)) - pos * logq, NEG_INF)


def _solve_component(family, j, k, lam, c, logq):
    """Unique x with log p_{j,k}(x) = (x v 0) * logq + c.

    The left side is strictly increasing from -inf to 0 (p from 0 to 1), the
    right side is non-increasing, so the crossing is unique. For x <= 0 the
    right side is constant, giving the closed-form p-value inverse; otherwise
    the root is bracketed in (0, hi] and bisected.
    """
    if c == NEG_INF:
        return NEG_INF
    if _log_p(family, j, k, lam, 0.0) >= c:
        return family.inverse_log(j, k, lam, c)
    lo, hi = 0.0, 1.0
    while _log_p(family, j, k, lam, hi) - hi * logq < c:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:  # log p <= 0 and -x*logq -> inf guarantee a crossing
            break
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if _log_p(family, j, k, lam, mid) - mid * logq < c:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_start(graph, family, stages, lam, vec, level, logq, upper):
    lognu = _log_nu(graph, vec, logq)
    rhs = _shift_exponents(vec) * logq + lognu + np.log(level)
    side = "upper" if upper else "lower"
    for j in range(graph.m):
        lp = _log_p(family, j, stages[j], lam, vec[j])
        bad = (lp < rhs[j] - _START_TOL) if upper else (lp > rhs[j] + _START_TOL)
        if bad:
            raise InvalidStartVector(
                f"{side} start vector violates its validity condition at "
                f"component {j}: log p = {lp:.6g} vs target {rhs[j]:.6g}"
            )


def _gap(mu, rho):
    mu_inf = np.isneginf(mu)
    rho_inf = np.isneginf(rho)
    if np.any(mu_inf ^ rho_inf):
        return float("inf")
    d = np.where(mu_inf, 0.0, rho) - np.where(mu_inf, 0.0, mu)
    return float(np.sqrt(np.sum(d * d)))


def default_start_vectors(graph: GraphSpec, family, stages, lam: str, alpha: float, delta0: float):
    """Always-valid starting vectors for the bracketed iteration.

    The lower start is ``min(0, inverse at the initial local level)`` (the
    -inf sentinel where that level is 0); the upper start is the inverse at
    ``alpha + delta0``, valid because the shifted level factor never
    exceeds 1.
    """
    stages = np.asarray(stages, dtype=int)
    m = graph.m
    lower = np.empty(m)
    upper = np.empty(m)
    for j in range(m):
        lower[j] = min(0.0, family.inverse(j, stages[j], lam, graph.weights[j] * alpha))
        upper[j] = family.inverse(j, stages[j], lam, alpha + delta0)
    return lower, upper


def primary_algorithm(
    graph: GraphSpec,
    family,
    stages,
    lam: str,
    alpha: float,
    cfg: IterationConfig,
    start_lower=None,
    start_upper=None,
) -> BoundsBracket:
    """Bracketed fixed-point iteration for the informative bounds at one analysis.

    Args:
        stages: 0-based evaluation stage k_j* per hypothesis.
        lam: 'r' for repeated, 's' for sequential p-values.
        start_lower/start_upper: optional custom starting vectors; validated
            against their respective start conditions.

    Returns:
        BoundsBracket with ``lower <= limit <= upper`` componentwise.

    Raises:
        InvalidStartVector: a supplied start vector fails its condition.
    """
    if lam not in ("r", "s"):
        raise OutOfDomain(f"lambda must be 'r' or 's', got {lam!r}")
    if not 0 < alpha < 1:
        raise OutOfDomain("alpha must be in (0, 1)")
    stages = np.asarray(stages, dtype=int)
    if stages.shape != (graph.m,):
        raise OutOfDomain("stages must give one evaluation stage per hypothesis")
    logq = np.log(cfg.q)
    d0 = cfg.delta(alpha, 0)
    if start_lower is None or start_upper is None:
        dl, du = default_start_vectors(graph, family, stages, lam, alpha, d0)
        start_lower = dl if start_lower is None else start_lower
        start_upper = du if start_upper is None else start_upper
    mu = np.asarray(start_lower, dtype=float).copy()
    rho = np.asarray(start_upper, dtype=float).copy()
    _check_start(graph, family, stages, lam, mu, alpha, logq, upper=False)
    _check_start(graph, family, stages, lam, rho, alpha + d0, logq, upper=True)

    log_alpha = np.log(alpha)
    gap = _gap(mu, rho)
    iters = 0
    while gap >= cfg.epsilon and iters < cfg.max_iters:
        lognu_mu = _log_nu(graph, mu, logq)
        lognu_rho = _log_nu(graph, rho, logq)
        log_level_up = np.log(alpha + cfg.delta(alpha, iters))
        for j in range(graph.m):
            mu_j = _solve_component(family, j, stages[j], lam, lognu_mu[j] + log_alpha, logq)
            rho_j = _solve_component(family, j, stages[j], lam, lognu_rho[j] + log_level_up, logq)
            # The exact sequences are monotone; clamp out float noise.
            mu[j] = max(mu[j], mu_j)
            rho[j] = min(rho[j], rho_j)
        mu[mu < cfg.floor] = NEG_INF
        rho[rho < cfg.floor] = NEG_INF
        iters += 1
        gap = _gap(mu, rho)
    return BoundsBracket(lower=mu, upper=rho, gap=gap, iterations=iters, converged=gap < cfg.epsilon)


@dataclass
class ISCIResult:
    """Stagewise informative bounds for one trial run.

    Attributes:
        variant: 'r' or 's'.
        brackets: BoundsBracket per completed stage.
        rejections: rejection set {j : L_j >= 0} per completed stage.
        taus: final data stage (0-based) per hypothesis.
    """

    variant: str
    brackets: list = field(default_factory=list)
    rejections: list = field(default_factory=list)
    taus: np.ndarray | None = None

    @property
    def lower(self) -> np.ndarray:
        return self.brackets[-1].lower

    @property
    def rejected(self) -> frozenset:
        return self.rejections[-1]


def isci_stagewise(
    graph: GraphSpec,
    family,
    alpha: float,
    lam: str,
    n_stages: int,
    cfg: IterationConfig,
    stop_rule=None,
    stop_on_reject: bool = True,
) -> ISCIResult:
    """Run the informative-bound trial over all stages with warm starts.

    At each stage the primary algorithm is run at the hypotheses' last data
    stages; hypotheses with a non-negative bound are rejected. Warm starts:
    for lam='s' the previous stage's lower vector; for lam='r' (under
    stop-on-reject) the previous bounds in the rejected components. Data
    collection stops for newly rejected hypotheses when ``stop_on_reject``
    (mandatory for backward-consistent lam='r' inference) plus any indices
    from ``stop_rule(stage, rejections, lower)``.

    Raises:
        NotCollecting: a stop decision names an already-stopped hypothesis.
    """
    m = graph.m
    result = ISCIResult(variant=lam)
    collecting = set(range(m))
    taus: dict = {}
    prev_bracket = None
    prev_rejected: frozenset = frozenset()
    d0 = None
    for k in range(n_stages):
        stages_k = np.array([min(taus.get(j, n_stages - 1), k) for j in range(m)])
        start_lower = None
        if prev_bracket is not None:
            if lam == "s":
                start_lower = prev_bracket.lower.copy()
            elif stop_on_reject and prev_rejected:
                if d0 is None:
                    d0 = cfg.delta(alpha, 0)
                start_lower, _ = default_start_vectors(graph, family, stages_k, lam, alpha, d0)
                for j in prev_rejected:
                    start_lower[j] = prev_bracket.lower[j]
        try:
            bracket = primary_algorithm(
                graph, family, stages_k, lam, alpha, cfg, start_lower=start_lower
            )
        except InvalidStartVector:
            if start_lower is None:
                raise
            bracket = primary_algorithm(graph, family, stages_k, lam, alpha, cfg)
        rejected = frozenset(np.flatnonzero(bracket.lower >= 0.0).tolist())
        if lam == "r" and not stop_on_reject and prev_rejected - rejected:
            warnings.warn(
                "continuing data collection after rejection revoked an "
                "earlier rejection; lam='r' results are backward-inconsistent",
                stacklevel=2,
            )
        result.brackets.append(bracket)
        result.rejections.append(rejected)
        prev_bracket, prev_rejected = bracket, rejected

        stops = set(stop_rule(k, rejected, bracket.lower)) if stop_rule else set()
        bad = stops - collecting
        if bad:
            raise NotCollecting(f"data collection already ended for {sorted(bad)}")
        if lam == "r" and stop_on_reject:
            stops |= rejected & collecting
        for j in stops:
            taus[j] = k
        collecting -= stops
        if not collecting:
            break
    result.taus = np.array([min(taus.get(j, n_stages - 1), k) for j in range(m)])
    return result


def isci_efficient_adjustment(graph: GraphSpec, family, lower_s, taus, alpha: float, q: float):
    """Informative retest of the sequential bounds with repeated p-values.

    For each hypothesis the other components' sequential bounds are held
    fixed and the unique root of ``p^r_{j,tau_j}(x) = omega_j(x) * alpha`` is
    found, where omega_j is the dual-graph level fraction with the j-th shift
    replaced by x. Components whose level fraction vanishes at 0 get -inf.

    Returns:
        (lower_c, rejected): bound vector with lower_c <= lower_s and the
        index set {j : lower_c[j] >= 0}.
    """
    if not 0 < q < 1:
        raise InvalidWeight(f"information weight must be in (0, 1), got {q}")
    if not 0 < alpha < 1:
        raise OutOfDomain("alpha must be in (0, 1)")
    lower_s = np.asarray(lower_s, dtype=float)
    taus = np.asarray(taus, dtype=int)
    m = graph.m
    logq = np.log(q)
    log_alpha = np.log(alpha)

    def log_omega(j, x):
        v = lower_s.copy()
        v[j] = x
        frac = local_level_fractions_batch(graph, np.exp(_shift_exponents(v) * logq))[j]
        return np.log(frac) if frac > 0 else NEG_INF

    lower_c = np.empty(m)
    for j in range(m):
        lw0 = log_omega(j, 0.0)
        if lw0 == NEG_INF:
            lower_c[j] = NEG_INF
            continue
        root = family.inverse_log(j, taus[j], "r", lw0 + log_alpha)
        if root > 0:
            # omega_j is constant below 0 and non-increasing above, so the
            # crossing with the increasing repeated p-value lies in [0, root].
            lo, hi = 0.0, root
            if family.log_repeated(j, taus[j], hi) - (log_omega(j, hi) + log_alpha) < 0:
                hi = family.inverse(j, taus[j], "r", alpha)  # omega <= 1 caps the root
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                if family.log_repeated(j, taus[j], mid) - (log_omega(j, mid) + log_alpha) < 0:
                    lo = mid
                else:
                    hi = mid
            root = 0.5 * (lo + hi)
        lower_c[j] = min(root, lower_s[j])
    rejected = frozenset(np.flatnonzero(lower_c >= 0.0).tolist())
    return lower_c, rejected
