"""Error spending, nominal levels, and repeated/sequential p-value families.

Nominal levels come from the classical stagewise recursion: maintain the
sub-density of the Brownian-scale statistic given no earlier boundary
crossing and root-find each stage's boundary so the crossing mass equals the
spent increment. Two implementations share that scheme:

* :func:`nominal_levels` — one level path, per-stage grids anchored exactly
  at the previous boundary (no truncation error at the boundary cell);
* :class:`BoundaryTable` — the same recursion vectorized over a geometric
  grid of spending levels on a fixed grid, cached per design, giving fast
  monotone log-log interpolation both ways. Forward and inverse lookups use
  the same piecewise-linear knots, so round-trip identities hold to float
  precision by construction.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve
from scipy.special import log_ndtr, ndtr, ndtri, ndtri_exp

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    MissingObservation,
    OutOfDomain,
    SpendingMonotonicityViolation,
    SpentIncrementNonpositive,
)

GRID_POINTS = 6000
Z_SPAN = 8.5
H_STEP = 2 * Z_SPAN / (GRID_POINTS - 1)
_B_MAX = 9.5  # Brownian-scale boundary clamp; crossing mass beyond is ~1e-21.
OBF_MONOTONE_LIMIT = 0.318

_SQRT_2PI = np.sqrt(2 * np.pi)


def _phi(x, s):
    return np.exp(-0.5 * (x / s) ** 2) / (s * _SQRT_2PI)


@dataclass(frozen=True)
class SpendingFunction:
    """Error-spending function a(gamma, t).

    Attributes:
        kind: one of ``pocock_like``, ``obf_like``, ``power``.
        rho: exponent for ``power`` (must be > 0); ignored otherwise.
    """

    kind: str
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in ("pocock_like", "obf_like", "power"):
            raise OutOfDomain(f"unknown spending kind {self.kind!r}")
        if self.kind == "power":
            if self.rho is None or not self.rho > 0:
                raise OutOfDomain("power spending needs rho > 0")

    def __call__(self, gamma, t):
        return spend(self, gamma, t)


def spend(f: SpendingFunction, gamma, t):
    """Evaluate the spent level a(gamma, t).

    Args:
        gamma: overall level(s) in (0, 1].
        t: information fraction(s) in [0, 1].
    """
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(gamma <= 0) or np.any(gamma > 1):
        raise OutOfDomain("gamma must be in (0, 1]")
    if np.any(t < 0) or np.any(t > 1):
        raise OutOfDomain("information fraction must be in [0, 1]")
    if f.kind == "pocock_like":
        out = gamma * np.log1p((np.e - 1) * t)
    elif f.kind == "power":
        out = gamma * t**f.rho
    else:
        z = -ndtri(gamma / 2)
        with np.errstate(divide="ignore"):
            arg = np.where(t > 0, z / np.sqrt(np.maximum(t, 1e-300)), np.inf)
        out = 2 * ndtr(-arg)
    return out if out.ndim else float(out)


def validate_fractions(fractions) -> np.ndarray:
    """Check an information schedule: strictly increasing in (0, 1], ending at 1."""
    t = np.asarray(fractions, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise DimensionMismatch("information schedule must be a non-empty vector")
    if np.any(t <= 0) or np.any(t > 1) or np.any(np.diff(t) <= 0):
        raise OutOfDomain("information fractions must be strictly increasing in (0, 1]")
    if abs(t[-1] - 1.0) > 1e-12:
        raise OutOfDomain("final information fraction must equal 1")
    return t


def _spent_increments(f, t, gamma):
    spent = spend(f, gamma, t[:, None] if np.ndim(gamma) else t)
    d = np.diff(np.atleast_1d(spent), axis=0, prepend=0.0) if np.ndim(gamma) else np.diff(
        spent, prepend=0.0
    )
    if np.any(d <= 0):
        raise SpentIncrementNonpositive(
            "spending increments must be strictly positive at every stage"
        )
    return d


def _warn_obf(f, gamma):
    if f.kind == "obf_like" and np.any(np.asarray(gamma) >= OBF_MONOTONE_LIMIT):
        warnings.warn(
            "O'Brien-Fleming-like spending: level monotonicity is only proven "
            f"below {OBF_MONOTONE_LIMIT}; checking numerically",
            stacklevel=3,
        )


def nominal_levels(f: SpendingFunction, fractions, gamma: float) -> np.ndarray:
    """Nominal significance levels for one level path.

    Returns the vector of per-stage levels such that the probability (under
    the null, with covariance sqrt(t_k/t_k')) of first crossing at stage k
    equals the spent increment a(gamma, t_k) - a(gamma, t_{k-1}).
    """
    t = validate_fractions(fractions)
    if not 0 < gamma <= 1:
        raise OutOfDomain("gamma must be in (0, 1]")
    _warn_obf(f, gamma)
    d = _spent_increments(f, t, gamma)
    K = len(t)
    out = np.empty(K)
    out[0] = d[0]
    if K == 1:
        return out

    b = np.sqrt(t[0]) * (-ndtri(d[0]))
    N = int(np.ceil((b + Z_SPAN) / H_STEP)) + 1
    x = b - H_STEP * np.arange(N)
    dens = _phi(x, np.sqrt(t[0]))
    for k in range(1, K):
        s = np.sqrt(t[k] - t[k - 1])
        w = np.full(N, H_STEP)
        w[0] *= 0.5
        w[-1] *= 0.5
        a = dens * w

        def cross(bn):
            return float(np.sum(a * ndtr(-(bn - x) / s)))

        total = float(a.sum())
        if d[k] >= total:
            # Only possible when gamma = 1 exhausts the level at the final
            # stage; the boundary drops to -inf and the stage always rejects.
            if k < K - 1 or d[k] > total * (1 + 1e-4):
                raise ConvergenceFailure(
                    f"stage {k + 1} spent increment exceeds the remaining no-crossing mass"
                )
            out[k] = 1.0
            continue
        if cross(_B_MAX) >= d[k]:
            bn = _B_MAX
        else:
            bn = brentq(lambda v: cross(v) - d[k], -Z_SPAN, _B_MAX, xtol=1e-10)
        out[k] = float(ndtr(-bn / np.sqrt(t[k])))
        if k < K - 1:
            Nn = int(np.ceil((bn + Z_SPAN) / H_STEP)) + 1
            delta = bn - b
            lags = np.arange(N + Nn - 1) - (Nn - 1)
            kv = _phi(delta + lags * H_STEP, s)
            dens = fftconvolve(a, kv[::-1])[N - 1 : N - 1 + Nn]
            np.maximum(dens, 0.0, out=dens)
            b, N = bn, Nn
            x = b - H_STEP * np.arange(N)
    return out


def _truncate_rows(F, x, b, h):
    """Zero density rows above their boundary, preserving the partial-cell mass.

    The node just above each row's boundary absorbs the partial-cell integral
    (minus the trapezoid end correction) so that a full-weight Riemann sum of
    the returned samples reproduces the truncated integral to O(h^2).
    """
    idx = np.clip(((b - x[0]) / h).astype(int), 0, len(x) - 2)
    rows = np.arange(F.shape[0])
    g_lo = F[rows, idx]
    g_hi = F[rows, idx + 1]
    frac = np.clip((b - x[idx]) / h, 0.0, 1.0)
    g_at_b = g_lo + frac * (g_hi - g_lo)
    partial = frac * h * 0.5 * (g_lo + g_at_b)
    out = np.where(x[None, :] <= b[:, None], F, 0.0)
    out[rows, idx + 1] = np.maximum(partial / h - 0.5 * g_lo, 0.0)
    return out


class BoundaryTable:
    """Cached nominal-level curves for one spending function and schedule.

    Stores log nominal levels on a geometric grid of spending levels and
    interpolates linearly in log-log space. Inversion uses the same knots, so
    ``level -> gamma -> level`` round trips are exact up to float rounding.
    """

    GAMMA_MIN = 1e-14
    N_GAMMA = 160

    def __init__(self, spending: SpendingFunction, fractions, n_gamma: int | None = None):
        self.spending = spending
        self.fractions = validate_fractions(fractions)
        t = self.fractions
        G = n_gamma or self.N_GAMMA
        gamma_max = 0.6 if spending.kind == "obf_like" else 1.0
        self.log_gamma = np.linspace(np.log(self.GAMMA_MIN), np.log(gamma_max), G)
        gam = np.exp(self.log_gamma)
        K = len(t)
        d = _spent_increments(spending, t, gam)  # (K, G)

        alph = np.empty((K, G))
        alph[0] = d[0]
        if K > 1:
            h = H_STEP
            N = int(np.ceil((Z_SPAN + _B_MAX) / h)) + 1
            x = -Z_SPAN + h * np.arange(N)
            s0 = np.sqrt(t[0])
            b = s0 * (-ndtri(d[0]))
            F = _truncate_rows(np.broadcast_to(_phi(x, s0), (G, N)).copy(), x, b, h)
            for k in range(1, K):
                s = np.sqrt(t[k] - t[k - 1])
                R = min(N - 1, int(np.ceil(10.5 * s / h)))
                kv = _phi(np.arange(-R, R + 1) * h, s) * h
                Gk = fftconvolve(F, kv[None, :], mode="same", axes=1)
                np.maximum(Gk, 0.0, out=Gk)
                rev = np.cumsum(Gk[:, ::-1], axis=1)[:, ::-1]
                tail = h * (rev - 0.5 * Gk - 0.5 * Gk[:, -1:])
                dk = d[k]
                exhausted = tail[:, 0] <= dk
                if np.any(exhausted):
                    # Legal only when gamma = 1 spends everything by the
                    # final stage (boundary -inf, level 1).
                    if k < K - 1 or np.any(dk[exhausted] > tail[exhausted, 0] * (1 + 1e-4)):
                        raise ConvergenceFailure(
                            "spent increment exceeds the remaining no-crossing mass"
                        )
                idx = (tail >= dk[:, None]).sum(axis=1) - 1
                idx = np.clip(idx, 0, N - 2)
                rows = np.arange(G)
                t_lo = tail[rows, idx]
                t_hi = tail[rows, idx + 1]
                with np.errstate(invalid="ignore", divide="ignore"):
                    frac = np.where(t_lo > t_hi, (t_lo - dk) / (t_lo - t_hi), 0.0)
                b = np.minimum(x[idx] + np.clip(frac, 0.0, 1.0) * h, _B_MAX)
                alph[k] = np.where(exhausted, 1.0, ndtr(-b / np.sqrt(t[k])))
                if k < K - 1:
                    F = _truncate_rows(Gk, x, b, h)

        self.log_alpha = np.log(alph)
        # Largest strictly increasing run per stage; inversion is refused
        # outside it (can be a strict subrange for OBF-like spending).
        self._lo = np.zeros(K, dtype=int)
        self._hi = np.full(K, G - 1, dtype=int)
        for k in range(K):
            inc = np.diff(self.log_alpha[k]) > 0
            if inc.all():
                continue
            best_len, best_lo = 0, 0
            i = 0
            while i < G - 1:
                if not inc[i]:
                    i += 1
                    continue
                j = i
                while j < G - 1 and inc[j]:
                    j += 1
                if j - i + 1 > best_len:
                    best_len, best_lo = j - i + 1, i
                i = j
            self._lo[k] = best_lo
            self._hi[k] = best_lo + best_len - 1
            if spending.kind != "obf_like":
                # The reversed-cumsum tail has an absolute noise floor near
                # 1e-17, so knots whose spent increment falls below it (tiny
                # gamma, or nearly equal fractions) come out garbled. When the
                # damage is confined to the extreme bottom of the grid, keep
                # the clean window; lookups below it extrapolate.
                if self._hi[k] < G - 1 or self.log_gamma[best_lo] > np.log(1e-9):
                    raise SpendingMonotonicityViolation(
                        f"nominal levels not monotone in gamma at stage {k + 1}"
                    )

    @property
    def K(self) -> int:
        return len(self.fractions)

    def _window(self, k):
        lo, hi = self._lo[k], self._hi[k]
        return self.log_gamma[lo : hi + 1], self.log_alpha[k, lo : hi + 1]

    def log_levels(self, log_gamma, k: int):
        """log nominal level at stage k (0-based) for log gamma, vectorized."""
        lg, la = self._window(k)
        log_gamma = np.asarray(log_gamma, dtype=float)
        out = np.interp(log_gamma, lg, la)
        lo_slope = (la[1] - la[0]) / (lg[1] - lg[0])
        out = np.where(log_gamma < lg[0], la[0] + (log_gamma - lg[0]) * lo_slope, out)
        if np.any(log_gamma > lg[-1]):
            if self._hi[k] < len(self.log_gamma) - 1 or self.spending.kind == "obf_like":
                out = self._exact_above(log_gamma, k, out, lg[-1])
        return out

    def _exact_above(self, log_gamma, k, out, cap):
        # Forward evaluation is well defined beyond the monotone window; fall
        # back to the exact recursion for those (rare) arguments.
        flat = np.atleast_1d(log_gamma).ravel()
        res = np.atleast_1d(np.array(out, dtype=float, copy=True)).ravel()
        for i in np.flatnonzero(flat > cap):
            res[i] = np.log(nominal_levels(self.spending, self.fractions, np.exp(flat[i]))[k])
        return res.reshape(np.shape(out)) if np.ndim(out) else float(res[0])

    def levels(self, gamma, k: int):
        """Nominal level at stage k (0-based) for gamma, vectorized."""
        return np.exp(self.log_levels(np.log(gamma), k))

    def log_gamma_of_level(self, log_level, k: int):
        """Inverse lookup: log gamma with nominal level equal to the input.

        Inputs above the stage's largest attainable level map to log(1) = 0
        when the full gamma range is monotone (the repeated p-value is then
        1 by convention); otherwise the inversion is refused.

        Raises:
            SpendingMonotonicityViolation: level beyond the monotone window
                of an OBF-like table.
        """
        lg, la = self._window(k)
        log_level = np.asarray(log_level, dtype=float)
        above = log_level > la[-1]
        if np.any(above):
            if self._hi[k] < len(self.log_gamma) - 1 or lg[-1] < 0:
                raise SpendingMonotonicityViolation(
                    "level beyond the numerically monotone gamma range; "
                    "cannot invert the nominal-level curve at stage "
                    f"{k + 1}"
                )
        out = np.interp(log_level, la, lg)
        lo_slope = (lg[1] - lg[0]) / (la[1] - la[0])
        out = np.where(log_level < la[0], lg[0] + (log_level - la[0]) * lo_slope, out)
        out = np.where(above, 0.0, out)
        return out

    def repeated_level(self, log_p, k: int):
        """Map a stage-k local p-value (given as log p) to its repeated p-value."""
        return np.exp(self.log_repeated_level(log_p, k))

    def log_repeated_level(self, log_p, k: int):
        """Log-space version of :meth:`repeated_level` (stable for tiny p)."""
        lg, la = self._window(k)
        log_p = np.asarray(log_p, dtype=float)
        if self._hi[k] == len(self.log_gamma) - 1 and lg[-1] >= 0.0:
            capped = log_p > la[-1]
            out = self.log_gamma_of_level(np.minimum(log_p, la[-1]), k)
            return np.where(capped, 0.0, out)
        return self.log_gamma_of_level(log_p, k)

    def z_of_gamma(self, gamma, k: int):
        """Standard-normal boundary quantile at stage k for level path gamma."""
        return -ndtri_exp(self.log_levels(np.log(gamma), k))


_TABLE_CACHE: dict = {}
_TABLE_LOCK = threading.Lock()


def get_table(spending: SpendingFunction, fractions, n_gamma: int | None = None) -> BoundaryTable:
    """Memoized BoundaryTable lookup (thread-safe)."""
    t = validate_fractions(fractions)
    key = (spending.kind, spending.rho, tuple(np.round(t, 12)), n_gamma)
    with _TABLE_LOCK:
        tab = _TABLE_CACHE.get(key)
    if tab is None:
        tab = BoundaryTable(spending, t, n_gamma)
        with _TABLE_LOCK:
            _TABLE_CACHE.setdefault(key, tab)
    return tab


NEG_INF = float("-inf")


@dataclass(frozen=True)
class HypothesisPlan:
    """Spending function and information schedule for one hypothesis."""

    spending: SpendingFunction
    fractions: tuple

    def table(self) -> BoundaryTable:
        return get_table(self.spending, self.fractions)


class PValueFamily:
    """Repeated and sequential p-values for one trial's observations.

    Args:
        plans: one HypothesisPlan per hypothesis.
        estimates: (m, K) array of stagewise estimates; NaN marks stages
            without data.
        std_errors: (m, K) array of standard errors, positive where observed.
    """

    def __init__(self, plans, estimates, std_errors):
        self.plans = list(plans)
        self.estimates = np.asarray(estimates, dtype=float)
        self.std_errors = np.asarray(std_errors, dtype=float)
        m = len(self.plans)
        if self.estimates.shape[0] != m or self.std_errors.shape != self.estimates.shape:
            raise DimensionMismatch("estimates/std_errors must be (m, K)-shaped")
        self._tables = [p.table() for p in self.plans]

    @property
    def m(self) -> int:
        return len(self.plans)

    def _obs(self, j, k):
        est = self.estimates[j, k]
        se = self.std_errors[j, k]
        if not np.isfinite(est) or not np.isfinite(se) or se <= 0:
            raise MissingObservation(f"no observation for hypothesis {j} at stage {k + 1}")
        return est, se

    def local_log_p(self, j: int, k: int, mu=0.0):
        """log of the stagewise local p-value 1 - Phi((est - mu)/SE)."""
        est, se = self._obs(j, k)
        return log_ndtr((np.asarray(mu, dtype=float) - est) / se)

    def repeated(self, j: int, k: int, mu=0.0):
        """Repeated p-value for hypothesis j at stage k (0-based), shifted by mu."""
        out = np.exp(self.log_repeated(j, k, mu))
        return out if np.ndim(out) else float(out)

    def log_repeated(self, j: int, k: int, mu=0.0):
        """log of the repeated p-value (stable when the p-value underflows)."""
        mu = np.asarray(mu, dtype=float)
        out = np.where(
            np.isneginf(mu),
            NEG_INF,
            self._tables[j].log_repeated_level(self.local_log_p(j, k, np.where(np.isneginf(mu), 0.0, mu)), k),
        )
        return out if out.ndim else float(out)

    def sequential(self, j: int, k: int, mu=0.0):
        """Sequential p-value: minimum of the repeated p-values over stages <= k."""
        out = np.exp(self.log_sequential(j, k, mu))
        return out if np.ndim(out) else float(out)

    def log_sequential(self, j: int, k: int, mu=0.0):
        """log of the sequential p-value."""
        out = self.log_repeated(j, 0, mu)
        for s in range(1, k + 1):
            out = np.minimum(out, self.log_repeated(j, s, mu))
        return out if np.ndim(out) else float(out)

    def inverse(self, j: int, k: int, lam: str, gamma):
        """Shift at which the repeated (lam='r') or sequential (lam='s') p-value equals gamma."""
        if lam == "r":
            return self._inverse_r(j, k, gamma)
        if lam != "s":
            raise OutOfDomain(f"lambda must be 'r' or 's', got {lam!r}")
        out = self._inverse_r(j, 0, gamma)
        for s in range(1, k + 1):
            out = np.maximum(out, self._inverse_r(j, s, gamma))
        return out if np.ndim(out) else float(out)

    def _inverse_r(self, j, k, gamma):
        gamma = np.asarray(gamma, dtype=float)
        if np.any(gamma < 0) or np.any(gamma > 1):
            raise OutOfDomain("gamma must be in [0, 1]")
        with np.errstate(divide="ignore"):
            return self._inverse_r_log(j, k, np.where(gamma > 0, np.log(gamma), NEG_INF))

    def inverse_log(self, j: int, k: int, lam: str, log_gamma):
        """Like :meth:`inverse`, but the level is given as log gamma."""
        if lam == "r":
            return self._inverse_r_log(j, k, log_gamma)
        if lam != "s":
            raise OutOfDomain(f"lambda must be 'r' or 's', got {lam!r}")
        out = self._inverse_r_log(j, 0, log_gamma)
        for s in range(1, k + 1):
            out = np.maximum(out, self._inverse_r_log(j, s, log_gamma))
        return out if np.ndim(out) else float(out)

    def _inverse_r_log(self, j, k, log_gamma):
        log_gamma = np.asarray(log_gamma, dtype=float)
        if np.any(log_gamma > 0):
            raise OutOfDomain("gamma must be in [0, 1]")
        est, se = self._obs(j, k)
        finite = ~np.isneginf(log_gamma)
        z = -ndtri_exp(self._tables[j].log_levels(np.where(finite, log_gamma, -1.0), k))
        out = np.where(finite, est - se * z, NEG_INF)
        return out if out.ndim else float(out)


class InjectedPValueFamily:
    """P-value family built from directly supplied repeated p-values.

    Supports the stagewise tests (rejection decisions at shift 0) but not
    shifted evaluation or inversion, so confidence bounds are unavailable.
    """

    def __init__(self, repeated_p):
        self.repeated_p = np.asarray(repeated_p, dtype=float)
        if self.repeated_p.ndim != 2:
            raise DimensionMismatch("repeated p-values must be (m, K)-shaped")

    @property
    def m(self) -> int:
        return self.repeated_p.shape[0]

    def repeated(self, j: int, k: int, mu=0.0):
        if np.any(np.asarray(mu) != 0.0):
            raise OutOfDomain("injected p-values support evaluation at shift 0 only")
        p = self.repeated_p[j, k]
        if not np.isfinite(p):
            raise MissingObservation(f"no p-value for hypothesis {j} at stage {k + 1}")
        return float(p)

    def sequential(self, j: int, k: int, mu=0.0):
        return min(self.repeated(j, s, mu) for s in range(k + 1))

    def inverse(self, j, k, lam, gamma):
        raise OutOfDomain("injected p-values cannot be inverted into shifts")
