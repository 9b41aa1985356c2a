"""Taylor-series quantile walk and greedy piecewise-affine reduction.

The walk steps a quantile estimate upward in probability from a known
anchor.  With gamma = -ln p the quantile obeys

    d Phi^{-1} / d gamma = -exp(-gamma) / pdf(q),

so closed-form pdf derivatives yield closed-form higher quantile
derivatives by the chain rule, and a finite Taylor expansion in gamma
advances the estimate one grid point at a time.  A greedy longest-chord
pass then thins the dense table into a small set of affine segments whose
upper envelope over-approximates the table by at most a budget ``xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import ScalarDistribution

__all__ = [
    "QuantileTable",
    "PwaQuantile",
    "QuantileDerivs",
    "TailUnderflowError",
    "quantile_derivs",
    "taylor_walk",
    "analytic_table",
    "pwa_reduce",
    "pwa_eval",
]

# pdf values below this cannot support a finite quantile derivative
_PDF_FLOOR = 1e-300

# margin added to every chord intercept so the envelope clears the table
# strictly even after rounding; charged against xi during reduction
_LIFT = 1e-9


class TailUnderflowError(ArithmeticError):
    """Density underflow in the tail; the walk must stop earlier."""


@dataclass(frozen=True)
class QuantileDerivs:
    """Derivatives of the quantile with respect to gamma = -ln p at one point."""

    p: float
    gamma: float
    values: tuple  # values[d-1] = d-th derivative


@dataclass(frozen=True)
class QuantileTable:
    """Dense quantile estimates on a probability grid.

    ``p`` is strictly increasing with spacing ``h`` (the final gap may be
    shorter); ``q`` is strictly increasing.
    """

    p: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    h: float
    n_d: int
    dist_name: str

    def __len__(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class PwaQuantile:
    """Upper piecewise-affine envelope of a convex quantile table.

    ``eval(p) = max_q (m_q p + c_q)`` satisfies
    ``table <= eval <= table + xi`` at every retained table point, and the
    slopes increase across segments.
    """

    segments: tuple  # ((m, c), ...) with strictly increasing m
    range: tuple  # (p_lo, p_hi)
    xi: float
    source: QuantileTable = field(repr=False)


def _logpdf_derivs(dist: ScalarDistribution, q: float, phi: float, order: int) -> list:
    """Derivatives of ln pdf at q up to ``order`` from the pdf ladder.

    Standard log-derivative identities in terms of the ratios
    L_j = pdf^(j)(q)/pdf(q):
        c1 = L1
        c2 = L2 - L1^2
        c3 = L3 - 3 L1 L2 + 2 L1^3
        c4 = L4 - 4 L1 L3 - 3 L2^2 + 12 L1^2 L2 - 6 L1^4
    """
    L = [dist.pdf_derivatives[j](q) / phi for j in range(order)]
    out = []
    if order >= 1:
        out.append(L[0])
    if order >= 2:
        out.append(L[1] - L[0] ** 2)
    if order >= 3:
        out.append(L[2] - 3.0 * L[0] * L[1] + 2.0 * L[0] ** 3)
    if order >= 4:
        out.append(L[3] - 4.0 * L[0] * L[2] - 3.0 * L[1] ** 2
                   + 12.0 * L[0] ** 2 * L[1] - 6.0 * L[0] ** 4)
    return out


def _deriv_values(dist: ScalarDistribution, p: float, q: float, n_d: int) -> tuple:
    """Quantile derivatives v1..v_{n_d} w.r.t. gamma at (p, q).

    v1 = -exp(-gamma)/pdf(q); each further order differentiates once more
    in gamma using dq/dgamma = v1 and the log-pdf derivatives c_j:
        v2 = -v1 - c1 v1^2
        v3 = -v2 - c2 v1^3 - 2 c1 v1 v2
        v4 = -v3 - c3 v1^4 - 5 c2 v1^2 v2 - 2 c1 v2^2 - 2 c1 v1 v3
        v5 = -v4 - c4 v1^5 - 9 c3 v1^3 v2 - 12 c2 v1 v2^2 - 7 c2 v1^2 v3
             - 6 c1 v2 v3 - 2 c1 v1 v4
    """
    phi = dist.pdf(q)
    if not phi > _PDF_FLOOR:
        raise TailUnderflowError(
            f"pdf of {dist.name} underflows at q={q:g} (p={p:g}); "
            "terminate the walk earlier")
    c = _logpdf_derivs(dist, q, phi, min(n_d - 1, 4)) if n_d > 1 else []
    v1 = -p / phi  # exp(-gamma) = p
    vals = [v1]
    if n_d >= 2:
        c1 = c[0]
        vals.append(-v1 - c1 * v1 * v1)
    if n_d >= 3:
        c1, c2 = c[0], c[1]
        v2 = vals[1]
        vals.append(-v2 - c2 * v1 ** 3 - 2.0 * c1 * v1 * v2)
    if n_d >= 4:
        c1, c2, c3 = c[0], c[1], c[2]
        v2, v3 = vals[1], vals[2]
        vals.append(-v3 - c3 * v1 ** 4 - 5.0 * c2 * v1 * v1 * v2
                    - 2.0 * c1 * v2 * v2 - 2.0 * c1 * v1 * v3)
    if n_d >= 5:
        c1, c2, c3, c4 = c
        v2, v3, v4 = vals[1], vals[2], vals[3]
        vals.append(-v4 - c4 * v1 ** 5 - 9.0 * c3 * v1 ** 3 * v2
                    - 12.0 * c2 * v1 * v2 * v2 - 7.0 * c2 * v1 * v1 * v3
                    - 6.0 * c1 * v2 * v3 - 2.0 * c1 * v1 * v4)
    return tuple(vals)


def quantile_derivs(dist: ScalarDistribution, p: float, q: float, n_d: int) -> QuantileDerivs:
    """Quantile derivatives in gamma at probability p, quantile estimate q.

    Supports orders up to ``dist.n_d_max + 1`` (the d-th quantile derivative
    consumes the (d-1)-th pdf derivative).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if n_d < 1 or n_d > dist.n_d_max + 1:
        raise ValueError(
            f"derivative order {n_d} outside 1..{dist.n_d_max + 1} for {dist.name}")
    return QuantileDerivs(p=p, gamma=-math.log(p),
                          values=_deriv_values(dist, p, q, n_d))


def taylor_walk(dist: ScalarDistribution, p_start: float, q_start: float,
                h: float, p_end: float, n_d: int = 3) -> QuantileTable:
    """Walk the quantile from (p_start, q_start) up to p_end in steps of h.

    Each step advances by the finite Taylor expansion

        q(p_next) = q(p) + sum_{d=1}^{n_d+1} (-1)^d v_d log(p_next/p)^d / d!

    with v_d the gamma-derivatives evaluated at the current point.  The
    final step is shortened to land exactly on p_end; the table contains
    both endpoints.
    """
    if h <= 0.0:
        raise ValueError(f"step h must be positive, got {h}")
    if not 0.0 < p_start < 1.0 or not p_start <= p_end < 1.0:
        raise ValueError(f"need 0 < p_start <= p_end < 1, got [{p_start}, {p_end}]")
    if n_d < 1 or n_d > dist.n_d_max:
        raise ValueError(f"n_d={n_d} outside 1..{dist.n_d_max} for {dist.name}")

    n_terms = n_d + 1
    n_full = max(0, int(math.ceil((p_end - p_start) / h - 1e-12)))
    ps = np.empty(n_full + 1)
    qs = np.empty(n_full + 1)
    ps[0] = p_start
    qs[0] = q_start

    p = p_start
    q = q_start
    for c in range(n_full):
        p_next = p_start + (c + 1) * h
        if p_next > p_end:
            p_next = p_end
        dlog = math.log(p_next / p)
        v = _deriv_values(dist, p, q, n_terms)
        inc = 0.0
        term = 1.0
        for d in range(1, n_terms + 1):
            term *= -dlog / d  # accumulates (-1)^d dlog^d / d!
            inc += v[d - 1] * term
        if inc <= 0.0:
            raise ArithmeticError(
                f"quantile walk for {dist.name} lost monotonicity at p={p_next:g}; "
                "the Taylor approximation broke down")
        q = q + inc
        p = p_next
        ps[c + 1] = p
        qs[c + 1] = q
    return QuantileTable(p=ps, q=qs, h=h, n_d=n_d, dist_name=dist.name)


def analytic_table(dist: ScalarDistribution, p_start: float, p_end: float,
                   h: float) -> QuantileTable:
    """Exact-quantile table on the same grid the walk would use.

    Requires ``dist.quantile_exact``; used to bypass the Taylor walk when a
    closed-form quantile exists, feeding the same reduction path.
    """
    if dist.quantile_exact is None:
        raise ValueError(f"{dist.name} has no closed-form quantile")
    if h <= 0.0:
        raise ValueError(f"step h must be positive, got {h}")
    if not 0.0 < p_start < 1.0 or not p_start <= p_end < 1.0:
        raise ValueError(f"need 0 < p_start <= p_end < 1, got [{p_start}, {p_end}]")
    n_full = max(0, int(math.ceil((p_end - p_start) / h - 1e-12)))
    ps = np.minimum(p_start + h * np.arange(n_full + 1), p_end)
    qs = np.array([dist.quantile_exact(p) for p in ps])
    return QuantileTable(p=ps, q=qs, h=h, n_d=0, dist_name=dist.name)


def pwa_reduce(table: QuantileTable, xi: float) -> PwaQuantile:
    """Greedy longest-chord reduction of a convex quantile table.

    From index i, the farthest index j is selected such that the chord from
    (p_i, q_i) to (p_j, q_j) over-approximates every intermediate table
    point by at most xi (and never under-approximates); the chord is
    emitted and i jumps to j.  Because chord error over a convex table
    grows monotonically with chord length, the farthest j is located by
    bisection.
    """
    if not xi > 0.0:
        raise ValueError(f"error budget xi must be positive, got {xi}")
    p = np.asarray(table.p, dtype=float)
    q = np.asarray(table.q, dtype=float)
    if p.size < 2:
        raise ValueError("table needs at least 2 points")
    if np.any(np.diff(q) <= 0.0):
        raise ValueError("table quantiles are not strictly increasing")

    lift = _LIFT * max(1.0, float(np.abs(q).max()))
    xi_eff = xi - lift if math.isfinite(xi) else math.inf
    if xi_eff <= 0.0:
        raise ValueError(f"xi={xi} is below the numerical guard {lift:g}")
    under_tol = lift  # tolerated chord dip from a numerically non-convex table

    def chord_ok(i: int, j: int) -> bool:
        if j - i < 2:
            return True
        m = (q[j] - q[i]) / (p[j] - p[i])
        err = q[i] + m * (p[i + 1:j] - p[i]) - q[i + 1:j]
        return err.max() <= xi_eff and err.min() >= -under_tol

    last = p.size - 1
    segments = []
    i = 0
    while i < last:
        lo = i + 1  # adjacent chord always admissible
        if chord_ok(i, last):
            j = last
        else:
            hi = last
            j = lo
            while lo <= hi:
                mid = (lo + hi) // 2
                if chord_ok(i, mid):
                    j = mid
                    lo = mid + 1
                else:
                    hi = mid - 1
        m = (q[j] - q[i]) / (p[j] - p[i])
        c = q[i] - m * p[i] + lift
        if segments and m <= segments[-1][0]:
            # collinear continuation; keep the higher of the two intercepts
            pm, pc = segments[-1]
            segments[-1] = (pm, max(pc, c))
        else:
            segments.append((m, c))
        i = j

    return PwaQuantile(segments=tuple(segments),
                       range=(float(p[0]), float(p[-1])),
                       xi=xi, source=table)


def pwa_eval(pwa: PwaQuantile, p: float) -> float:
    """Evaluate the affine envelope at p; refuses to extrapolate."""
    lo, hi = pwa.range
    if p < lo - 1e-12 or p > hi + 1e-12:
        raise ValueError(
            f"p={p:g} outside the certified range [{lo:g}, {hi:g}]; "
            "refusing to extrapolate a risk bound")
    return max(m * p + c for m, c in pwa.segments)


def _pwa_eval_vec(pwa: PwaQuantile, p: np.ndarray) -> np.ndarray:
    """Vectorized envelope evaluation (no range check); internal use."""
    seg = np.asarray(pwa.segments)
    return (np.outer(p, seg[:, 0]) + seg[:, 1]).max(axis=1)
