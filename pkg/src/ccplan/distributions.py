"""Scalar disturbance distributions with differentiable densities.

Each distribution bundles a density, a ladder of exact density derivatives,
a known anchor quantile, and a seeded sampler.  The derivative ladders are
what the quantile walk consumes; they are generated from closed-form
coefficient recurrences (no numeric or symbolic differentiation at run
time), so walking the quantile does not amplify differentiation noise.

Two structural families cover every built-in density:

* ``poly * exp(-x^2/2)``  (standard Gaussian, Chi):
  if f = P(x) exp(-x^2/2) then f' = (P' - x P) exp(-x^2/2).
* ``poly * (a1+x^2)^e1 * (a2+x^2)^e2``  (standard Cauchy, planar Cauchy norm):
  differentiation decrements the exponents and maps the polynomial through
  P' * b1 * b2 + 2x P (e1 b2 + e2 b1).

Both recurrences act on exact coefficient arrays, so the resulting
derivative callables are closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

__all__ = [
    "ScalarDistribution",
    "make_std_gaussian",
    "make_chi",
    "make_std_cauchy",
    "make_cauchy_norm2",
    "sample",
]


@dataclass(frozen=True)
class ScalarDistribution:
    """A scalar distribution with an exact derivative ladder and an anchor.

    Attributes
    ----------
    name : str
        Identifier, also used to key shared quantile approximations.
    pdf : callable
        Density; zero outside ``support``.
    pdf_derivatives : tuple of callables
        ``pdf_derivatives[d-1]`` is the d-th derivative of the density,
        d = 1..n_d_max.  Zero outside the support (one-sided at a finite
        boundary).
    n_d_max : int
        Highest derivative order available.
    anchor : (float, float)
        A probability p0 in (0, 1) and the exact quantile q0 there.
    support : (float, float)
        Closed support; bounds may be infinite.
    sampler : callable
        ``sampler(rng, count) -> ndarray`` of iid draws, driven entirely by
        the supplied generator.
    quantile_exact : callable, optional
        Closed-form quantile when one exists.  Exposed for oracle tests and
        for the analytic-table bypass, not used by the walk.
    """

    name: str
    pdf: Callable[[float], float]
    pdf_derivatives: tuple
    n_d_max: int
    anchor: tuple
    support: tuple
    sampler: Callable[[np.random.Generator, int], np.ndarray] = field(repr=False)
    quantile_exact: Optional[Callable[[float], float]] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# derivative-ladder construction


def _horner_eval(coeffs: Sequence[float]) -> Callable[[float], float]:
    """Scalar Horner evaluation of ascending-power coefficients."""
    rev = tuple(reversed(tuple(float(c) for c in coeffs)))

    def poly(x: float, _rev=rev) -> float:
        acc = 0.0
        for c in _rev:
            acc = acc * x + c
        return acc

    return poly


def _poly_mul(a: Sequence[float], b: Sequence[float]) -> list:
    out = [0.0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def _poly_add(a: Sequence[float], b: Sequence[float]) -> list:
    n = max(len(a), len(b))
    out = [0.0] * n
    for i, ai in enumerate(a):
        out[i] += ai
    for j, bj in enumerate(b):
        out[j] += bj
    return out


def _poly_diff(a: Sequence[float]) -> list:
    if len(a) <= 1:
        return [0.0]
    return [i * a[i] for i in range(1, len(a))]


def _gauss_exp_ladder(p0: Sequence[float], const: float, support: tuple, n: int):
    """Derivative callables for const * P(x) * exp(-x^2/2), orders 0..n."""
    lo, hi = support
    polys = [list(p0)]
    for _ in range(n):
        p = polys[-1]
        polys.append(_poly_add(_poly_diff(p), _poly_mul([0.0, -1.0], p)))

    def make(coeffs):
        peval = _horner_eval(coeffs)

        def f(x: float, _p=peval, _c=const, _lo=lo, _hi=hi) -> float:
            if x < _lo or x > _hi:
                return 0.0
            return _c * _p(x) * math.exp(-0.5 * x * x)

        return f

    return [make(p) for p in polys]


def _rational_ladder(p0, const, bases, exps, support, n):
    """Derivative callables for const * P(x) * prod (a_i + x^2)^{e_i}.

    ``bases`` lists the constants a_i, ``exps`` the starting exponents e_i.
    Each differentiation lowers every exponent by one and advances the
    polynomial through the product rule; evaluation recombines with the
    shifted exponents.
    """
    lo, hi = support
    base_polys = [[a, 0.0, 1.0] for a in bases]
    polys = [list(p0)]
    exp_hist = [tuple(exps)]
    for _ in range(n):
        p = polys[-1]
        es = exp_hist[-1]
        full = _poly_diff(p)
        for bp in base_polys:
            full = _poly_mul(full, bp)
        for i, e in enumerate(es):
            term = _poly_mul([0.0, 2.0 * e], p)
            for j, bp in enumerate(base_polys):
                if j != i:
                    term = _poly_mul(term, bp)
            full = _poly_add(full, term)
        polys.append(full)
        exp_hist.append(tuple(e - 1.0 for e in es))

    def make(coeffs, es):
        peval = _horner_eval(coeffs)
        bs = tuple(bases)

        def f(x: float, _p=peval, _c=const, _es=es, _bs=bs, _lo=lo, _hi=hi) -> float:
            if x < _lo or x > _hi:
                return 0.0
            out = _c * _p(x)
            x2 = x * x
            for a, e in zip(_bs, _es):
                out *= (a + x2) ** e
            return out

        return f

    return [make(polys[d], exp_hist[d]) for d in range(n + 1)]


# ---------------------------------------------------------------------------
# samplers


def _polar_normal(rng: np.random.Generator, count: int) -> np.ndarray:
    """Standard normal draws by the Marsaglia polar method."""
    out = np.empty(count)
    filled = 0
    while filled < count:
        need = count - filled
        # acceptance ~ pi/4 and each accepted pair yields two draws
        batch = max(16, int(need * 0.7) + 8)
        u = rng.uniform(-1.0, 1.0, batch)
        v = rng.uniform(-1.0, 1.0, batch)
        s = u * u + v * v
        keep = (s > 0.0) & (s < 1.0)
        s, u, v = s[keep], u[keep], v[keep]
        f = np.sqrt(-2.0 * np.log(s) / s)
        z = np.concatenate([u * f, v * f])
        take = min(z.size, need)
        out[filled:filled + take] = z[:take]
        filled += take
    return out


# ---------------------------------------------------------------------------
# anchor oracle


def _bisect_anchor(pdf: Callable[[float], float], lower: float, p0: float,
                   hi_guess: float) -> float:
    """Quantile at p0 by bisection on the adaptively integrated density.

    The cdf is evaluated by adaptive quadrature from the lower support
    bound; bisection runs until the cdf matches p0 to 1e-9.
    """
    def cdf(x: float) -> float:
        val, _ = quad(pdf, lower, x, limit=200)
        return val

    hi = hi_guess
    while cdf(hi) < p0:
        hi *= 2.0
    lo = lower
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        err = cdf(mid) - p0
        if abs(err) <= 1e-9:
            return mid
        if err < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# built-in distributions

_N_DERIVS = 4


def make_std_gaussian() -> ScalarDistribution:
    """Standard Gaussian: density (2*pi)^(-1/2) exp(-x^2/2), anchored at the median."""
    const = 1.0 / math.sqrt(2.0 * math.pi)
    ladder = _gauss_exp_ladder([1.0], const, (-math.inf, math.inf), _N_DERIVS)

    def sampler(rng: np.random.Generator, count: int) -> np.ndarray:
        return _polar_normal(rng, count)

    return ScalarDistribution(
        name="std_gaussian",
        pdf=ladder[0],
        pdf_derivatives=tuple(ladder[1:]),
        n_d_max=_N_DERIVS,
        anchor=(0.5, 0.0),
        support=(-math.inf, math.inf),
        sampler=sampler,
    )


def make_chi(k: int) -> ScalarDistribution:
    """Chi distribution with k degrees of freedom (k in {2, 3}).

    Density x^(k-1) exp(-x^2/2) / (2^(k/2-1) Gamma(k/2)) on x >= 0.  No
    closed-form quantile; the anchor at p0 = 0.9 is computed once by
    bisection on the integrated density (tolerance 1e-9).
    """
    if k not in (2, 3):
        raise ValueError(f"unsupported degrees-of-freedom k={k}; expected k in {{2, 3}}")
    const = 1.0 / (2.0 ** (k / 2.0 - 1.0) * math.gamma(k / 2.0))
    p0_coeffs = [0.0] * (k - 1) + [1.0]
    ladder = _gauss_exp_ladder(p0_coeffs, const, (0.0, math.inf), _N_DERIVS)
    q0 = _bisect_anchor(ladder[0], 0.0, 0.9, 4.0)

    def sampler(rng: np.random.Generator, count: int, _k=k) -> np.ndarray:
        z = _polar_normal(rng, count * _k).reshape(count, _k)
        return np.linalg.norm(z, axis=1)

    return ScalarDistribution(
        name=f"chi{k}",
        pdf=ladder[0],
        pdf_derivatives=tuple(ladder[1:]),
        n_d_max=_N_DERIVS,
        anchor=(0.9, q0),
        support=(0.0, math.inf),
        sampler=sampler,
    )


def make_std_cauchy() -> ScalarDistribution:
    """Standard Cauchy: density 1/(pi (1+x^2)); exact quantile tan(pi (p - 1/2))."""
    ladder = _rational_ladder([1.0], 1.0 / math.pi, bases=(1.0,), exps=(-1.0,),
                              support=(-math.inf, math.inf), n=_N_DERIVS)

    def quantile_exact(p: float) -> float:
        return math.tan(math.pi * (p - 0.5))

    def sampler(rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.uniform(0.0, 1.0, count)
        return np.tan(np.pi * (u - 0.5))

    return ScalarDistribution(
        name="std_cauchy",
        pdf=ladder[0],
        pdf_derivatives=tuple(ladder[1:]),
        n_d_max=_N_DERIVS,
        anchor=(0.5, 0.0),
        support=(-math.inf, math.inf),
        sampler=sampler,
        quantile_exact=quantile_exact,
    )


def make_cauchy_norm2() -> ScalarDistribution:
    """Euclidean norm of a pair of iid standard Cauchy variables.

    The squared norm has closed forms
        pdf(x)      = 2 / (pi sqrt(1+x) (2+x))
        cdf(x)      = (4/pi) arctan(sqrt(1+x)) - 1
        quantile(p) = tan^2(pi (1+p)/4) - 1
    and the change of variables y = sqrt(x) gives the norm density
        4 y / (pi sqrt(1+y^2) (2+y^2))              on y >= 0,
    with quantile sqrt(tan^2(pi (1+p)/4) - 1).  Anchored at p0 = 0.9 using
    the closed form.
    """
    ladder = _rational_ladder([0.0, 1.0], 4.0 / math.pi,
                              bases=(1.0, 2.0), exps=(-0.5, -1.0),
                              support=(0.0, math.inf), n=_N_DERIVS)

    def quantile_exact(p: float) -> float:
        t = math.tan(math.pi * (1.0 + p) / 4.0)
        return math.sqrt(max(t * t - 1.0, 0.0))

    def sampler(rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.uniform(0.0, 1.0, (2, count))
        c = np.tan(np.pi * (u - 0.5))
        return np.hypot(c[0], c[1])

    return ScalarDistribution(
        name="cauchy_norm2",
        pdf=ladder[0],
        pdf_derivatives=tuple(ladder[1:]),
        n_d_max=_N_DERIVS,
        anchor=(0.9, quantile_exact(0.9)),
        support=(0.0, math.inf),
        sampler=sampler,
        quantile_exact=quantile_exact,
    )


def sample(dist: ScalarDistribution, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` iid samples from ``dist`` using ``rng``."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return dist.sampler(rng, count)
