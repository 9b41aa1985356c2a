"""Empirical validation of planned inputs against the joint constraints.

Draws iid disturbance sequences per vehicle, pushes them through the
concatenated dynamics, and reports the empirical probability that every
vehicle lands in its target set (jointly) and that every pair stays
separated at every step (jointly).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import concat
from .reformulate import CauchyDisturbance, GaussianDisturbance, Scenario
from .solver import Solution

__all__ = ["McReport", "evaluate", "distance_trace"]


@dataclass(frozen=True)
class McReport:
    samples: int
    seed: int
    terminal_satisfaction: float
    avoidance_satisfaction: float
    distance_statistic: str  # "mean" | "median"
    # (pair, step) -> statistic of ||S (x_i - x_j)|| over samples
    pair_distances: dict = field(repr=False)

    def __post_init__(self):
        if not (0.0 <= self.terminal_satisfaction <= 1.0
                and 0.0 <= self.avoidance_satisfaction <= 1.0):
            raise ValueError("satisfaction estimates must lie in [0, 1]")


def _draw_disturbance(scn: Scenario, rng: np.random.Generator,
                      samples: int) -> np.ndarray:
    """Stacked disturbance (samples, N*n) for one vehicle."""
    n, N = scn.system.n, scn.N
    if isinstance(scn.disturbance, GaussianDisturbance):
        cov = scn.disturbance.cov
        L = np.linalg.cholesky(cov + 1e-18 * np.eye(n)) if np.any(cov) else np.zeros((n, n))
        z = rng.standard_normal((samples, N, n))
        return (z @ L.T).reshape(samples, N * n)
    if isinstance(scn.disturbance, CauchyDisturbance):
        u = rng.uniform(0.0, 1.0, (samples, N, n))
        draws = np.tan(np.pi * (u - 0.5)) * scn.disturbance.scale
        return draws.reshape(samples, N * n)
    raise TypeError(f"unsupported disturbance {type(scn.disturbance)!r}")


def _sampled_states(scn: Scenario, solution: Solution, samples: int,
                    seed: int) -> np.ndarray:
    """States (vehicle, step, n, samples) under sampled disturbances."""
    if solution.inputs.shape != (scn.n_vehicles, scn.N, scn.system.m):
        raise ValueError(
            f"solution inputs {solution.inputs.shape} do not match scenario "
            f"({scn.n_vehicles}, {scn.N}, {scn.system.m})")
    rng = np.random.default_rng(seed)
    cd = concat(scn.system, scn.N)
    v, N, n = scn.n_vehicles, scn.N, scn.system.n
    out = np.empty((v, N, n, samples))
    for i in range(v):
        W = _draw_disturbance(scn, rng, samples)  # (samples, N*n)
        U = solution.inputs[i].ravel()
        x0 = scn.vehicles[i].x0
        for k in range(1, N + 1):
            nominal = cd.Ak[k - 1] @ x0 + cd.Cu[k - 1] @ U
            out[i, k - 1] = nominal[:, None] + cd.Cw[k - 1] @ W.T
    return out


def evaluate(scn: Scenario, solution: Solution, samples: int, seed: int) -> McReport:
    """Joint constraint satisfaction estimates from ``samples`` draws.

    Per-vehicle disturbances are independent across vehicles and steps;
    the same seed reproduces the report bit for bit.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    states = _sampled_states(scn, solution, samples, seed)
    v, N = scn.n_vehicles, scn.N

    term_ok = np.ones(samples, dtype=bool)
    for i in range(v):
        tgt = scn.vehicles[i].target
        resid = tgt.P @ states[i, N - 1] - tgt.p[:, None]
        term_ok &= np.all(resid <= 0.0, axis=0)

    cauchy = isinstance(scn.disturbance, CauchyDisturbance)
    stat = "median" if cauchy else "mean"
    avoid_ok = np.ones(samples, dtype=bool)
    pair_distances = {}
    for i in range(v):
        for j in range(i + 1, v):
            for k in range(N):
                d = scn.S @ (states[i, k] - states[j, k])
                dist = np.linalg.norm(d, axis=0)
                avoid_ok &= dist >= scn.r
                pair_distances[((i, j), k + 1)] = float(
                    np.median(dist) if cauchy else np.mean(dist))

    return McReport(samples=samples, seed=seed,
                    terminal_satisfaction=float(np.mean(term_ok)),
                    avoidance_satisfaction=float(np.mean(avoid_ok)),
                    distance_statistic=stat,
                    pair_distances=pair_distances)


def distance_trace(scn: Scenario, solution: Solution, samples: int,
                   seed: int) -> dict:
    """Per-step pairwise separation statistics for plotting.

    Means under Gaussian noise; medians under Cauchy noise, whose means do
    not converge.
    """
    report = evaluate(scn, solution, samples, seed)
    return report.pair_distances
