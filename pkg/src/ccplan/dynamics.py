"""Discrete-time LTI bookkeeping and Clohessy-Wiltshire-Hill satellite models.

The concatenated form collects the k-step response of
x(k+1) = A x(k) + B u(k) + w(k) into

    x(k) = A^k x0 + Cu(k) U + Cw(k) W
    Cu(k) = [A^(k-1) B  ...  A B  B  0]
    Cw(k) = [A^(k-1)    ...  A    I  0]

so planning and Monte Carlo share one closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

__all__ = [
    "LtiSystem",
    "ConcatDynamics",
    "CwhParams",
    "concat",
    "cwh_discretize",
    "propagate",
    "covariance_propagation",
]

# generic LEO constants used when the scenario does not supply its own
MU_EARTH = 3.986004418e14  # m^3/s^2
LEO_RADIUS = 6.371e6 + 500e3  # Earth radius + 500 km altitude, m


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time LTI system x(k+1) = A x(k) + B u(k) + w(k)."""

    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    n: int
    m: int
    dt: float

    def __post_init__(self):
        if self.A.shape != (self.n, self.n):
            raise ValueError(f"A has shape {self.A.shape}, expected ({self.n}, {self.n})")
        if self.B.shape != (self.n, self.m):
            raise ValueError(f"B has shape {self.B.shape}, expected ({self.n}, {self.m})")


@dataclass(frozen=True)
class ConcatDynamics:
    """Powers A^k and the concatenated input/disturbance blocks, k = 1..N."""

    N: int
    Ak: tuple = field(repr=False)  # A^1 .. A^N
    Cu: tuple = field(repr=False)  # n x N*m each
    Cw: tuple = field(repr=False)  # n x N*n each


@dataclass(frozen=True)
class CwhParams:
    """Circular-orbit relative-motion parameters.

    ``planar`` drops the out-of-plane axis, leaving states (x, y, xdot,
    ydot) and a two-axis thrust input.
    """

    mass: float = 100.0
    mu: float = MU_EARTH
    orbit_radius: float = LEO_RADIUS
    planar: bool = False

    def __post_init__(self):
        if self.mass <= 0 or self.mu <= 0 or self.orbit_radius <= 0:
            raise ValueError("CWH parameters must be positive")

    @property
    def omega(self) -> float:
        """Orbital rate sqrt(mu / R0^3)."""
        return math.sqrt(self.mu / self.orbit_radius ** 3)


def concat(sys: LtiSystem, N: int) -> ConcatDynamics:
    """Concatenated dynamics blocks for horizon N (matrix powers cached)."""
    if N < 1:
        raise ValueError(f"horizon must be >= 1, got {N}")
    n, m = sys.n, sys.m
    Ak = []
    P = np.eye(n)
    for _ in range(N):
        P = sys.A @ P
        Ak.append(P.copy())

    Cu = []
    Cw = []
    for k in range(1, N + 1):
        cu = np.zeros((n, N * m))
        cw = np.zeros((n, N * n))
        for i in range(k):
            # block i multiplies u(i) / w(i): coefficient A^(k-1-i)
            Apow = Ak[k - 2 - i] if k - 2 - i >= 0 else np.eye(n)
            cu[:, i * m:(i + 1) * m] = Apow @ sys.B
            cw[:, i * n:(i + 1) * n] = Apow
        Cu.append(cu)
        Cw.append(cw)
    return ConcatDynamics(N=N, Ak=tuple(Ak), Cu=tuple(Cu), Cw=tuple(Cw))


def _cwh_continuous(params: CwhParams):
    w = params.omega
    mc = params.mass
    if params.planar:
        A = np.array([
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [3.0 * w * w, 0.0, 0.0, 2.0 * w],
            [0.0, 0.0, -2.0 * w, 0.0],
        ])
        B = np.array([
            [0.0, 0.0],
            [0.0, 0.0],
            [1.0 / mc, 0.0],
            [0.0, 1.0 / mc],
        ])
    else:
        A = np.zeros((6, 6))
        A[0:3, 3:6] = np.eye(3)
        A[3, 0] = 3.0 * w * w
        A[3, 4] = 2.0 * w
        A[4, 3] = -2.0 * w
        A[5, 2] = -w * w
        B = np.zeros((6, 3))
        B[3:6, :] = np.eye(3) / mc
    return A, B


def cwh_discretize(params: CwhParams, dt: float) -> LtiSystem:
    """Exact first-order-hold discretization of the CWH equations.

    The augmented exponential

        expm([[Ac, Bc, 0], [0, 0, I], [0, 0, 0]] dt)

    yields G1 = int exp(Ac (dt-s)) Bc ds and G2 = int exp(Ac (dt-s)) Bc s ds,
    from which the causal first-order-hold input matrix is
    B = (G1 - G2/dt) + Ad (G2/dt).
    """
    if dt <= 0:
        raise ValueError(f"sample time must be positive, got {dt}")
    Ac, Bc = _cwh_continuous(params)
    n, m = Ac.shape[0], Bc.shape[1]
    M = np.zeros((n + 2 * m, n + 2 * m))
    M[:n, :n] = Ac
    M[:n, n:n + m] = Bc
    M[n:n + m, n + m:] = np.eye(m)
    E = expm(M * dt)
    Ad = E[:n, :n]
    G1 = E[:n, n:n + m]
    G2 = E[:n, n + m:]
    B1 = G2 / dt
    Bd = (G1 - B1) + Ad @ B1
    return LtiSystem(A=Ad, B=Bd, n=n, m=m, dt=dt)


def propagate(sys: LtiSystem, x0: np.ndarray, U: np.ndarray, W: np.ndarray) -> np.ndarray:
    """States x(1)..x(N) by step recursion; U is (N, m), W is (N, n)."""
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    if U.ndim != 2 or U.shape[1] != sys.m:
        raise ValueError(f"U must be (N, {sys.m}), got {U.shape}")
    if W.shape != (U.shape[0], sys.n):
        raise ValueError(f"W must be ({U.shape[0]}, {sys.n}), got {W.shape}")
    N = U.shape[0]
    out = np.empty((N, sys.n))
    x = np.asarray(x0, dtype=float)
    for k in range(N):
        x = sys.A @ x + sys.B @ U[k] + W[k]
        out[k] = x
    return out


def covariance_propagation(Sigma: np.ndarray, A: np.ndarray, k: int) -> np.ndarray:
    """Accumulated disturbance covariance sum_{i=0}^{k-1} A^i Sigma (A^i)^T.

    Equals the covariance of Cw(k) W for W with per-step covariance Sigma.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape[0] != Sigma.shape[1] or not np.allclose(Sigma, Sigma.T, atol=1e-12):
        raise ValueError("Sigma must be symmetric")
    if k < 1:
        raise ValueError(f"step k must be >= 1, got {k}")
    out = np.zeros_like(Sigma)
    P = np.eye(Sigma.shape[0])
    for _ in range(k):
        out += P @ Sigma @ P.T
        P = A @ P
    return 0.5 * (out + out.T)
