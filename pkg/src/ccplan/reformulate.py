"""Compile scenario constraints into affine chance-constraint records.

Every probabilistic requirement reduces to one of two shapes in the stacked
input vector of all vehicles:

* convex-upper:           f(U) + g * eta <= c   (polytope faces at the horizon)
* reverse-convex-lower:   f(U) - g * eta >= c   (pairwise separation in norm)

with eta a scalar random variable and g >= 0 its scale.  A compiled record
carries f (affine row or norm-of-affine), the constant c, the scale g, the
distribution of eta, and which violation budget the constraint draws from.

Gaussian disturbances yield a standard Gaussian eta on polytope faces and a
Chi-distributed bound on separations; Cauchy disturbances use the stability
of Cauchy sums on axis-aligned faces and a heavy-tailed planar norm bound on
separations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .distributions import (ScalarDistribution, make_cauchy_norm2, make_chi,
                            make_std_cauchy, make_std_gaussian)
from .dynamics import ConcatDynamics, LtiSystem, concat, covariance_propagation

__all__ = [
    "Polytope",
    "box_polytope",
    "GaussianDisturbance",
    "CauchyDisturbance",
    "Vehicle",
    "Scenario",
    "AffineExpr",
    "NormExpr",
    "CompiledConstraint",
    "compile_terminal_gaussian",
    "compile_collision_gaussian",
    "compile_terminal_cauchy",
    "compile_collision_cauchy",
    "catalog",
]

# scales below this compile to deterministic constraints
_G_FLOOR = 1e-14


@dataclass(frozen=True)
class Polytope:
    """Halfspace set {x : P x <= p}."""

    P: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if P.shape[0] != p.shape[0] or P.shape[0] < 1:
            raise ValueError("polytope needs matching P rows and p entries")
        if np.any(np.linalg.norm(P, axis=1) == 0.0):
            raise ValueError("polytope rows must be non-zero")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "p", p)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(self.P @ x <= self.p + tol))


def box_polytope(center: np.ndarray, half_width: np.ndarray) -> Polytope:
    """Axis-aligned box as 2n halfspaces (+e_i then -e_i per dimension)."""
    center = np.asarray(center, dtype=float)
    half_width = np.broadcast_to(np.asarray(half_width, dtype=float), center.shape)
    n = center.size
    P = np.vstack([np.eye(n), -np.eye(n)])
    p = np.concatenate([center + half_width, -(center - half_width)])
    return Polytope(P=P, p=p)


@dataclass(frozen=True)
class GaussianDisturbance:
    """Zero-mean Gaussian per-step disturbance with covariance ``cov``."""

    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "cov", c)


@dataclass(frozen=True)
class CauchyDisturbance:
    """Independent per-component Cauchy per-step disturbance with scales ``scale``."""

    scale: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if np.any(s < 0.0):
            raise ValueError("Cauchy scales must be non-negative")
        object.__setattr__(self, "scale", s)


@dataclass(frozen=True)
class Vehicle:
    x0: np.ndarray = field(repr=False)
    target: Polytope = field(repr=False)


@dataclass(frozen=True)
class Scenario:
    """A multi-vehicle planning instance.

    ``input_box`` bounds each per-step input componentwise, ``S`` extracts
    positions for separation constraints, ``r`` is the minimum pairwise
    distance, and the two alphas are the joint violation budgets for the
    terminal-set and avoidance constraint groups.  ``obstacles`` lists
    fixed positions kept at distance r through the same reverse-convex
    path (a frozen second vehicle).
    """

    system: LtiSystem
    N: int
    vehicles: tuple
    input_box: tuple  # (lo, hi) arrays of length m
    S: np.ndarray = field(repr=False)
    r: float
    alpha_T: float
    alpha_r: float
    disturbance: Union[GaussianDisturbance, CauchyDisturbance]
    obstacles: tuple = ()

    def __post_init__(self):
        for a, nm in ((self.alpha_T, "alpha_T"), (self.alpha_r, "alpha_r")):
            if not 0.0 < a < 0.5:
                raise ValueError(f"{nm} must lie in (0, 0.5), got {a}")
        if self.r <= 0.0:
            raise ValueError(f"separation r must be positive, got {self.r}")
        n = self.system.n
        for v in self.vehicles:
            if np.asarray(v.x0).size != n:
                raise ValueError("vehicle state dimension mismatch")
            if v.target.P.shape[1] != n:
                raise ValueError("target polytope dimension mismatch")
        if self.S.shape[1] != n:
            raise ValueError("S column count must equal the state dimension")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    @property
    def n_u(self) -> int:
        """Length of the stacked decision vector of all vehicle inputs."""
        return self.n_vehicles * self.N * self.system.m


@dataclass(frozen=True)
class AffineExpr:
    """f(U) = a . U + b over the stacked input vector."""

    a: np.ndarray = field(repr=False)
    b: float


@dataclass(frozen=True)
class NormExpr:
    """f(U) = || M U + v || over the stacked input vector."""

    M: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class CompiledConstraint:
    """One affine chance constraint (or its deterministic degenerate form).

    ``dist is None`` marks a deterministic constraint: the disturbance
    scale vanished and no risk variable is attached.
    """

    kind: str  # "convex-upper" | "reverse-convex-lower"
    f_spec: Union[AffineExpr, NormExpr]
    g: float
    c: float
    dist: Optional[ScalarDistribution]
    group: str  # "terminal" | "avoidance"
    label: tuple  # (vehicles, step, face)


def _u_slice(scn: Scenario, vehicle: int) -> slice:
    w = scn.N * scn.system.m
    return slice(vehicle * w, (vehicle + 1) * w)


def _stacked_scales(scn: Scenario) -> np.ndarray:
    return np.tile(scn.disturbance.scale, scn.N)


def compile_terminal_gaussian(scn: Scenario, vehicle: int,
                              cd: Optional[ConcatDynamics] = None,
                              eta: Optional[ScalarDistribution] = None) -> list:
    """Terminal polytope faces under Gaussian noise, one record per face.

    Face i of {P x <= p} at the horizon becomes
        P_i (A^N x0 + Cu(N) U) + g eta <= p_i
    with eta standard Gaussian and g the standard deviation
    sqrt(P_i Sigma(N) P_i^T) of the accumulated disturbance along the face
    normal.  A zero-variance face degenerates to a plain inequality.
    """
    if not isinstance(scn.disturbance, GaussianDisturbance):
        raise ValueError("scenario disturbance is not Gaussian")
    cd = cd or concat(scn.system, scn.N)
    eta = eta or make_std_gaussian()
    veh = scn.vehicles[vehicle]
    N = scn.N
    SigN = covariance_propagation(scn.disturbance.cov, scn.system.A, N)
    out = []
    nominal = cd.Ak[N - 1] @ veh.x0
    for i in range(veh.target.P.shape[0]):
        row = veh.target.P[i]
        a = np.zeros(scn.n_u)
        a[_u_slice(scn, vehicle)] = row @ cd.Cu[N - 1]
        b = float(row @ nominal)
        g = float(math.sqrt(max(row @ SigN @ row, 0.0)))
        deterministic = g <= _G_FLOOR
        out.append(CompiledConstraint(
            kind="convex-upper",
            f_spec=AffineExpr(a=a, b=b),
            g=0.0 if deterministic else g,
            c=float(veh.target.p[i]),
            dist=None if deterministic else eta,
            group="terminal",
            label=((vehicle,), N, i),
        ))
    return out


def _separation_norm(scn: Scenario, cd: ConcatDynamics, i: int, j: Optional[int],
                     k: int, obstacle: Optional[np.ndarray] = None) -> NormExpr:
    """Norm-of-affine part of a separation constraint at step k.

    ``j is None`` freezes the second body at ``obstacle`` (zero input
    columns), which is how static obstacles share this path.
    """
    S = scn.S
    M = np.zeros((S.shape[0], scn.n_u))
    SCu = S @ cd.Cu[k - 1]
    M[:, _u_slice(scn, i)] = SCu
    if j is not None:
        M[:, _u_slice(scn, j)] = -SCu
        diff0 = scn.vehicles[i].x0 - scn.vehicles[j].x0
        v = S @ (cd.Ak[k - 1] @ diff0)
    else:
        v = S @ (cd.Ak[k - 1] @ scn.vehicles[i].x0) - S @ obstacle
    return NormExpr(M=M, v=np.asarray(v, dtype=float))


def compile_collision_gaussian(scn: Scenario, pair: tuple, k: int,
                               cd: Optional[ConcatDynamics] = None,
                               eta: Optional[ScalarDistribution] = None) -> CompiledConstraint:
    """Pairwise separation at step k under Gaussian noise.

    The reverse triangle inequality peels the disturbance off the norm and
    matrix-norm compatibility bounds it by g * ||rho|| with rho standard
    normal, so eta follows a Chi distribution with as many degrees of
    freedom as position components and
        g = || (2 S Sigma(k) S^T)^(1/2) ||_2
    (the factor 2 carries the difference of two iid disturbances).
    """
    if not isinstance(scn.disturbance, GaussianDisturbance):
        raise ValueError("scenario disturbance is not Gaussian")
    i, j = pair
    if i == j:
        raise ValueError(f"separation requires distinct vehicles, got pair {pair}")
    cd = cd or concat(scn.system, scn.N)
    q = scn.S.shape[0]
    eta = eta or make_chi(q)
    Sig_k = covariance_propagation(scn.disturbance.cov, scn.system.A, k)
    C = 2.0 * scn.S @ Sig_k @ scn.S.T
    g = float(math.sqrt(max(np.linalg.eigvalsh(C).max(), 0.0)))
    deterministic = g <= _G_FLOOR
    return CompiledConstraint(
        kind="reverse-convex-lower",
        f_spec=_separation_norm(scn, cd, i, j, k),
        g=0.0 if deterministic else g,
        c=scn.r,
        dist=None if deterministic else eta,
        group="avoidance",
        label=((i, j), k, None),
    )


def compile_terminal_cauchy(scn: Scenario, vehicle: int,
                            cd: Optional[ConcatDynamics] = None,
                            eta: Optional[ScalarDistribution] = None) -> list:
    """Terminal faces under Cauchy noise; requires axis-aligned faces.

    A face row +/- e_m picks out a single linear combination of
    independent Cauchy components, which is again Cauchy with scale
        g = sum_j |(row Cw(N))_j| * scale_j
    by the stability of Cauchy sums (absolute values keep the scale
    positive for sign-mixing rows).  Faces touching more than one state
    coordinate are rejected: a correlated pair of Cauchy variables has no
    single-variable reduction.
    """
    if not isinstance(scn.disturbance, CauchyDisturbance):
        raise ValueError("scenario disturbance is not Cauchy")
    cd = cd or concat(scn.system, scn.N)
    eta = eta or make_std_cauchy()
    veh = scn.vehicles[vehicle]
    N = scn.N
    scales = _stacked_scales(scn)
    nominal = cd.Ak[N - 1] @ veh.x0
    out = []
    for i in range(veh.target.P.shape[0]):
        row = veh.target.P[i]
        if np.count_nonzero(row) != 1:
            raise ValueError(
                f"target face {i} is not axis-aligned; the Cauchy reduction "
                "handles one random variable per face and cannot be easily "
                "extended to coupled coordinates")
        a = np.zeros(scn.n_u)
        a[_u_slice(scn, vehicle)] = row @ cd.Cu[N - 1]
        b = float(row @ nominal)
        g = float(np.abs(row @ cd.Cw[N - 1]) @ scales)
        deterministic = g <= _G_FLOOR
        out.append(CompiledConstraint(
            kind="convex-upper",
            f_spec=AffineExpr(a=a, b=b),
            g=0.0 if deterministic else g,
            c=float(veh.target.p[i]),
            dist=None if deterministic else eta,
            group="terminal",
            label=((vehicle,), N, i),
        ))
    return out


def compile_collision_cauchy(scn: Scenario, pair: tuple, k: int,
                             cd: Optional[ConcatDynamics] = None,
                             eta: Optional[ScalarDistribution] = None) -> CompiledConstraint:
    """Pairwise separation at step k under planar Cauchy noise.

    Treating the two position components as independent standard Cauchy
    directions scaled by the largest row scale of |S Cw(k)| Gamma gives
        g = max_row ( |S Cw(k)| Gamma )
    and eta the norm of an iid standard-Cauchy pair.
    """
    if not isinstance(scn.disturbance, CauchyDisturbance):
        raise ValueError("scenario disturbance is not Cauchy")
    if scn.S.shape[0] != 2:
        raise ValueError("the Cauchy separation bound requires a planar S (2 rows)")
    i, j = pair
    if i == j:
        raise ValueError(f"separation requires distinct vehicles, got pair {pair}")
    cd = cd or concat(scn.system, scn.N)
    eta = eta or make_cauchy_norm2()
    scales = _stacked_scales(scn)
    g = float((np.abs(scn.S @ cd.Cw[k - 1]) @ scales).max())
    deterministic = g <= _G_FLOOR
    return CompiledConstraint(
        kind="reverse-convex-lower",
        f_spec=_separation_norm(scn, cd, i, j, k),
        g=0.0 if deterministic else g,
        c=scn.r,
        dist=None if deterministic else eta,
        group="avoidance",
        label=((i, j), k, None),
    )


def catalog(scn: Scenario) -> list:
    """All compiled constraints for a scenario.

    Terminal faces for every vehicle at the horizon plus separation
    constraints for every unordered pair (and every obstacle) at every
    step, sharing one distribution instance per kind so downstream
    quantile approximations are built once.
    """
    cd = concat(scn.system, scn.N)
    gaussian = isinstance(scn.disturbance, GaussianDisturbance)
    out = []
    if gaussian:
        eta_t = make_std_gaussian()
        eta_a = make_chi(scn.S.shape[0])
        for v in range(scn.n_vehicles):
            out.extend(compile_terminal_gaussian(scn, v, cd=cd, eta=eta_t))
        for i in range(scn.n_vehicles):
            for j in range(i + 1, scn.n_vehicles):
                for k in range(1, scn.N + 1):
                    out.append(compile_collision_gaussian(scn, (i, j), k, cd=cd, eta=eta_a))
    else:
        eta_t = make_std_cauchy()
        eta_a = make_cauchy_norm2()
        for v in range(scn.n_vehicles):
            out.extend(compile_terminal_cauchy(scn, v, cd=cd, eta=eta_t))
        for i in range(scn.n_vehicles):
            for j in range(i + 1, scn.n_vehicles):
                for k in range(1, scn.N + 1):
                    out.append(compile_collision_cauchy(scn, (i, j), k, cd=cd, eta=eta_a))
    for oi, obs in enumerate(scn.obstacles):
        for i in range(scn.n_vehicles):
            for k in range(1, scn.N + 1):
                base = _obstacle_constraint(scn, cd, i, oi, np.asarray(obs, float), k,
                                            eta_a, gaussian)
                out.append(base)
    return out


def _obstacle_constraint(scn, cd, i, oi, obs, k, eta, gaussian) -> CompiledConstraint:
    """Static obstacle at step k: the frozen-vehicle variant of separation."""
    if gaussian:
        Sig_k = covariance_propagation(scn.disturbance.cov, scn.system.A, k)
        C = scn.S @ Sig_k @ scn.S.T  # single disturbance, no doubling
        g = float(math.sqrt(max(np.linalg.eigvalsh(C).max(), 0.0)))
    else:
        g = float((np.abs(scn.S @ cd.Cw[k - 1]) @ _stacked_scales(scn)).max())
    deterministic = g <= _G_FLOOR
    return CompiledConstraint(
        kind="reverse-convex-lower",
        f_spec=_separation_norm(scn, cd, i, None, k, obstacle=obs),
        g=0.0 if deterministic else g,
        c=scn.r,
        dist=None if deterministic else eta,
        group="avoidance",
        label=((i, f"obstacle{oi}"), k, None),
    )
