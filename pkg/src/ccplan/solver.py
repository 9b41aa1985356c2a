"""Risk-allocated program assembly and convex-concave iteration.

The compiled catalog becomes a quadratic program in the stacked decision
vector

    [ U(all vehicles) | s(one per chance constraint) | omega | beta | t ]

where s stands in for the quantile value g is applied to, omega/beta are
the per-constraint risk allocations bounded by their group budgets, and t
are feasibility slacks on the (linearized) reverse-convex rows.  With the
piecewise-affine envelope E(p) = max_q (m_q p + c_q) of the quantile, the
constraint rows are

    convex:    a.U + b <= c - g s,   s >= E(1 - omega)   segmentwise
    reverse:   fhat(U) + t >= c + g s,  s >= E(1 - beta)  segmentwise

fhat linearizes ||M U + v|| at the previous iterate (a global
under-estimator, so feasibility of the linearized row implies feasibility
of the true row up to t).  Each pass solves one QP; the slack penalty
escalates while slacks persist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .quantile import PwaQuantile, pwa_eval
from .reformulate import AffineExpr, CompiledConstraint, NormExpr, Scenario

__all__ = [
    "SolverOptions",
    "DecisionLayout",
    "QpSubproblem",
    "QpResult",
    "QpBackend",
    "CvxoptBackend",
    "Solution",
    "CertReport",
    "InfeasibleRelaxationError",
    "QpFailureError",
    "make_layout",
    "build_iterate_qp",
    "initialize",
    "convex_concave_solve",
    "certify",
]


class InfeasibleRelaxationError(RuntimeError):
    """The convex relaxation has no feasible input; targets are unreachable."""


class QpFailureError(RuntimeError):
    """A QP subproblem failed; carries a short summary of the iterate."""


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 100
    tol: float = 1e-8          # convergence: cost delta and slack sum
    tau0: float = 1.0          # initial slack penalty
    tau_growth: float = 4.0
    tau_max: float = 1e4
    risk_floor: float = 1e-6   # lower clamp on omega/beta


@dataclass(frozen=True)
class DecisionLayout:
    """Index map of the stacked decision vector.

    ``s_idx[i]``/``risk_idx[i]`` give the slack and risk column of catalog
    entry i (-1 when the entry is deterministic); ``t_idx[i]`` the
    feasibility-slack column of reverse-convex entry i (-1 otherwise).
    """

    n_u: int
    n_var: int
    s_idx: tuple
    risk_idx: tuple
    t_idx: tuple
    conv_ids: tuple       # catalog indices with a convex risk variable
    rev_ids: tuple        # catalog indices with a reverse risk variable
    rev_all_ids: tuple    # catalog indices of all reverse rows (incl. deterministic)


def make_layout(scn: Scenario, cat: list) -> DecisionLayout:
    n_u = scn.n_u
    s_idx = [-1] * len(cat)
    risk_idx = [-1] * len(cat)
    t_idx = [-1] * len(cat)
    conv_ids, rev_ids, rev_all_ids = [], [], []
    col = n_u
    for i, cc in enumerate(cat):
        if cc.dist is not None:
            s_idx[i] = col
            col += 1
    for i, cc in enumerate(cat):
        if cc.dist is not None:
            risk_idx[i] = col
            col += 1
            (conv_ids if cc.kind == "convex-upper" else rev_ids).append(i)
    for i, cc in enumerate(cat):
        if cc.kind == "reverse-convex-lower":
            t_idx[i] = col
            col += 1
            rev_all_ids.append(i)
    return DecisionLayout(n_u=n_u, n_var=col,
                          s_idx=tuple(s_idx), risk_idx=tuple(risk_idx),
                          t_idx=tuple(t_idx), conv_ids=tuple(conv_ids),
                          rev_ids=tuple(rev_ids), rev_all_ids=tuple(rev_all_ids))


@dataclass(frozen=True)
class QpSubproblem:
    """minimize 0.5 x^T H x + q^T x  subject to  G x <= h."""

    H: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class QpResult:
    status: str  # "optimal" | "infeasible" | "numerical-failure"
    x: Optional[np.ndarray]
    objective: Optional[float]


class QpBackend:
    """Interface: solve a QpSubproblem to 1e-8 feasibility when optimal."""

    def solve(self, qp: QpSubproblem) -> QpResult:  # pragma: no cover - interface
        raise NotImplementedError


class CvxoptBackend(QpBackend):
    """Reference backend on the cvxopt interior-point QP solver."""

    def __init__(self, abstol: float = 1e-9, reltol: float = 1e-9,
                 feastol: float = 1e-9, max_iters: int = 200):
        self._opts = {"show_progress": False, "abstol": abstol,
                      "reltol": reltol, "feastol": feastol,
                      "maxiters": max_iters}

    def solve(self, qp: QpSubproblem) -> QpResult:
        from cvxopt import matrix, solvers

        try:
            sol = solvers.qp(matrix(qp.H), matrix(qp.q),
                             matrix(qp.G), matrix(qp.h), options=self._opts)
        except (ValueError, ArithmeticError, ZeroDivisionError):
            return QpResult(status="numerical-failure", x=None, objective=None)
        if sol["status"] == "optimal":
            x = np.asarray(sol["x"]).ravel()
            return QpResult(status="optimal", x=x,
                            objective=float(0.5 * x @ qp.H @ x + qp.q @ x))
        if "infeasible" in sol["status"]:
            return QpResult(status="infeasible", x=None, objective=None)
        # "unknown": interior point stalled near the solution; accept the
        # iterate only if it is feasible to the backend contract
        if sol["x"] is not None:
            x = np.asarray(sol["x"]).ravel()
            if (qp.G @ x - qp.h).max() <= 1e-8:
                return QpResult(status="optimal", x=x,
                                objective=float(0.5 * x @ qp.H @ x + qp.q @ x))
        return QpResult(status="numerical-failure", x=None, objective=None)


@dataclass(frozen=True)
class Solution:
    """Converged (or best-effort) plan with its risk allocation and trace."""

    inputs: np.ndarray = field(repr=False)  # (v, N, m)
    omegas: Dict[int, float] = field(repr=False)  # catalog index -> risk
    betas: Dict[int, float] = field(repr=False)
    slacks_s: Dict[int, float] = field(repr=False)
    slacks_t: Dict[int, float] = field(repr=False)
    cost: float
    iterations: int
    converged: bool
    trace: tuple  # (iteration, cost, slack_sum, tau, penalized)


@dataclass(frozen=True)
class CertReport:
    ok: bool
    max_violation: float
    budget_terminal: float
    budget_avoidance: float
    details: tuple = field(repr=False)  # (catalog index, violation)


def _risk_bounds(pwa: PwaQuantile, opts: SolverOptions, alpha: float) -> tuple:
    """Risk interval keeping 1-risk inside the certified envelope range."""
    lo = max(opts.risk_floor, 1.0 - pwa.range[1])
    hi = min(alpha, 1.0 - pwa.range[0])
    if lo > hi:
        raise ValueError(
            f"risk interval empty: envelope range {pwa.range} cannot host "
            f"risks in [{lo:g}, {hi:g}]")
    return lo, hi


def _segment_rows_omega(pwa: PwaQuantile) -> list:
    """PWA segments rewritten over the risk variable (p = 1 - risk).

    s >= m p + c  becomes  s >= (-m) risk + (m + c).
    """
    return [(-m, m + c) for m, c in pwa.segments]


def build_iterate_qp(cat: list, pwa_map: Dict[str, PwaQuantile],
                     layout: DecisionLayout, scn: Scenario,
                     u_ref: Optional[np.ndarray], tau: float,
                     opts: SolverOptions = SolverOptions(),
                     include_reverse: bool = True) -> QpSubproblem:
    """Assemble one convex subproblem around the reference input u_ref.

    ``include_reverse=False`` drops every reverse-convex row (the
    initialization relaxation); u_ref may then be None.  Rows are
    normalized to unit infinity-norm so segment slopes from heavy tails do
    not skew the interior point.
    """
    nv = layout.n_var
    rows, rhs = [], []

    def add_row(row, b):
        scale = max(1.0, float(np.abs(row).max()))
        rows.append(row / scale)
        rhs.append(b / scale)

    # input box per step
    lo, hi = scn.input_box
    m = scn.system.m
    for v in range(scn.n_vehicles):
        for k in range(scn.N):
            base = (v * scn.N + k) * m
            for c_ in range(m):
                row = np.zeros(nv)
                row[base + c_] = 1.0
                add_row(row, float(hi[c_]))
                row = np.zeros(nv)
                row[base + c_] = -1.0
                add_row(row, -float(lo[c_]))

    sum_terminal = np.zeros(nv)
    sum_avoid = np.zeros(nv)

    for idx, cc in enumerate(cat):
        if cc.kind == "convex-upper":
            f = cc.f_spec
            row = np.zeros(nv)
            row[:layout.n_u] = f.a
            if cc.dist is None:
                add_row(row, cc.c - f.b)
                continue
            si, ri = layout.s_idx[idx], layout.risk_idx[idx]
            row[si] = cc.g
            add_row(row, cc.c - f.b)  # a.U + g s <= c - b
            pwa = pwa_map[cc.dist.name]
            for ms, cs in _segment_rows_omega(pwa):
                r2 = np.zeros(nv)
                r2[ri] = ms
                r2[si] = -1.0
                add_row(r2, -cs)  # m' risk - s <= -c'
            rlo, rhi = _risk_bounds(pwa, opts, scn.alpha_T)
            r3 = np.zeros(nv)
            r3[ri] = -1.0
            add_row(r3, -rlo)
            r3 = np.zeros(nv)
            r3[ri] = 1.0
            add_row(r3, rhi)
            sum_terminal[ri] = 1.0
        else:
            if not include_reverse:
                continue
            f = cc.f_spec
            Mu = f.M @ u_ref[:layout.n_u] + f.v
            f0 = float(np.linalg.norm(Mu))
            if f0 > 1e-12:
                d = Mu / f0
            else:
                # coincident bodies: fall back to a fixed subgradient direction
                d = f.M[0] / max(np.linalg.norm(f.M[0]), 1e-12)
                f0 = 0.0
            w = d @ f.M
            ti = layout.t_idx[idx]
            row = np.zeros(nv)
            row[:layout.n_u] = -w
            row[ti] = -1.0
            b = f0 - float(w @ u_ref[:layout.n_u]) - cc.c
            if cc.dist is not None:
                si, ri = layout.s_idx[idx], layout.risk_idx[idx]
                row[si] = cc.g
                pwa = pwa_map[cc.dist.name]
                for ms, cs in _segment_rows_omega(pwa):
                    r2 = np.zeros(nv)
                    r2[ri] = ms
                    r2[si] = -1.0
                    add_row(r2, -cs)
                rlo, rhi = _risk_bounds(pwa, opts, scn.alpha_r)
                r3 = np.zeros(nv)
                r3[ri] = -1.0
                add_row(r3, -rlo)
                r3 = np.zeros(nv)
                r3[ri] = 1.0
                add_row(r3, rhi)
                sum_avoid[ri] = 1.0
            add_row(row, b)  # -w.U + g s - t <= f0 - w.u_ref - c
            r4 = np.zeros(nv)
            r4[ti] = -1.0
            add_row(r4, 0.0)  # t >= 0

    if sum_terminal.any():
        add_row(sum_terminal, scn.alpha_T)
    if sum_avoid.any():
        add_row(sum_avoid, scn.alpha_r)

    H = np.zeros((nv, nv))
    np.fill_diagonal(H, 2e-10)  # strict convexity on risk/slack directions
    H[:layout.n_u, :layout.n_u] = 2.0 * np.eye(layout.n_u)
    q = np.zeros(nv)
    if include_reverse:
        for idx in layout.rev_all_ids:
            q[layout.t_idx[idx]] = tau
    return QpSubproblem(H=H, q=q, G=np.vstack(rows), h=np.asarray(rhs))


def _unpack(x: np.ndarray, layout: DecisionLayout, cat: list, scn: Scenario):
    v, N, m = scn.n_vehicles, scn.N, scn.system.m
    inputs = x[:layout.n_u].reshape(v, N, m).copy()
    omegas = {i: float(x[layout.risk_idx[i]]) for i in layout.conv_ids}
    betas = {i: float(x[layout.risk_idx[i]]) for i in layout.rev_ids}
    slacks_s = {i: float(x[layout.s_idx[i]])
                for i in layout.conv_ids + layout.rev_ids}
    slacks_t = {i: float(x[layout.t_idx[i]]) for i in layout.rev_all_ids}
    return inputs, omegas, betas, slacks_s, slacks_t


def initialize(scn: Scenario, cat: list, backend: QpBackend,
               pwa_map: Dict[str, PwaQuantile],
               opts: SolverOptions = SolverOptions()) -> np.ndarray:
    """Reference input from the relaxation without reverse-convex rows."""
    layout = make_layout(scn, cat)
    qp = build_iterate_qp(cat, pwa_map, layout, scn, None, 0.0,
                          opts=opts, include_reverse=False)
    res = backend.solve(qp)
    if res.status != "optimal":
        raise InfeasibleRelaxationError(
            f"convex relaxation returned '{res.status}'; targets are "
            "unreachable under the input bounds")
    return res.x.copy()


def convex_concave_solve(scn: Scenario, cat: list,
                         pwa_map: Dict[str, PwaQuantile],
                         backend: QpBackend,
                         opts: SolverOptions = SolverOptions()) -> Solution:
    """Iterate linearize-and-solve until cost and slacks settle.

    Convergence requires both the cost delta and the slack sum below
    ``opts.tol``.  The slack penalty escalates only while slacks persist,
    and an iterate that fails to improve the penalized objective (possible
    only at solver noise level) triggers termination on the previous,
    better iterate, keeping the recorded trace non-increasing.
    """
    layout = make_layout(scn, cat)
    u_ref = initialize(scn, cat, backend, pwa_map, opts)

    tau = opts.tau0
    trace = []
    best = None
    prev_cost = None
    prev_pen = None
    prev_tau = None
    converged = False
    iters = 0

    for it in range(opts.max_iters):
        qp = build_iterate_qp(cat, pwa_map, layout, scn, u_ref, tau, opts=opts)
        res = backend.solve(qp)
        if res.status != "optimal":
            raise QpFailureError(
                f"QP subproblem failed at iteration {it} with status "
                f"'{res.status}' (tau={tau:g}, {qp.G.shape[0]} rows, "
                f"{qp.G.shape[1]} vars)")
        x = res.x
        iters = it + 1
        inputs, omegas, betas, ss, st = _unpack(x, layout, cat, scn)
        cost = float(sum(np.dot(u.ravel(), u.ravel()) for u in inputs))
        slack_sum = float(sum(st.values()))
        pen = cost + tau * slack_sum

        if prev_pen is not None and tau == prev_tau and pen > prev_pen + 1e-12:
            # no descent left at backend accuracy: keep the better iterate
            converged = best is not None and best[5] < opts.tol
            break

        trace.append((it, cost, slack_sum, tau, pen))
        best = (inputs, omegas, betas, ss, st, slack_sum, cost)
        if prev_cost is not None and abs(cost - prev_cost) < opts.tol \
                and slack_sum < opts.tol:
            converged = True
            break
        u_ref = x
        prev_cost, prev_pen, prev_tau = cost, pen, tau
        if slack_sum > opts.tol:
            tau = min(tau * opts.tau_growth, opts.tau_max)

    inputs, omegas, betas, ss, st, slack_sum, cost = best
    return Solution(inputs=inputs, omegas=omegas, betas=betas,
                    slacks_s=ss, slacks_t=st, cost=cost,
                    iterations=iters, converged=converged, trace=tuple(trace))


def certify(solution: Solution, cat: list,
            pwa_map: Dict[str, PwaQuantile],
            alpha_T: Optional[float] = None,
            alpha_r: Optional[float] = None) -> CertReport:
    """Re-check every compiled constraint with exact envelope evaluation.

    Violations are measured on the risk-tightened inequalities themselves
    (not on solver residuals): for each constraint the envelope value at
    1 - risk replaces the solver's s surrogate, feasibility slacks are not
    credited, and the group budgets and non-negativity are re-summed.
    """
    u = solution.inputs.ravel()
    worst = 0.0
    details = []
    bt = sum(solution.omegas.values())
    ba = sum(solution.betas.values())
    for idx, cc in enumerate(cat):
        if cc.kind == "convex-upper":
            f = cc.f_spec
            lhs = float(f.a @ u) + f.b
            if cc.dist is None:
                viol = lhs - cc.c
            else:
                w = solution.omegas[idx]
                viol = lhs - (cc.c - cc.g * pwa_eval(pwa_map[cc.dist.name], 1.0 - w))
                viol = max(viol, -w)  # risk must be non-negative
        else:
            f = cc.f_spec
            lhs = float(np.linalg.norm(f.M @ u + f.v))
            if cc.dist is None:
                viol = cc.c - lhs
            else:
                b = solution.betas[idx]
                viol = (cc.c + cc.g * pwa_eval(pwa_map[cc.dist.name], 1.0 - b)) - lhs
                viol = max(viol, -b)
        details.append((idx, float(viol)))
        worst = max(worst, viol)
    ok = worst <= 1e-6
    if alpha_T is not None and bt > alpha_T + 1e-9:
        ok = False
    if alpha_r is not None and ba > alpha_r + 1e-9:
        ok = False
    return CertReport(ok=ok, max_violation=float(worst),
                      budget_terminal=float(bt), budget_avoidance=float(ba),
                      details=tuple(details))
