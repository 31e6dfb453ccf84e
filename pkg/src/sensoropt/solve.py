"""Solvers: the convex 1-relaxed problem and the binary p-continuation.

The convex problem min J(w) over the capped simplex is solved by projected
gradient descent with Barzilai-Borwein trial steps and a monotone Armijo
backtracking line search; the Frank-Wolfe gap provides a principled stopping
rule tied directly to the global-optimality certificate.  The continuation
driver then fixes dominant/redundant sensors from the certified optimum and
follows z = w^p through decreasing p, with each inner problem solved by the
same projected-gradient machinery under the linear constraints
0 <= z <= 1, sum z <= m0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .aoptimal import Design, LowRankObjective, Workspace, design_vector, gradient, objective
from .optimality import Classification, OptimalityReport, fw_gap, verify_global


@dataclass
class SolverConfig:
    max_iters: int = 3000
    gap_tol: float = 1e-9
    step_rule: str = "armijo"  # "armijo" or "fixed"
    fixed_step: float = 1.0
    armijo_c1: float = 1e-4
    armijo_shrink: float = 0.5
    projection_tol: float = 1e-12
    verify_tol: float = 1e-5

    def __post_init__(self):
        if self.gap_tol <= 0:
            raise ValueError("gap_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step_rule not in ("armijo", "fixed"):
            raise ValueError("step_rule must be 'armijo' or 'fixed'")


@dataclass
class ContinuationState:
    p: float
    i: int
    w: np.ndarray
    fixed_ones: np.ndarray
    fixed_zeros: np.ndarray
    delta: float
    binary_threshold: float


def project_capped_simplex(v, m0: int, fixed_ones=None, fixed_zeros=None,
                           projection_tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection onto {0 <= z <= 1, sum z <= m0} with pins.

    Pinned coordinates are forced to 1 resp. 0 and the free block is
    projected onto the residual budget by the sort-based breakpoint method:
    clip(v - tau, 0, 1) with tau found exactly on the piecewise-linear sum.
    """
    v = np.asarray(v, dtype=float)
    m = v.size
    fixed_ones = (np.asarray(fixed_ones, dtype=int)
                  if fixed_ones is not None else np.array([], dtype=int))
    fixed_zeros = (np.asarray(fixed_zeros, dtype=int)
                   if fixed_zeros is not None else np.array([], dtype=int))
    if np.intersect1d(fixed_ones, fixed_zeros).size:
        raise ValueError("fixed_ones and fixed_zeros overlap")
    if fixed_ones.size > m0:
        raise ValueError(
            f"{fixed_ones.size} pinned-on sensors exceed the budget m0={m0}")
    out = np.empty(m)
    out[fixed_ones] = 1.0
    out[fixed_zeros] = 0.0
    free = np.ones(m, dtype=bool)
    free[fixed_ones] = False
    free[fixed_zeros] = False
    budget = float(m0 - fixed_ones.size)
    out[free] = _project_box_capped(v[free], budget, projection_tol)
    return out


def _project_box_capped(v, budget, tol):
    x = np.clip(v, 0.0, 1.0)
    total = x.sum()
    if total <= budget + tol:
        return x
    if budget <= 0.0:
        return np.zeros_like(v)
    bps = np.unique(np.concatenate([v, v - 1.0]))
    bps = bps[bps > 0.0]
    fvals = np.clip(v[None, :] - bps[:, None], 0.0, 1.0).sum(axis=1)
    # fvals is non-increasing; the last value is 0 <= budget
    idx = int(np.argmax(fvals <= budget))
    tau_hi, f_hi = bps[idx], fvals[idx]
    tau_lo, f_lo = (0.0, total) if idx == 0 else (bps[idx - 1], fvals[idx - 1])
    if f_lo == f_hi:
        tau = tau_hi
    else:
        tau = tau_lo + (f_lo - budget) * (tau_hi - tau_lo) / (f_lo - f_hi)
    return np.clip(v - tau, 0.0, 1.0)


@dataclass
class PGResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)  # (iter, f, metric, step)


def _pg_minimize(f_only, f_and_g, project, x0, cfg: SolverConfig, metric_fn):
    x = project(np.asarray(x0, dtype=float))
    f, g = f_and_g(x)
    step = 1.0 / max(1.0, float(np.linalg.norm(g)))
    trace = []
    converged = False
    it = 0
    for it in range(cfg.max_iters):
        metric = metric_fn(x, g)
        trace.append((it, f, metric, step))
        if metric <= cfg.gap_tol:
            converged = True
            break
        if cfg.step_rule == "fixed":
            x_new = project(x - cfg.fixed_step * g)
            if np.allclose(x_new, x, rtol=0, atol=1e-16):
                break
        else:
            t = step
            x_new = None
            for _ in range(80):
                cand = project(x - t * g)
                d = cand - x
                dn2 = float(d @ d)
                if dn2 <= 1e-30 * max(1.0, float(x @ x)):
                    break
                f_cand = f_only(cand)
                if f_cand <= f + cfg.armijo_c1 * float(g @ d) + 1e-14 * (abs(f) + 1.0):
                    x_new = cand
                    break
                t *= cfg.armijo_shrink
            if x_new is None:
                break  # stalled: projected step no longer decreases
        g_old = g
        f, g = f_and_g(x_new)
        s = x_new - x
        y = g - g_old
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 1e-300 else min(step * 2.0, 1e12)
        step = float(np.clip(step, 1e-12, 1e12))
        x = x_new
    else:
        it = cfg.max_iters
    if not converged:
        metric = metric_fn(x, g)
        trace.append((it, f, metric, step))
        converged = metric <= cfg.gap_tol
    return PGResult(x, f, g, converged, it, trace)


@dataclass
class SolveResult:
    design: Design
    report: OptimalityReport
    objective: float
    grad: np.ndarray
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)


def solve_convex(obj: LowRankObjective, m0: int,
                 config: SolverConfig | None = None) -> SolveResult:
    """Solve the 1-relaxed problem over the capped simplex.

    Starts from the interior point (m0/m) * 1 and stops once the Frank-Wolfe
    gap falls below ``gap_tol``; the returned report re-checks the
    global-optimality conditions at the final iterate.  Non-convergence is
    flagged on the result and warned about, never silent.
    """
    cfg = config or SolverConfig()
    if m0 < 1 or m0 > obj.m:
        raise ValueError("m0 must lie in [1, m]")

    def f_only(w):
        return objective(obj, w)

    def f_and_g(w):
        ws = Workspace(obj, w)
        return objective(obj, w, ws), gradient(obj, w, ws)

    def project(v):
        return project_capped_simplex(v, m0,
                                      projection_tol=cfg.projection_tol)

    def metric(w, g):
        return fw_gap(w, g, m0)

    x0 = np.full(obj.m, m0 / obj.m)
    res = _pg_minimize(f_only, f_and_g, project, x0, cfg, metric)
    if not res.converged:
        warnings.warn(
            f"solve_convex stopped after {res.iterations} iterations with "
            f"Frank-Wolfe gap {res.trace[-1][2]:.3e} > {cfg.gap_tol:.1e}")
    report = verify_global(res.x, res.g, m0, tol=cfg.verify_tol)
    return SolveResult(Design(res.x, m0), report, res.f, res.g,
                       res.converged, res.iterations, res.trace)


def solve_p_step(obj: LowRankObjective, m0: int, p: float, z_init,
                 fixed_ones=None, fixed_zeros=None,
                 config: SolverConfig | None = None) -> Design:
    """Minimise J(z^{1/p}) under 0 <= z <= 1, sum z <= m0 and return w = z^{1/p}.

    The chain-rule gradient (1/p) grad J(z^{1/p}) z^{1/p - 1} vanishes on
    zero entries, so zeros are absorbing.  Convergence is a local criterion
    only (projected-gradient norm below gap_tol); the rewritten problem is
    non-convex.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    cfg = config or SolverConfig()
    ip = 1.0 / p

    def to_w(z):
        return np.power(z, ip)

    def f_only(z):
        return objective(obj, to_w(z))

    def f_and_g(z):
        w = to_w(z)
        ws = Workspace(obj, w)
        f = objective(obj, w, ws)
        gw = gradient(obj, w, ws)
        gz = ip * gw * np.power(z, ip - 1.0)
        return f, gz

    def project(v):
        return project_capped_simplex(v, m0, fixed_ones, fixed_zeros,
                                      cfg.projection_tol)

    def metric(z, g):
        return float(np.linalg.norm(project(z - g) - z))

    z0 = np.clip(np.asarray(z_init, dtype=float), 0.0, 1.0)
    res = _pg_minimize(f_only, f_and_g, project, z0, cfg, metric)
    return Design(to_w(res.x), m0)


def p_norm(w, p: float) -> float:
    """sum_k w_k^p with the convention 0^0 = 0."""
    w = design_vector(w)
    nz = w[w != 0.0]
    return float(np.sum(np.power(nz, p)))


def in_constraint_set(w, m0: int, p: float, tol: float = 1e-9) -> bool:
    """Membership test for {0 <= w <= 1, sum w^p <= m0} at power p in [0, 1].

    p = 1 is the convex budget, p = 0 counts active sensors (0^0 = 0).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    w = design_vector(w)
    if w.min() < -tol or w.max() > 1.0 + tol:
        return False
    return p_norm(np.clip(w, 0.0, 1.0), p) <= m0 + tol


@dataclass
class ContinuationResult:
    design: Design
    trace: list  # (p, w) pairs, p = 1 entry first
    binary: bool
    p_final: float
    classification: Classification
    convex: SolveResult
    states: list = field(default_factory=list)

    @property
    def binary_counts(self):
        thr = self.states[0].binary_threshold if self.states else 1e-3
        return [int(np.sum(np.minimum(w, 1.0 - w) <= thr))
                for _, w in self.trace]


def p_continuation(obj: LowRankObjective, m0: int, delta: float,
                   config: SolverConfig | None = None,
                   binary_threshold: float = 1e-3,
                   p_floor: float = 1e-3,
                   max_outer: int = 1000) -> ContinuationResult:
    """Drive the design to binary by solving for decreasing powers p.

    Solves the convex problem, pins dominant sensors at 1 and redundant ones
    at 0 from its classification, then repeats p <- (1 - delta) p, warm
    starting each inner solve at z = w^p, until every weight is within
    ``binary_threshold`` of {0, 1}.  delta in [1e-2, 1e-1] is the
    recommended range.  The final design is rounded to exact {0, 1} and
    re-checked feasible; if p reaches ``p_floor`` first, the best iterate is
    returned flagged non-binary.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie strictly between 0 and 1")
    cfg = config or SolverConfig()
    conv = solve_convex(obj, m0, cfg)
    cls = conv.report.classification
    fixed_ones = np.asarray(cls.dominant, dtype=int)
    fixed_zeros = np.asarray(cls.redundant, dtype=int)

    w = project_capped_simplex(conv.design.w, m0, fixed_ones, fixed_zeros,
                               cfg.projection_tol)
    trace = [(1.0, w.copy())]
    states = [ContinuationState(1.0, 0, w.copy(), fixed_ones.copy(),
                                fixed_zeros.copy(), delta, binary_threshold)]

    def is_binary(vec):
        return bool(np.all(np.minimum(vec, 1.0 - vec) <= binary_threshold))

    p = 1.0
    i = 0
    binary = is_binary(w)
    while not binary and i < max_outer:
        p *= 1.0 - delta
        i += 1
        if p < p_floor:
            break
        z0 = np.power(w, p)
        des = solve_p_step(obj, m0, p, z0, fixed_ones, fixed_zeros, cfg)
        w = des.w
        # zeros are absorbing under the z-rewrite; record them as fixed
        new_zeros = np.flatnonzero(w == 0.0)
        fixed_zeros = np.union1d(fixed_zeros, new_zeros)
        trace.append((p, w.copy()))
        states.append(ContinuationState(p, i, w.copy(), fixed_ones.copy(),
                                        fixed_zeros.copy(), delta,
                                        binary_threshold))
        binary = is_binary(w)

    if binary:
        w_binary = np.where(w > 0.5, 1.0, 0.0)
        if not in_constraint_set(w_binary, m0, 0.0):
            raise RuntimeError(
                "rounded continuation output violates the budget; "
                "binary_threshold is inconsistent with m0")
        final = Design(w_binary, m0)
    else:
        warnings.warn(
            f"p-continuation did not reach a binary design (p={p:.3e}); "
            "returning the best iterate flagged non-binary")
        final = Design(w, m0)
    return ContinuationResult(final, trace, binary, p, cls, conv, states)
