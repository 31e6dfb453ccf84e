"""Brute-force references, kept independent of the low-rank kernels.

Everything here evaluates the direct dense formulas (n x n solves, literal
Bayes update, exhaustive enumeration, finite differences).  None of it
shares code with the frozen-QR path; that independence is the point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import aoptimal
from .aoptimal import LowRankObjective, design_vector


@dataclass
class DenseInstance:
    """Dense snapshot of the preconditioned operator and prior, desk scale."""

    Fb: np.ndarray         # (m * m_obs, n)
    C0_dense: np.ndarray   # (n, n) symmetric positive definite
    mass_diag: np.ndarray  # (n,)
    m_obs: int = 1

    def __post_init__(self):
        self.Fb = np.asarray(self.Fb, dtype=float)
        self.C0_dense = np.asarray(self.C0_dense, dtype=float)
        self.mass_diag = np.asarray(self.mass_diag, dtype=float)
        n = self.C0_dense.shape[0]
        if n > 500:
            raise ValueError("dense oracle instances are capped at n = 500")
        if self.Fb.shape[1] != n or self.mass_diag.size != n:
            raise ValueError("inconsistent dimensions")
        if self.Fb.shape[0] % self.m_obs:
            raise ValueError("rows of Fb must divide into m_obs blocks")
        sym = np.abs(self.C0_dense - self.C0_dense.T).max()
        if sym > 1e-10 * max(1.0, np.abs(self.C0_dense).max()):
            raise ValueError("C0_dense must be symmetric")
        if np.linalg.eigvalsh(self.C0_dense).min() <= 0:
            raise ValueError("C0_dense must be positive definite")
        if np.any(self.mass_diag <= 0):
            raise ValueError("mass_diag must be positive")

    @property
    def n(self) -> int:
        return self.C0_dense.shape[0]

    @property
    def m(self) -> int:
        return self.Fb.shape[0] // self.m_obs

    def expand(self, w) -> np.ndarray:
        return np.tile(design_vector(w), self.m_obs)

    def weighted_c0(self) -> np.ndarray:
        sq = np.sqrt(self.mass_diag)
        return sq[:, None] * self.C0_dense / sq[None, :]


def _misfit(inst: DenseInstance, w) -> np.ndarray:
    wx = inst.expand(w)
    h = inst.Fb.T @ (wx[:, None] * inst.Fb)
    h[np.diag_indices_from(h)] += 1.0
    return h


def dense_objective(inst: DenseInstance, w) -> float:
    """tr((F^T diag(w~) F + I)^{-1} M^{1/2} C0 M^{-1/2}), formed densely."""
    h = _misfit(inst, w)
    return float(np.trace(np.linalg.solve(h, inst.weighted_c0())))


def dense_objective_via_bayes(inst: DenseInstance, w) -> float:
    """Trace of the posterior covariance from the un-pushed Bayes form.

    Inverts the precision F_raw^* diag(w~) F_raw + C0^{-1} in the original
    coordinates instead of the whitened push-through form, so the two dense
    routes check each other.
    """
    f_raw = unwhitened_forward(inst)
    wx = inst.expand(w)
    minv = 1.0 / inst.mass_diag
    prec = minv[:, None] * (f_raw.T @ (wx[:, None] * f_raw)) \
        + np.linalg.inv(inst.C0_dense)
    return float(np.trace(np.linalg.inv(prec)))


def dense_gradient(inst: DenseInstance, w) -> np.ndarray:
    x = np.linalg.solve(_misfit(inst, w), inst.Fb.T).T  # F H^{-1}
    y = x @ inst.weighted_c0()
    g_full = -np.einsum("ij,ij->i", y, x)
    return g_full.reshape(inst.m_obs, inst.m).sum(axis=0)


def dense_hessian(inst: DenseInstance, w) -> np.ndarray:
    x = np.linalg.solve(_misfit(inst, w), inst.Fb.T).T
    w1 = x @ inst.weighted_c0() @ x.T
    w2 = x @ inst.Fb.T
    h_full = 2.0 * w1 * w2
    mm, mo = inst.m, inst.m_obs
    return h_full.reshape(mo, mm, mo, mm).sum(axis=(0, 2))


def unwhitened_forward(inst: DenseInstance) -> np.ndarray:
    """Recover the raw forward map F = Fb M^{1/2} C0^{-1/2} (unit noise)."""
    lam, vec = np.linalg.eigh(inst.C0_dense)
    isqrt = (vec * (1.0 / np.sqrt(lam))) @ vec.T
    return inst.Fb @ (np.sqrt(inst.mass_diag)[:, None] * isqrt)


def dense_posterior(inst: DenseInstance, w, g, prior_mean=None):
    """Literal Bayes update: posterior mean and covariance, unit noise.

    Returns (mean, covariance) with the covariance the matrix of the
    posterior operator in the coefficient basis, so its plain trace equals
    ``dense_objective``.
    """
    f_raw = unwhitened_forward(inst)
    minv = 1.0 / inst.mass_diag
    wx = inst.expand(w)
    c0_inv = np.linalg.inv(inst.C0_dense)
    prec = minv[:, None] * (f_raw.T @ (wx[:, None] * f_raw)) + c0_inv
    cov = np.linalg.inv(prec)
    g = np.asarray(g, dtype=float)
    if prior_mean is None:
        prior_mean = np.zeros(inst.n)
    prior_mean = np.asarray(prior_mean, dtype=float)
    residual = g - f_raw @ prior_mean
    mean = prior_mean + cov @ (minv * (f_raw.T @ (wx * residual)))
    return mean, cov


@dataclass
class EnumerationTable:
    designs: list
    values: np.ndarray
    m: int
    m0: int
    best_leq_value: float | None = None
    best_leq_design: tuple | None = None

    @property
    def best_value(self) -> float:
        return float(self.values[0])

    @property
    def best_design(self):
        return self.designs[0]


def _evaluator(obj_or_inst):
    if isinstance(obj_or_inst, DenseInstance):
        return (lambda w: dense_objective(obj_or_inst, w)), obj_or_inst.m
    if isinstance(obj_or_inst, LowRankObjective):
        return (lambda w: aoptimal.objective(obj_or_inst, w)), obj_or_inst.m
    raise TypeError("expected a DenseInstance or LowRankObjective")


def enumerate_binary(obj_or_inst, m0: int, limit: int = 10**6) -> EnumerationTable:
    """Evaluate J on every binary design with exactly m0 sensors.

    Also tracks the best design using at most m0 sensors when the extra
    subsets fit the limit, confirming that full budgets are never wasteful
    for monotone objectives.  Rows are sorted ascending by (J, design).
    """
    evaluate, m = _evaluator(obj_or_inst)
    if comb(m, m0) > limit:
        raise ValueError(
            f"C({m},{m0}) = {comb(m, m0)} exceeds the enumeration limit")
    rows = []
    for combo in itertools.combinations(range(m), m0):
        w = np.zeros(m)
        w[list(combo)] = 1.0
        rows.append((float(evaluate(w)), combo))
    rows.sort()
    values = np.array([r[0] for r in rows])
    designs = [r[1] for r in rows]
    best_leq_value, best_leq_design = values[0], designs[0]
    total_small = sum(comb(m, j) for j in range(m0))
    if total_small + comb(m, m0) <= limit:
        for j in range(m0):
            for combo in itertools.combinations(range(m), j):
                w = np.zeros(m)
                w[list(combo)] = 1.0
                val = float(evaluate(w))
                if val < best_leq_value:
                    best_leq_value, best_leq_design = val, combo
    else:
        best_leq_value, best_leq_design = None, None
    return EnumerationTable(designs, values, m, m0,
                            best_leq_value, best_leq_design)


def fd_gradient(eval_j, w, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar objective."""
    w = design_vector(w).astype(float)
    g = np.zeros(w.size)
    for k in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[k] += h
        wm[k] -= h
        g[k] = (eval_j(wp) - eval_j(wm)) / (2.0 * h)
    return g


def fd_hvp(eval_grad, w, v, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a gradient along direction v."""
    w = design_vector(w).astype(float)
    v = np.asarray(v, dtype=float)
    return (eval_grad(w + h * v) - eval_grad(w - h * v)) / (2.0 * h)


@dataclass
class DesignSample:
    values: np.ndarray
    designs: list
    rng_seed: int
    m0: int
    quantiles: dict = field(default_factory=dict)

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def fraction_above(self, value: float) -> float:
        """Fraction of sampled designs the given objective value beats."""
        return float(np.mean(self.values > value))


def random_designs(obj_or_inst, m0: int, count: int = 1000,
                   rng_seed: int = 0) -> DesignSample:
    """Uniform random binary designs with exactly m0 sensors, seeded."""
    if count < 1:
        raise ValueError("count must be at least 1")
    evaluate, m = _evaluator(obj_or_inst)
    rng = np.random.default_rng(rng_seed)
    values = np.empty(count)
    designs = []
    for i in range(count):
        combo = np.sort(rng.choice(m, size=m0, replace=False))
        w = np.zeros(m)
        w[combo] = 1.0
        values[i] = evaluate(w)
        designs.append(tuple(int(c) for c in combo))
    qs = {q: float(np.quantile(values, q / 100.0)) for q in (5, 25, 50, 75, 95)}
    return DesignSample(values, designs, rng_seed, m0, qs)
