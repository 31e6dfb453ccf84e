"""Global optimality certificates for the 1-relaxed placement problem.

At a global optimum over the capped simplex {0 <= w <= 1, sum w <= m0} the
sorted gradient either has a strict gap at position m0 (then the optimum is
the binary vertex saturating the m0 leading indices) or ties across a band
of indices (then the optimum is 1 below the band, 0 above it, and spends the
whole budget).  ``classify`` extracts that partition, ``verify_global``
checks a candidate against it, and the Frank-Wolfe gap provides the
quantitative certificate: by convexity J(w) - J(w*) <= gap(w).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aoptimal import design_vector


@dataclass
class Classification:
    dominant: np.ndarray
    redundant: np.ndarray
    free: np.ndarray
    m0_lower: int
    m0_upper: int
    tie_tol: float
    case: str  # "strict_gap" or "tie"

    def to_dict(self) -> dict:
        return {
            "dominant": [int(i) for i in self.dominant],
            "redundant": [int(i) for i in self.redundant],
            "free": [int(i) for i in self.free],
            "m0_lower": int(self.m0_lower),
            "m0_upper": int(self.m0_upper),
            "tie_tol": float(self.tie_tol),
            "case": self.case,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Classification":
        return cls(np.asarray(d["dominant"], dtype=int),
                   np.asarray(d["redundant"], dtype=int),
                   np.asarray(d["free"], dtype=int),
                   int(d["m0_lower"]), int(d["m0_upper"]),
                   float(d["tie_tol"]), d["case"])


@dataclass
class OptimalityReport:
    is_global: bool
    fw_gap: float
    sum_w: float
    violations: list = field(default_factory=list)
    classification: Classification | None = None

    def to_dict(self) -> dict:
        d = {
            "is_global": bool(self.is_global),
            "fw_gap": float(self.fw_gap),
            "sum_w": float(self.sum_w),
            "violations": list(self.violations),
        }
        if self.classification is not None:
            d["classification"] = self.classification.to_dict()
        return d


def default_tie_tol(grad: np.ndarray, m0: int, rel: float = 1e-6) -> float:
    """rel times the largest gradient magnitude among the m0 leading entries."""
    lead = np.sort(grad, kind="stable")[:m0]
    scale = float(np.abs(lead).max()) if lead.size else 0.0
    return rel * scale if scale > 0 else rel


def classify(grad, m0: int, tie_tol: float | None = None) -> Classification:
    """Partition sensors into dominant/redundant/free from a gradient.

    Sorts ascending (stable, original-index tiebreak).  A gap larger than
    ``tie_tol`` between positions m0 and m0+1 gives the strict case with
    exactly m0 dominant indices; otherwise indices within ``tie_tol`` of the
    gradient value at position m0 are free, strictly smaller ones dominant,
    strictly larger ones redundant.  The conventions m0_lower = 0 and
    m0_upper = m + 1 mark empty sets.
    """
    grad = np.asarray(grad, dtype=float)
    m = grad.size
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient must be finite")
    if m0 < 1 or m0 > m:
        raise ValueError("m0 must lie in [1, m]")
    if tie_tol is None:
        tie_tol = default_tie_tol(grad, m0)
    order = np.argsort(grad, kind="stable")
    gs = grad[order]
    all_idx = np.arange(m)
    if m0 == m or gs[m0] - gs[m0 - 1] > tie_tol:
        dominant = np.sort(order[:m0])
        redundant = np.sort(order[m0:])
        return Classification(dominant, redundant, np.array([], dtype=int),
                              m0, m0 + 1, tie_tol, "strict_gap")
    gstar = gs[m0 - 1]
    dom_mask = grad < gstar - tie_tol
    red_mask = grad > gstar + tie_tol
    free_mask = ~(dom_mask | red_mask)
    n_dom = int(dom_mask.sum())
    n_red = int(red_mask.sum())
    return Classification(all_idx[dom_mask], all_idx[red_mask],
                          all_idx[free_mask],
                          n_dom, m - n_red + 1 if n_red else m + 1,
                          tie_tol, "tie")


def lmo(grad, m0: int) -> np.ndarray:
    """Vertex maximising <-grad, s> over the capped simplex.

    Puts weight 1 on the m0 most negative gradient entries, skipping
    non-negative ones.
    """
    grad = np.asarray(grad, dtype=float)
    if m0 > grad.size:
        raise ValueError("m0 exceeds the number of sensors")
    s = np.zeros(grad.size)
    order = np.argsort(grad, kind="stable")[:m0]
    take = order[grad[order] < 0.0]
    s[take] = 1.0
    return s


def fw_gap(w, grad, m0: int) -> float:
    """<grad, w - lmo(grad, m0)>; zero exactly at global optima."""
    w = design_vector(w)
    grad = np.asarray(grad, dtype=float)
    return float(grad @ (w - lmo(grad, m0)))


def verify_global(w, grad, m0: int, tol: float = 1e-6,
                  tie_tol: float | None = None) -> OptimalityReport:
    """Check the global-optimality conditions for a candidate design.

    Raises on infeasible input (infeasibility is an error, not a verdict).
    In the strict case the design must saturate the m0 leading indices and
    vanish elsewhere; in the tie case it must saturate dominant indices,
    vanish on redundant ones and spend the whole budget.  The report carries
    the Frank-Wolfe gap as quantitative certificate either way.

    The tie tolerance defaults to max(1e-6, 10 * tol) times the leading
    gradient scale, so gradients equalised only to solver accuracy are still
    recognised as ties.
    """
    w = design_vector(w)
    grad = np.asarray(grad, dtype=float)
    m = w.size
    budget_slack = tol * max(1.0, float(m0))
    if w.min() < -tol:
        raise ValueError(f"infeasible design: w_{int(w.argmin())} < 0")
    if w.max() > 1.0 + tol:
        raise ValueError(f"infeasible design: w_{int(w.argmax())} > 1")
    if w.sum() > m0 + budget_slack:
        raise ValueError(
            f"infeasible design: sum(w) = {w.sum():.6g} exceeds m0 = {m0}")
    if tie_tol is None:
        tie_tol = default_tie_tol(grad, m0, rel=max(1e-6, 10.0 * tol))
    cls = classify(grad, m0, tie_tol)
    violations = []
    if cls.dominant.size and np.any(w[cls.dominant] < 1.0 - tol):
        violations.append("(a) dominant not saturated")
    if cls.redundant.size and np.any(w[cls.redundant] > tol):
        violations.append("(b) redundant not zero")
    if cls.case == "tie" and abs(w.sum() - m0) > budget_slack:
        violations.append("(c) sensor budget not exhausted")
    gap = fw_gap(w, grad, m0)
    return OptimalityReport(not violations, gap, float(w.sum()),
                            violations, cls)


def apriori_classify(grad_at_0, grad_at_1, grad_at_w, constants,
                     m0: int) -> Classification:
    """Fix individual indices from gradients at auxiliary points.

    ``constants`` are the Lipschitz-derived (L0, L1, L2).  An index is
    dominant when, in at least one of the three tests, its gradient entry
    shifted up by twice the matching constant still sits below at least
    m - m0 other entries; redundant symmetrically with m0.  Indices fixed by
    neither rule stay free, and the partial classification may well be empty
    when the constants are large.  ``grad_at_w`` may be None.
    """
    l0, l1, l2 = (float(c) for c in constants)
    tests = [(np.asarray(grad_at_0, dtype=float), l0),
             (np.asarray(grad_at_1, dtype=float), l1)]
    if grad_at_w is not None:
        tests.append((np.asarray(grad_at_w, dtype=float), l2))
    m = tests[0][0].size
    if any(g.size != m for g, _ in tests):
        raise ValueError("gradient vectors must share length")
    dom = np.zeros(m, dtype=bool)
    red = np.zeros(m, dtype=bool)
    for g, lc in tests:
        gs = np.sort(g)
        # counts of strictly larger / strictly smaller entries
        larger = m - np.searchsorted(gs, g + 2.0 * lc, side="right")
        smaller = np.searchsorted(gs, g - 2.0 * lc, side="left")
        dom |= larger >= m - m0
        red |= smaller >= m0
    all_idx = np.arange(m)
    free = ~(dom | red)
    n_red = int(red.sum())
    return Classification(all_idx[dom], all_idx[red], all_idx[free],
                          int(dom.sum()), m - n_red + 1 if n_red else m + 1,
                          0.0, "strict_gap" if not free.any() else "tie")
