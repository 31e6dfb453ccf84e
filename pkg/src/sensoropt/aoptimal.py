"""A-optimal objective, derivatives and posterior quantities from a frozen QR.

With F^T = Q R frozen, every design-dependent quantity reduces to the small
ell x ell matrix L_w = R diag(w~) R^T + I (w~ replicates the design across
observation blocks) and the design-independent compression
Chat = Q^T M^{1/2} C0 M^{-1/2} Q:

    J(w)      = tr(C0) - tr(Chat) + tr(L_w^{-1} Chat)
    grad_k    = - sum over blocks of |Chat^{1/2} L_w^{-1} R e_k|^2
    H(w)      = block sums of 2 [R^T L^{-1} Chat L^{-1} R] o [R^T L^{-1} R]

The Hessian-vector product uses the row-sum-of-Schur-product identity and
never forms an m x m matrix.  A Workspace holds the Cholesky factor of L_w
for one design so objective, gradient and matvec evaluations share it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lowrank import QRModel


@dataclass
class Design:
    """Sensor weight vector in [0, 1]^m with a budget of m0 sensors."""

    w: np.ndarray
    m0: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1:
            raise ValueError("design weights must be a 1-D vector")
        if self.m0 < 0 or self.m0 > w.size:
            raise ValueError("budget m0 must lie in [0, m]")
        if w.min() < -1e-9 or w.max() > 1.0 + 1e-9:
            raise ValueError("design weights must lie in [0, 1]")
        if w.sum() > self.m0 + 1e-9:
            raise ValueError("design exceeds the sensor budget")
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return self.w.size

    def is_binary(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.minimum(self.w, 1.0 - self.w) <= tol))


def design_vector(w) -> np.ndarray:
    if isinstance(w, Design):
        return w.w
    return np.asarray(w, dtype=float)


@dataclass
class LowRankObjective:
    """Frozen quantities that fully determine J, its gradient and Hessian."""

    R: np.ndarray          # (ell, m * m_obs)
    Chat: np.ndarray       # (ell, ell), symmetric PSD
    Chat_half: np.ndarray  # Chat = Chat_half^T Chat_half
    trace_C0: float
    trace_Chat: float
    m: int
    m_obs: int
    ell: int

    def __post_init__(self):
        if self.R.shape != (self.ell, self.m * self.m_obs):
            raise ValueError("R shape inconsistent with (ell, m * m_obs)")

    def expand(self, w) -> np.ndarray:
        """Replicate a length-m design across the m_obs observation blocks."""
        w = design_vector(w)
        if w.size != self.m:
            raise ValueError(f"design length {w.size}, expected {self.m}")
        return np.tile(w, self.m_obs)

    def collapse(self, v: np.ndarray) -> np.ndarray:
        """Sum each m-th entry across the observation blocks."""
        return v.reshape(self.m_obs, self.m).sum(axis=0)


def assemble(qrm: QRModel, prior) -> LowRankObjective:
    """Compress the prior through the frozen Q basis.

    Chat is formed by ell prior applications, symmetrised, and factored by a
    spectral decomposition with negative eigenvalues clipped to zero.  A clip
    beyond 1e-6 * ||Chat|| signals a prior inconsistent with the QR model and
    raises.
    """
    if qrm.n != prior.n:
        raise ValueError(
            f"QR model has n={qrm.n} rows, prior has n={prior.n}")
    if qrm.ell == 0:
        return LowRankObjective(qrm.R, np.zeros((0, 0)), np.zeros((0, 0)),
                                float(prior.trace_C0), 0.0,
                                qrm.m, qrm.m_obs, 0)
    sq = np.sqrt(prior.mass_diag)
    z = prior.c0_apply(qrm.Q / sq[:, None])
    chat_raw = qrm.Q.T @ (sq[:, None] * z)
    chat = 0.5 * (chat_raw + chat_raw.T)
    lam, vec = np.linalg.eigh(chat)
    scale = float(np.abs(lam).max()) if lam.size else 0.0
    if lam.size and lam.min() < -1e-6 * scale:
        raise ValueError(
            "prior compression is indefinite beyond tolerance "
            f"(min eigenvalue {lam.min():.3e}, scale {scale:.3e}); "
            "prior and QR model are inconsistent")
    lam = np.clip(lam, 0.0, None)
    chat = (vec * lam) @ vec.T
    chat_half = (np.sqrt(lam)[:, None] * vec.T)
    trace_chat = float(lam.sum())
    trace_c0 = float(prior.trace_C0)
    if trace_chat > trace_c0 * (1.0 + 1e-8) + 1e-12:
        raise ValueError(
            f"tr(Chat) = {trace_chat} exceeds tr(C0) = {trace_c0}; "
            "prior and QR model are inconsistent")
    return LowRankObjective(qrm.R, chat, chat_half, trace_c0, trace_chat,
                            qrm.m, qrm.m_obs, qrm.ell)


class Workspace:
    """Cholesky factor of L_w for a single design; not shared across designs.

    ``linv_r`` caches L_w^{-1} R the first time a Hessian product asks for
    it, after which gradient evaluations reuse it instead of re-solving.
    """

    def __init__(self, obj: LowRankObjective, w):
        self.obj = obj
        self.w = design_vector(w).copy()
        self._linv_r = None
        if obj.ell == 0:
            self._cho = None
            return
        wx = obj.expand(self.w)
        lw = (obj.R * wx) @ obj.R.T
        lw[np.diag_indices_from(lw)] += 1.0
        self._cho = sla.cho_factor(lw, lower=True)

    def solve(self, b):
        if self._cho is None:
            return np.zeros_like(b)
        return sla.cho_solve(self._cho, b)

    @property
    def linv_r(self) -> np.ndarray:
        if self._linv_r is None:
            self._linv_r = self.solve(self.obj.R)
        return self._linv_r

    @property
    def has_linv_r(self) -> bool:
        return self._linv_r is not None


def _workspace(obj, w, workspace):
    if workspace is None:
        return Workspace(obj, w)
    if workspace.obj is not obj or not np.array_equal(workspace.w,
                                                      design_vector(w)):
        raise ValueError("workspace was built for a different design")
    return workspace


def objective(obj: LowRankObjective, w, workspace: Workspace | None = None) -> float:
    """tr(C0) - tr(Chat) + tr(L_w^{-1} Chat)."""
    if obj.ell == 0:
        return float(obj.trace_C0)
    ws = _workspace(obj, w, workspace)
    return float(obj.trace_C0 - obj.trace_Chat
                 + np.trace(ws.solve(obj.Chat)))


def gradient(obj: LowRankObjective, w, workspace: Workspace | None = None) -> np.ndarray:
    """Negated squared column norms of Chat^{1/2} L_w^{-1} R, block-summed.

    Uses the transposed route (L^{-1} Chat^{1/2,T})^T R when no L^{-1} R is
    cached, and the cached product otherwise.
    """
    if obj.ell == 0:
        return np.zeros(obj.m)
    ws = _workspace(obj, w, workspace)
    if ws.has_linv_r:
        g_mat = obj.Chat_half @ ws.linv_r
    else:
        g_mat = ws.solve(obj.Chat_half.T).T @ obj.R
    return -obj.collapse(np.einsum("ij,ij->j", g_mat, g_mat))


def hessian(obj: LowRankObjective, w, workspace: Workspace | None = None,
            dense_limit: int = 1000) -> np.ndarray:
    """Assembled m x m Hessian; refuses above ``dense_limit`` sensors."""
    if obj.m > dense_limit:
        raise ValueError(
            f"m={obj.m} exceeds the dense Hessian limit {dense_limit}; "
            "use hessian_matvec instead")
    if obj.ell == 0:
        return np.zeros((obj.m, obj.m))
    ws = _workspace(obj, w, workspace)
    a = ws.linv_r
    w1 = a.T @ (obj.Chat @ a)
    w2 = obj.R.T @ a
    h_full = 2.0 * w1 * w2
    mm, mo = obj.m, obj.m_obs
    return h_full.reshape(mo, mm, mo, mm).sum(axis=(0, 2))


def hessian_matvec(obj: LowRankObjective, w, v,
                   workspace: Workspace | None = None) -> np.ndarray:
    """Hessian action via row sums of a Schur product of two thin matrices."""
    v = np.asarray(v, dtype=float)
    if v.size != obj.m:
        raise ValueError(f"vector length {v.size}, expected {obj.m}")
    if obj.ell == 0:
        return np.zeros(obj.m)
    ws = _workspace(obj, w, workspace)
    a = ws.linv_r
    vx = np.tile(v, obj.m_obs)
    s = (a * vx) @ obj.R.T
    b1 = a.T @ (obj.Chat @ s)
    hv_full = 2.0 * np.einsum("ij,ij->i", b1, a.T)
    return obj.collapse(hv_full)


def posterior_mean(obj: LowRankObjective, qrm: QRModel, prior, noise, w,
                   g, prior_mean=None,
                   workspace: Workspace | None = None) -> np.ndarray:
    """Posterior mean C0^{1/2} M^{-1/2} Q L_w^{-1} R Gamma^{-1/2} (w~ o g) [+ prior term].

    With a non-zero prior mean the correction C_post C0^{-1} m_prior is added
    through the same frozen factors.
    """
    g = np.asarray(g, dtype=float)
    if g.size != obj.m * obj.m_obs:
        raise ValueError("data vector has wrong length")
    ws = _workspace(obj, w, workspace)
    sq = np.sqrt(prior.mass_diag)
    wx = obj.expand(w)
    y = wx * g / noise.sigma
    out = prior.sqrt_apply((qrm.Q @ ws.solve(obj.R @ y)) / sq)
    if prior_mean is not None:
        m_pr = np.asarray(prior_mean, dtype=float)
        if np.any(m_pr):
            u0 = prior.stiffness_apply(m_pr) / sq
            qtu = qrm.Q.T @ u0
            t = u0 - qrm.Q @ qtu + qrm.Q @ ws.solve(qtu)
            out = out + prior.sqrt_apply(t / sq)
    return out


def posterior_pointwise_variance(obj: LowRankObjective, qrm: QRModel, prior, w,
                                 workspace: Workspace | None = None,
                                 limit: int = 5000) -> np.ndarray:
    """Diagonal of the posterior covariance as a field over the source dofs.

    Satisfies sum_i var_i * mass_i = J(w).  Computed from the prior diagonal
    minus the low-rank data correction; the prior diagonal needs n
    applications of C0^{1/2} M^{-1/2}, so this is desk scale only.
    """
    n = prior.n
    if n > limit:
        raise ValueError(f"n={n} exceeds the pointwise variance limit {limit}")
    sq = np.sqrt(prior.mass_diag)
    prior_diag = np.zeros(n)
    chunk = 256
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        eye_block = np.zeros((n, stop - start))
        eye_block[np.arange(start, stop), np.arange(stop - start)] = 1.0
        cols = prior.sqrt_apply(eye_block / sq[:, None])
        prior_diag += np.einsum("ij,ij->i", cols, cols)
    if obj.ell == 0:
        return prior_diag
    ws = _workspace(obj, w, workspace)
    p = prior.sqrt_apply(qrm.Q / sq[:, None])
    e = np.eye(obj.ell) - ws.solve(np.eye(obj.ell))
    correction = np.einsum("ij,ij->i", p @ e, p)
    return prior_diag - correction


def lipschitz_constants(obj: LowRankObjective, m0: int,
                        conservative: bool = True):
    """Gradient Lipschitz constants (L0, L1, L2) for a-priori classification.

    L = 2 ell^2 ||Chat|| ||R R^T||^2 bounds the Frobenius norm of the Hessian
    on the box; the leading factor 2 is a conservative safety factor, dropped
    with ``conservative=False``.  Returns (sqrt(m0) L, sqrt(m - m0) L,
    sqrt(2 m0) L).
    """
    if m0 > obj.m:
        raise ValueError("m0 exceeds the number of sensors")
    if obj.ell == 0:
        return (0.0, 0.0, 0.0)
    chat_norm = float(np.linalg.eigvalsh(obj.Chat).max())
    rrt = obj.R @ obj.R.T
    rrt_norm = float(np.linalg.eigvalsh(0.5 * (rrt + rrt.T)).max())
    factor = 2.0 if conservative else 1.0
    lcon = factor * obj.ell**2 * chat_norm * rrt_norm**2
    return (float(np.sqrt(m0) * lcon),
            float(np.sqrt(obj.m - m0) * lcon),
            float(np.sqrt(2 * m0) * lcon))
