"""Frozen thin QR factorisations of the preconditioned adjoint operator.

The whole design machinery runs off a single factorisation F^T = Q R with
column-orthonormal Q, computed once (it does not depend on the design) and
reused for every objective, gradient and Hessian evaluation.  Both an exact
dense path and a matrix-free randomised subspace-iteration path are
provided, plus the block assembly that merges per-observation factors.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .model import LinearMap, dense_map


@dataclass
class QRModel:
    """Thin QR factorisation F^T ~ Q R with Q column-orthonormal."""

    Q: np.ndarray  # (n, ell)
    R: np.ndarray  # (ell, m * m_obs)
    ell: int
    residual_estimate: float
    m: int
    m_obs: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.Q.shape[1] != self.ell or self.R.shape[0] != self.ell:
            raise ValueError("inconsistent rank in QR factors")
        if self.R.shape[1] != self.m * self.m_obs:
            raise ValueError("R columns must equal m * m_obs")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def orthonormality_defect(self) -> float:
        if self.ell == 0:
            return 0.0
        g = self.Q.T @ self.Q
        return float(np.abs(g - np.eye(self.ell)).max())

    def reconstruct(self) -> np.ndarray:
        return self.Q @ self.R


def _as_operator(a) -> LinearMap:
    return a if isinstance(a, LinearMap) else dense_map(a)


def randomized_qr(op, ell: int, q: int = 2, rng_seed: int = 0,
                  drop_tol: float | None = 1e-6,
                  m: int | None = None, m_obs: int = 1) -> QRModel:
    """Thin QR of an operator by randomised subspace iteration.

    Draws a Gaussian test matrix, runs ``q`` rounds of adjoint/forward
    re-orthonormalisation, projects, takes a rank-``ell`` SVD and collapses
    it back into QR form.  Singular values below ``drop_tol`` times the
    largest are discarded when ``drop_tol`` is given.
    """
    op = _as_operator(op)
    n, cols = op.n_out, op.n_in
    if ell < 1:
        raise ValueError("target rank ell must be at least 1")
    if ell > min(n, cols):
        raise ValueError(
            f"target rank {ell} exceeds min dimension {min(n, cols)}")
    if q < 0:
        raise ValueError("subspace iteration count q must be non-negative")
    rng = np.random.default_rng(rng_seed)

    omega = rng.standard_normal((cols, ell))
    b0 = np.atleast_2d(op.apply(omega))
    q_cur, _ = np.linalg.qr(b0)
    for _ in range(q):
        bt = np.atleast_2d(op.apply_adjoint(q_cur))
        qt, _ = np.linalg.qr(bt)
        bj = np.atleast_2d(op.apply(qt))
        q_cur, _ = np.linalg.qr(bj)

    b = np.atleast_2d(op.apply_adjoint(q_cur)).T  # (ell, cols)
    u, s, vt = np.linalg.svd(b, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        warnings.warn("operator is numerically zero; returning empty model")
        return QRModel(np.zeros((n, 0)), np.zeros((0, cols)), 0, 0.0,
                       m if m is not None else cols // m_obs, m_obs,
                       meta={"seed": rng_seed, "q": q, "drop_tol": drop_tol})
    keep = s.size
    if drop_tol is not None:
        keep = int(np.count_nonzero(s > drop_tol * s[0]))
    u, s, vt = u[:, :keep], s[:keep], vt[:keep]

    r_tilde = s[:, None] * vt
    q_tilde, r_final = np.linalg.qr(r_tilde)
    q_final = q_cur @ (u @ q_tilde)

    resid = _probe_residual(op, q_final, r_final, rng)
    return QRModel(q_final, r_final, keep, resid,
                   m if m is not None else cols // m_obs, m_obs,
                   meta={"seed": rng_seed, "q": q, "drop_tol": drop_tol})


def _probe_residual(op, q_mat, r_mat, rng, probes: int = 8) -> float:
    x = rng.standard_normal((op.n_in, probes))
    ax = np.atleast_2d(op.apply(x))
    diff = ax - q_mat @ (r_mat @ x)
    denom = np.linalg.norm(ax)
    return float(np.linalg.norm(diff) / denom) if denom > 0 else 0.0


def exact_qr(ft_dense, rank_tol: float = 1e-12,
             m: int | None = None, m_obs: int = 1) -> QRModel:
    """Full-accuracy thin QR of a dense matrix via column pivoting.

    Rank is detected from the pivoted triangular factor at ``rank_tol``
    relative tolerance; the returned R is un-permuted, so it reproduces the
    input columns in their original order (and is triangular only up to that
    permutation).
    """
    a = np.asarray(ft_dense, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, cols = a.shape
    q_mat, r_piv, piv = sla.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_piv))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(diag > rank_tol * diag[0]))
    q_mat = q_mat[:, :rank]
    r_mat = np.zeros((rank, cols))
    r_mat[:, piv] = r_piv[:rank]
    norm_a = np.linalg.norm(a)
    resid = (float(np.linalg.norm(a - q_mat @ r_mat) / norm_a)
             if norm_a > 0 else 0.0)
    return QRModel(q_mat, r_mat, rank, resid,
                   m if m is not None else cols // m_obs, m_obs,
                   meta={"rank_tol": rank_tol})


def block_concat(models) -> QRModel:
    """Merge per-observation QR factors into a single recompressed model.

    Stacks [Q_1 ... Q_K] against the block-diagonal of the R_k and
    recompresses the stacked orthonormal factor with an exact QR so the
    result is again column-orthonormal with minimal rank.
    """
    models = list(models)
    if not models:
        raise ValueError("need at least one block")
    n = models[0].n
    if any(mdl.n != n for mdl in models):
        raise ValueError("all blocks must share the discretisation dimension")
    q_stack = np.hstack([mdl.Q for mdl in models])
    comp = exact_qr(q_stack)
    pieces = []
    offset = 0
    for mdl in models:
        pieces.append(comp.R[:, offset:offset + mdl.ell] @ mdl.R)
        offset += mdl.ell
    r_new = (np.hstack(pieces) if pieces
             else np.zeros((comp.ell, 0)))
    resid = max([mdl.residual_estimate for mdl in models]
                + [comp.residual_estimate])
    ms = {mdl.m for mdl in models}
    if len(ms) == 1:
        m = ms.pop()
        m_obs = sum(mdl.m_obs for mdl in models)
    else:
        m, m_obs = r_new.shape[1], 1
    if m * m_obs != r_new.shape[1]:
        m, m_obs = r_new.shape[1], 1
    return QRModel(comp.Q, r_new, comp.ell, resid, m, m_obs,
                   meta={"blocks": len(models)})


# ---------------------------------------------------------------------------
# Serialisation: CSV matrices plus a JSON header
# ---------------------------------------------------------------------------


def save_qr(qrm: QRModel, directory, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "Q.csv", np.atleast_2d(qrm.Q),
               delimiter=",", fmt="%.17g")
    np.savetxt(directory / "R.csv", np.atleast_2d(qrm.R),
               delimiter=",", fmt="%.17g")
    header = {
        "n": qrm.n, "m": qrm.m, "m_obs": qrm.m_obs, "ell": qrm.ell,
        "residual_estimate": qrm.residual_estimate,
        "seed": qrm.meta.get("seed"), "q": qrm.meta.get("q"),
    }
    if extra:
        header.update(extra)
    (directory / "qr.json").write_text(json.dumps(header, indent=2,
                                                  sort_keys=True))


def load_qr(directory) -> QRModel:
    directory = Path(directory)
    header = json.loads((directory / "qr.json").read_text())
    ell = int(header["ell"])
    n = int(header["n"])
    m, m_obs = int(header["m"]), int(header["m_obs"])
    if ell == 0:
        q_mat = np.zeros((n, 0))
        r_mat = np.zeros((0, m * m_obs))
    else:
        q_mat = np.loadtxt(directory / "Q.csv", delimiter=",", ndmin=2)
        r_mat = np.loadtxt(directory / "R.csv", delimiter=",", ndmin=2)
    return QRModel(q_mat, r_mat, ell, float(header["residual_estimate"]),
                   m, m_obs, meta={"seed": header.get("seed"),
                                   "q": header.get("q")})
