"""Linear forward models for sensor placement studies.

Provides a desk-scale frequency-domain Helmholtz source model on the unit
square (5-point finite differences, absorbing impedance boundary), synthetic
dense operators, a bilaplacian-type Gaussian prior, diagonal observation
noise, and the assembly of the noise-whitened, prior-preconditioned forward
operator that the low-rank design machinery consumes.

Conventions
-----------
* Operators act on 1-D vectors or on 2-D arrays column by column.
* ``LinearMap.apply_adjoint`` is the exact transpose of ``apply`` in the
  plain Euclidean inner product.  All mass weighting is explicit in the
  compositions below, never hidden inside an adjoint.
* Grid nodes are indexed row-major; node (i, j) sits at (x, y) = (j*h, i*h).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


def _dscale(d, x):
    """Multiply rows of ``x`` by the diagonal ``d`` (vector or column block)."""
    x = np.asarray(x)
    return d[:, None] * x if x.ndim == 2 else d * x


@dataclass(frozen=True)
class LinearMap:
    """Matrix-free linear operator with an exact Euclidean transpose."""

    n_in: int
    n_out: int
    apply: Callable[[np.ndarray], np.ndarray]
    apply_adjoint: Callable[[np.ndarray], np.ndarray]


def dense_map(a) -> LinearMap:
    """Wrap a dense matrix as a LinearMap."""
    a = np.asarray(a, dtype=float)
    return LinearMap(a.shape[1], a.shape[0], lambda x: a @ x, lambda y: a.T @ y)


def zero_map(n_in: int, n_out: int) -> LinearMap:
    def fwd(x):
        x = np.asarray(x)
        shape = (n_out,) if x.ndim == 1 else (n_out, x.shape[1])
        return np.zeros(shape)

    def adj(y):
        y = np.asarray(y)
        shape = (n_in,) if y.ndim == 1 else (n_in, y.shape[1])
        return np.zeros(shape)

    return LinearMap(n_in, n_out, fwd, adj)


def to_dense(op: LinearMap) -> np.ndarray:
    """Materialise an operator column by column.  Desk scale only."""
    return np.asarray(op.apply(np.eye(op.n_in)))


def adjoint_mismatch(op: LinearMap, rng=None, trials: int = 20) -> float:
    """Largest relative defect of <Ax, y> = <x, A^T y> over random pairs."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.n_in)
        y = rng.standard_normal(op.n_out)
        ax = op.apply(x)
        aty = op.apply_adjoint(y)
        scale = (
            np.linalg.norm(ax) * np.linalg.norm(y)
            + np.linalg.norm(x) * np.linalg.norm(aty)
            + 1e-300
        )
        worst = max(worst, abs(float(ax @ y) - float(x @ aty)) / scale)
    return worst


def linearity_mismatch(op: LinearMap, rng=None, trials: int = 10) -> float:
    """Relative defect of apply(a*x + b*z) = a*apply(x) + b*apply(z)."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.n_in)
        z = rng.standard_normal(op.n_in)
        a, b = rng.standard_normal(2)
        lhs = op.apply(a * x + b * z)
        rhs = a * op.apply(x) + b * op.apply(z)
        scale = np.linalg.norm(rhs) + 1e-300
        worst = max(worst, np.linalg.norm(lhs - rhs) / scale)
    return worst


# ---------------------------------------------------------------------------
# Helmholtz finite-difference model
# ---------------------------------------------------------------------------


def helmholtz_system(n_grid: int, k: float, h: float | None = None,
                     boundary_sign: float = 1.0):
    """Assemble the complex-symmetric 2-D Helmholtz system -Lap(u) - k^2 u.

    The impedance condition du/dn = i*k*u on the outer square boundary is
    discretised to second order by eliminating the ghost node of a central
    normal difference, which leaves a one-sided boundary stencil.  Every row
    is scaled by 1, 1/2 or 1/4 (interior, edge, corner) so the matrix stays
    complex symmetric and a single LU factorisation serves both forward and
    adjoint solves.  ``boundary_sign=-1`` assembles the conjugated-boundary
    operator instead.

    Returns ``(A, s)`` with ``A`` sparse CSC and ``s`` the row scaling that
    must also be applied to right-hand sides.
    """
    n = n_grid
    if h is None:
        h = 1.0 / (n - 1)
    idx = np.arange(n * n).reshape(n, n)
    ii, jj = np.divmod(np.arange(n * n), n)
    border = (np.isin(ii, (0, n - 1)).astype(int)
              + np.isin(jj, (0, n - 1)).astype(int))
    s = 0.5 ** border
    inv_h2 = 1.0 / h**2

    rows = [np.arange(n * n)]
    cols = [np.arange(n * n)]
    vals = [s * (4.0 * inv_h2 - k * k) + 0j]

    for di, dj in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ni, nj = ii + di, jj + dj
        inside = (ni >= 0) & (ni < n) & (nj >= 0) & (nj < n)
        p = np.arange(n * n)
        q_in = idx[ni[inside], nj[inside]]
        rows.append(p[inside])
        cols.append(q_in)
        vals.append(-s[inside] * inv_h2 + 0j)
        # ghost neighbour: mirror through the node, plus impedance shift
        out = ~inside
        if np.any(out):
            mi, mj = ii[out] - di, jj[out] - dj
            q_mirror = idx[mi, mj]
            rows.append(p[out])
            cols.append(q_mirror)
            vals.append(-s[out] * inv_h2 + 0j)
            rows.append(p[out])
            cols.append(p[out])
            vals.append(-2j * boundary_sign * k / h * s[out])

    a = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
        dtype=complex,
    ).tocsc()
    return a, s


class HelmholtzModel:
    """Helmholtz source-to-wavefield model on the unit square.

    Sources live on the grid nodes inside a centred disk, sensors are grid
    nodes snapped from requested ring coordinates in the measurement region.
    One sparse LU factorisation per wavenumber is built up front and shared
    read-only afterwards.
    """

    def __init__(self, n_grid: int, wavenumbers: Sequence[float],
                 source_radius: float = 0.2,
                 sensor_rings: Sequence[tuple[float, int]] = ((0.33, 24), (0.41, 24)),
                 center: tuple[float, float] = (0.5, 0.5)):
        if n_grid < 5:
            raise ValueError("n_grid must be at least 5")
        self.n_grid = int(n_grid)
        self.h = 1.0 / (self.n_grid - 1)
        self.wavenumbers = tuple(float(k) for k in wavenumbers)
        if len(set(self.wavenumbers)) != len(self.wavenumbers):
            raise ValueError("wavenumbers must be distinct")
        self.center = tuple(center)
        self.source_radius = float(source_radius)

        n = self.n_grid
        ii, jj = np.divmod(np.arange(n * n), n)
        self.xy = np.column_stack([jj * self.h, ii * self.h])
        r2 = ((self.xy[:, 0] - center[0]) ** 2
              + (self.xy[:, 1] - center[1]) ** 2)
        self.source_idx = np.flatnonzero(r2 <= source_radius**2)
        if self.source_idx.size == 0:
            raise ValueError("source disk contains no grid nodes")

        targets = []
        for radius, count in sensor_rings:
            theta = 2.0 * np.pi * np.arange(count) / count
            for t in theta:
                targets.append((center[0] + radius * np.cos(t),
                                center[1] + radius * np.sin(t)))
        self.sensor_targets = np.asarray(targets)
        cols = np.clip(np.rint(self.sensor_targets[:, 0] / self.h), 0, n - 1)
        rows = np.clip(np.rint(self.sensor_targets[:, 1] / self.h), 0, n - 1)
        self.sensor_idx = (rows * n + cols).astype(int)
        if len(set(self.sensor_idx.tolist())) != len(self.sensor_idx):
            raise ValueError(
                "sensor rings snap to duplicate grid nodes; "
                "reduce counts or change radii")
        if np.intersect1d(self.sensor_idx, self.source_idx).size:
            raise ValueError("sensor nodes intersect the source subdomain")
        on_border = (np.isin(rows, (0, n - 1)) | np.isin(cols, (0, n - 1)))
        if np.any(on_border):
            raise ValueError("sensor nodes must be strictly interior")
        self.sensor_xy = self.xy[self.sensor_idx]

        self._lu = {}
        for k in self.wavenumbers:
            a, s = helmholtz_system(self.n_grid, k, self.h)
            try:
                self._lu[k] = splu(a)
            except RuntimeError as exc:  # pragma: no cover - defensive
                raise RuntimeError(
                    f"Helmholtz factorisation failed for wavenumber k={k}: {exc}"
                ) from exc
        self._s = s

    # dimensions
    @property
    def n(self) -> int:
        return int(self.source_idx.size)

    @property
    def m(self) -> int:
        return int(self.sensor_idx.size)

    @property
    def m_obs(self) -> int:
        return 2 * len(self.wavenumbers)


def helmholtz_solve(model: HelmholtzModel, k: float, f) -> np.ndarray:
    """Solve -Lap(u) - k^2 u = f (extended by zero) on the full grid.

    ``f`` holds real values on the source nodes; the returned field is
    complex on all grid nodes.
    """
    if k not in model._lu:
        raise KeyError(f"wavenumber k={k} not configured for this model")
    f = np.asarray(f, dtype=float)
    shape = ((model.n_grid**2,) if f.ndim == 1
             else (model.n_grid**2, f.shape[1]))
    b = np.zeros(shape, dtype=complex)
    b[model.source_idx] = f
    b = _dscale(model._s, b)
    return model._lu[k].solve(b)


def observe(model: HelmholtzModel, u) -> np.ndarray:
    """Pointwise sensor readings (values at the snapped sensor nodes)."""
    return np.asarray(u)[model.sensor_idx]


def helmholtz_adjoint_solve(model: HelmholtzModel, k: float, v) -> np.ndarray:
    """Adjoint solve against sensor data ``v`` (complex, one per sensor).

    Solves the conjugated-boundary problem with the sensor deltas as source
    and returns the real part restricted to the source nodes, realising the
    exact transpose of observe(solve(.)) split into real/imaginary parts.
    The conjugate system is solved by conjugating the forward factorisation
    applied to conjugated data.
    """
    if k not in model._lu:
        raise KeyError(f"wavenumber k={k} not configured for this model")
    v = np.asarray(v, dtype=complex)
    shape = ((model.n_grid**2,) if v.ndim == 1
             else (model.n_grid**2, v.shape[1]))
    b = np.zeros(shape, dtype=complex)
    b[model.sensor_idx] = np.conj(v)
    b = _dscale(model._s, b)
    hfield = np.conj(model._lu[k].solve(b))
    return np.real(hfield)[model.source_idx]


def build_forward_stack(model: HelmholtzModel) -> LinearMap:
    """Block map [Re o S_k1; Im o S_k1; Re o S_k2; ...] over all wavenumbers.

    Output dimension is m * m_obs with m_obs = 2 * len(wavenumbers); block
    ordering is wavenumber-major with the real part before the imaginary
    part.
    """
    m = model.m
    n_out = m * model.m_obs

    def fwd(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        cols = 1 if single else x.shape[1]
        out = np.empty((n_out, cols))
        for j, k in enumerate(model.wavenumbers):
            u = helmholtz_solve(model, k, x if not single else x[:, None])
            obs = observe(model, u)
            out[2 * j * m:(2 * j + 1) * m] = obs.real
            out[(2 * j + 1) * m:(2 * j + 2) * m] = obs.imag
        return out[:, 0] if single else out

    def adj(g):
        g = np.asarray(g, dtype=float)
        single = g.ndim == 1
        gg = g[:, None] if single else g
        out = np.zeros((model.n, gg.shape[1]))
        for j, k in enumerate(model.wavenumbers):
            v = (gg[2 * j * m:(2 * j + 1) * m]
                 + 1j * gg[(2 * j + 1) * m:(2 * j + 2) * m])
            out += helmholtz_adjoint_solve(model, k, v)
        return out[:, 0] if single else out

    return LinearMap(model.n, n_out, fwd, adj)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


class GridPrior:
    """Bilaplacian-type Gaussian prior on a masked subset of grid nodes.

    The covariance is C0 = (K^{-1} M)^2 with K = alpha*L + M + beta*h*B,
    where L is the grid-graph Laplacian on the mask (natural boundary), M is
    the lumped diagonal mass h^2*I and B weights mask-boundary nodes by their
    number of missing neighbours.  The Robin-type coefficient beta defaults
    to sqrt(alpha)/1.42, which flattens the prior pointwise variance towards
    the mask boundary.
    """

    def __init__(self, mask_idx, n_grid: int, h: float,
                 alpha: float = 0.01125, beta: float | None = None):
        mask_idx = np.asarray(mask_idx, dtype=int)
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)
        self.beta = float(beta) if beta is not None else np.sqrt(alpha) / 1.42
        self.n = int(mask_idx.size)
        self.mass_diag = np.full(self.n, h * h)

        pos = {int(p): i for i, p in enumerate(mask_idx)}
        ii, jj = np.divmod(mask_idx, n_grid)
        rows, cols, vals = [], [], []
        degree = np.zeros(self.n)
        for di, dj in ((0, 1), (1, 0)):
            ni, nj = ii + di, jj + dj
            ok = (ni < n_grid) & (nj < n_grid)
            for a, (pi, pj) in enumerate(zip(ni, nj)):
                if not ok[a]:
                    continue
                q = pos.get(int(pi * n_grid + pj))
                if q is None:
                    continue
                rows += [a, q, a, q]
                cols += [q, a, a, q]
                vals += [-1.0, -1.0, 1.0, 1.0]
                degree[a] += 1
                degree[q] += 1
        lap = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        boundary = sp.diags(h * (4.0 - degree))
        k_mat = (self.alpha * lap.tocsr() + sp.diags(self.mass_diag)
                 + self.beta * boundary).tocsc()
        self._k = k_mat
        self._k_lu = splu(k_mat)

        # exact trace of C0 = (K^{-1} M)^2 via tr(X^2) = sum_ij X_ij X_ji
        x = self._k_lu.solve(np.diag(self.mass_diag))
        self.trace_C0 = float(np.sum(x * x.T))

    def stiffness_solve(self, x):
        return self._k_lu.solve(np.asarray(x, dtype=float))

    def stiffness_apply(self, x):
        return self._k @ np.asarray(x, dtype=float)

    def sqrt_apply(self, x):
        """Action of C0^{1/2} = K^{-1} M."""
        return self.stiffness_solve(_dscale(self.mass_diag, x))

    def sqrt_apply_t(self, x):
        """Action of (C0^{1/2})^T = M K^{-1}."""
        return _dscale(self.mass_diag, self.stiffness_solve(x))

    def c0_apply(self, x):
        return self.sqrt_apply(self.sqrt_apply(x))


class DensePrior:
    """Dense synthetic prior with uniform lumped mass.

    ``c0`` must be symmetric positive definite; the square root is the
    spectral one, which coincides with K^{-1} M for K = mass * C0^{-1/2}.
    """

    def __init__(self, c0, mass: float = 1.0):
        c0 = np.asarray(c0, dtype=float)
        if c0.ndim != 2 or c0.shape[0] != c0.shape[1]:
            raise ValueError("c0 must be square")
        if not np.allclose(c0, c0.T, rtol=0, atol=1e-12 * np.abs(c0).max()):
            raise ValueError("c0 must be symmetric")
        lam, vec = np.linalg.eigh(c0)
        if lam.min() <= 0:
            raise ValueError("c0 must be positive definite")
        if mass <= 0:
            raise ValueError("mass must be positive")
        self.n = c0.shape[0]
        self.c0 = c0
        self.mass = float(mass)
        self.mass_diag = np.full(self.n, self.mass)
        self.alpha = None
        self.beta = None
        self._sqrt = (vec * np.sqrt(lam)) @ vec.T
        self._isqrt = (vec * (1.0 / np.sqrt(lam))) @ vec.T
        self.trace_C0 = float(lam.sum())

    def stiffness_solve(self, x):
        return self._sqrt @ np.asarray(x, dtype=float) / self.mass

    def stiffness_apply(self, x):
        return self.mass * (self._isqrt @ np.asarray(x, dtype=float))

    def sqrt_apply(self, x):
        return self._sqrt @ np.asarray(x, dtype=float)

    sqrt_apply_t = sqrt_apply

    def c0_apply(self, x):
        return self.c0 @ np.asarray(x, dtype=float)


def identity_prior(n: int) -> DensePrior:
    return DensePrior(np.eye(n), mass=1.0)


# ---------------------------------------------------------------------------
# Noise and the preconditioned operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagonalNoise:
    """Per-channel noise standard deviations for all m * m_obs observables."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if np.any(sigma <= 0):
            raise ValueError("noise standard deviations must be positive")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def uniform(cls, sigma: float, size: int) -> "DiagonalNoise":
        return cls(np.full(size, float(sigma)))


def preconditioned_operator(fmap: LinearMap, prior, noise: DiagonalNoise) -> LinearMap:
    """Compose Gamma^{-1/2} F C0^{1/2} M^{-1/2} and its transpose as actions.

    No matrix is materialised; the adjoint is the exact transpose
    M^{-1/2} (C0^{1/2})^T F^T Gamma^{-1/2}.
    """
    if fmap.n_in != prior.n:
        raise ValueError(
            f"forward map expects {fmap.n_in} dofs, prior has {prior.n}")
    if fmap.n_out != noise.sigma.size:
        raise ValueError(
            f"forward map returns {fmap.n_out} observables, "
            f"noise has {noise.sigma.size}")
    inv_sqrt_mass = 1.0 / np.sqrt(prior.mass_diag)
    inv_sigma = 1.0 / noise.sigma

    def fwd(x):
        z = prior.sqrt_apply(_dscale(inv_sqrt_mass, np.asarray(x, dtype=float)))
        return _dscale(inv_sigma, fmap.apply(z))

    def adj(g):
        t = fmap.apply_adjoint(_dscale(inv_sigma, np.asarray(g, dtype=float)))
        return _dscale(inv_sqrt_mass, prior.sqrt_apply_t(t))

    return LinearMap(fmap.n_in, fmap.n_out, fwd, adj)


def calibrate_noise(fmap: LinearMap, n_samples: int = 1000,
                    fraction: float = 0.01, rng_seed: int = 0,
                    prior=None) -> float:
    """Noise variance from data spread over standard Gaussian inputs.

    Returns sigma^2 = (fraction^2 / n_samples) * sum_i sum_k |(F s_i)_k|^2
    with s_i i.i.d. standard normal.  When ``prior`` is given the samples are
    pushed through C0^{1/2} first, i.e. the data are drawn from the prior
    covariance instead of unit covariance.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if fraction <= 0:
        raise ValueError("fraction must be positive")
    rng = np.random.default_rng(rng_seed)
    total = 0.0
    chunk = 256
    done = 0
    while done < n_samples:
        take = min(chunk, n_samples - done)
        s = rng.standard_normal((fmap.n_in, take))
        if prior is not None:
            s = prior.sqrt_apply(s)
        data = fmap.apply(s)
        total += float(np.sum(np.abs(data) ** 2))
        done += take
    return fraction**2 / n_samples * total


# ---------------------------------------------------------------------------
# Synthetic dense bundles
# ---------------------------------------------------------------------------


@dataclass
class SyntheticBundle:
    """Raw pieces plus the composed preconditioned operator, desk scale."""

    forward: LinearMap
    prior: DensePrior
    noise: DiagonalNoise
    precond: LinearMap
    fb: np.ndarray = field(repr=False)  # dense matrix of the preconditioned map


def synthetic_bundle(n: int, m: int, m_obs: int = 1, seed: int = 0,
                     noise_level: float = 1.0) -> SyntheticBundle:
    """Random dense forward map, well-conditioned prior and diagonal noise."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((m * m_obs, n)) / np.sqrt(n)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(0.5, 2.0, size=n)
    prior = DensePrior((q * lam) @ q.T, mass=float(rng.uniform(0.5, 2.0)))
    sigma = noise_level * rng.uniform(0.5, 1.5, size=m * m_obs)
    noise = DiagonalNoise(sigma)
    fmap = dense_map(raw)
    precond = preconditioned_operator(fmap, prior, noise)
    return SyntheticBundle(fmap, prior, noise, precond, to_dense(precond))
