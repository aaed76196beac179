"""Discretized index form and the Morse index theorem.

The index form of a Riemannian system on ``[a, t_end]``,

    I(v, w) = int <v', w'> + <R v, w>,

is discretized with continuous piecewise-linear vector fields vanishing at
both ends.  Unknowns are ordered node-major, so both the Gram matrix ``G``
of the ``H^1_0`` product and the form matrix ``K`` are banded with
half-bandwidth ``2n - 1``.  Eigenvalue counts of the pencil ``(K, G)``
come from Sylvester inertia: the number of generalized eigenvalues below
``-tau`` equals the number of negative eigenvalues of ``K + tau G``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import PreconditionError
from .linalg_core import DEFAULT_TOL, Tolerance
from .system import FundamentalSolution, SymplecticSystemSpec

__all__ = [
    "IndexFormDiscretization",
    "discretize",
    "index_of_form",
    "generalized_spectrum",
    "mesh_invariance",
    "index_curve",
    "representative",
    "image_map",
    "range_residual",
    "smooth_field",
]

_GAUSS = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))


@dataclass
class IndexFormDiscretization:
    n: int
    nodes: np.ndarray
    G_band: np.ndarray  # upper banded storage
    K_band: np.ndarray
    K_diag: np.ndarray = None  # (m-1, n, n) node blocks of K
    K_off: np.ndarray = None  # (m-2, n, n) blocks coupling node j to j+1
    G_diag: np.ndarray = None
    G_off: np.ndarray = None

    @property
    def m(self):
        return len(self.nodes) - 1

    @property
    def size(self):
        return self.n * (self.m - 1)

    @property
    def bandwidth(self):
        return self.G_band.shape[0] - 1

    def _dense(self, band):
        N, u = self.size, self.bandwidth
        M = np.zeros((N, N))
        for d in range(u + 1):
            diag = band[u - d, d:]
            idx = np.arange(N - d)
            M[idx, idx + d] = diag
            M[idx + d, idx] = diag
        return M

    @property
    def G(self):
        return self._dense(self.G_band)

    @property
    def K(self):
        return self._dense(self.K_band)

    def h_max(self):
        return float(np.max(np.diff(self.nodes)))


def _nodes(a, t_end, m, jitter=0.0, seed=0):
    nodes = np.linspace(a, t_end, m + 1)
    if jitter:
        rng = np.random.default_rng(seed)
        h = (t_end - a) / m
        nodes[1:-1] += rng.uniform(-jitter, jitter, m - 1) * h
    return nodes


def discretize(Xr: SymplecticSystemSpec, t_end, m, jitter=0.0, seed=0) -> IndexFormDiscretization:
    """Matrices of ``<v', w'>`` (exact) and ``I`` (two-point Gauss for ``R``).

    ``jitter`` moves interior nodes by up to that fraction of the uniform
    step, which gives the perturbed meshes used for invariance checks.
    """
    if not Xr.riemannian:
        raise PreconditionError("discretize needs a Riemannian system")
    if not Xr.a < t_end <= Xr.b + 1e-12:
        raise PreconditionError("t_end must lie in (a, b]")
    if m < 2:
        raise PreconditionError("need at least two elements")
    n = Xr.n
    nodes = _nodes(Xr.a, float(t_end), int(m), jitter, seed)
    L = np.diff(nodes)
    pts = nodes[:-1, None] + L[:, None] * _GAUSS[None, :]
    R = Xr.C(np.clip(pts.ravel(), Xr.a, Xr.b)).reshape(len(L), 2, n, n)
    R = 0.5 * (R + np.swapaxes(R, -1, -2))
    phiL, phiR = 1.0 - _GAUSS, _GAUSS
    wq = 0.5 * L[:, None, None]
    # element curvature blocks: (left,left), (left,right), (right,right)
    Mll = wq * np.einsum("q,eqij->eij", phiL * phiL, R)
    Mlr = wq * np.einsum("q,eqij->eij", phiL * phiR, R)
    Mrr = wq * np.einsum("q,eqij->eij", phiR * phiR, R)

    N = n * (m - 1)
    u = 2 * n - 1
    I = np.eye(n)
    k = (1.0 / L)[:, None, None]
    rows, cols, gv, kv = [], [], [], []
    e = np.arange(m)
    # (local i, local j, stiffness sign, curvature block) per element
    for i_loc, j_loc, s, M in ((0, 0, 1.0, Mll), (1, 1, 1.0, Mrr), (0, 1, -1.0, Mlr), (1, 0, -1.0, np.swapaxes(Mlr, -1, -2))):
        ni, nj = e - 1 + i_loc, e - 1 + j_loc
        ok = (ni >= 0) & (nj >= 0) & (ni <= m - 2) & (nj <= m - 2)
        if not np.any(ok):
            continue
        p, q = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        rows.append((ni[ok, None, None] * n + p).ravel())
        cols.append((nj[ok, None, None] * n + q).ravel())
        gblock = s * k[ok] * I
        gv.append(gblock.ravel())
        kv.append((gblock + M[ok]).ravel())
    G_band = np.zeros((u + 1, N))
    K_band = np.zeros((u + 1, N))
    if rows:
        r, c = np.concatenate(rows), np.concatenate(cols)
        G = scipy.sparse.coo_matrix((np.concatenate(gv), (r, c)), shape=(N, N)).tocsr()
        K = scipy.sparse.coo_matrix((np.concatenate(kv), (r, c)), shape=(N, N)).tocsr()
        for d in range(min(u, N - 1) + 1):
            G_band[u - d, d:] = G.diagonal(d)
            K_band[u - d, d:] = K.diagonal(d)
    # the same matrices as block tridiagonal factors
    Gd = (k[:-1] + k[1:]) * I
    Kd = Gd + Mrr[:-1] + Mll[1:]
    Go = -k[1:-1] * I
    Ko = Go + Mlr[1:-1]
    return IndexFormDiscretization(n, nodes, G_band, K_band, Kd, Ko, Gd, Go)


def _count_negative(band):
    """Number of negative eigenvalues of a symmetric banded matrix."""
    try:
        w = scipy.linalg.eig_banded(band, lower=False, eigvals_only=True, select="v",
                                    select_range=(-np.inf, 0.0))
    except np.linalg.LinAlgError:
        w = scipy.linalg.eig_banded(band, lower=False, eigvals_only=True)
        w = w[w < 0]
    return int(np.count_nonzero(w < 0))


def _block_inertia_negative(D, O):
    """Negative eigenvalue count of a symmetric block-tridiagonal matrix.

    Block ``LDL^T`` without pivoting: by Haynsworth additivity the count is
    the sum over the Schur-complement pivots ``S_j = D_j - O_{j-1}^T S_{j-1}^{-1} O_{j-1}``.
    """
    count = 0
    S = D[0]
    for j in range(len(D)):
        if j > 0:
            S = D[j] - O[j - 1].T @ np.linalg.solve(S, O[j - 1])
        S = 0.5 * (S + S.T)
        count += int(np.count_nonzero(np.linalg.eigvalsh(S) < 0))
    return count


def default_null_tol(d: IndexFormDiscretization, tol: Tolerance = DEFAULT_TOL):
    """Threshold for near-zero generalized eigenvalues: the squared mesh size,
    which bounds the discretization error of the pencil eigenvalues."""
    return max(tol.kernel_tol, d.h_max() ** 2)


def index_of_form(d: IndexFormDiscretization, tol: Tolerance = DEFAULT_TOL, null_tol=None,
                  method="block"):
    """``(index, nullity)`` of the pencil ``(K, G)``.

    Index counts generalized eigenvalues below ``-null_tol``; nullity
    counts those of magnitude at most ``null_tol``.  ``method="block"``
    counts inertia with a block ``LDL^T`` sweep; ``method="banded"`` uses
    the banded symmetric eigensolver instead.
    """
    if d.size == 0:
        return 0, 0
    tau = default_null_tol(d, tol) if null_tol is None else null_tol
    if method == "block":
        below = _block_inertia_negative(d.K_diag + tau * d.G_diag, d.K_off + tau * d.G_off)
        upto = _block_inertia_negative(d.K_diag - tau * d.G_diag, d.K_off - tau * d.G_off)
    elif method == "banded":
        below = _count_negative(d.K_band + tau * d.G_band)
        upto = _count_negative(d.K_band - tau * d.G_band)
    else:
        raise PreconditionError(f"unknown method {method!r}")
    return below, upto - below


def generalized_spectrum(d: IndexFormDiscretization):
    """All generalized eigenvalues of ``(K, G)`` (dense; small problems only)."""
    return scipy.linalg.eigh(d.K, d.G, eigvals_only=True)


def mesh_invariance(Xr, t_end, m, tol: Tolerance = DEFAULT_TOL, jitter=0.25, seed=0):
    """Index on the uniform mesh and on a jittered mesh with the same element count."""
    i0 = index_of_form(discretize(Xr, t_end, m), tol)
    i1 = index_of_form(discretize(Xr, t_end, m, jitter=jitter, seed=seed), tol)
    return i0, i1


@dataclass
class IndexProfile:
    t: np.ndarray
    index: np.ndarray
    nullity: np.ndarray

    @property
    def nondecreasing(self):
        return bool(np.all(np.diff(self.index) >= 0))

    def jumps(self):
        """``(t_left, t_right, size)`` for every grid cell where the index increases."""
        out = []
        for i in np.nonzero(np.diff(self.index))[0]:
            out.append((float(self.t[i]), float(self.t[i + 1]), int(self.index[i + 1] - self.index[i])))
        return out


def index_curve(Xr, density, t_values, tol: Tolerance = DEFAULT_TOL) -> IndexProfile:
    """Index of the form on ``[a, t]`` for each ``t``, with ``density`` elements per unit length."""
    t_values = np.asarray(t_values, dtype=np.float64)
    idx, nul = [], []
    for t in t_values:
        m = max(2, int(np.ceil(density * (t - Xr.a))))
        i, z = index_of_form(discretize(Xr, t, m), tol)
        idx.append(i)
        nul.append(z)
    return IndexProfile(t_values, np.array(idx), np.array(nul))


# -- image map ---------------------------------------------------------------


def smooth_field(n, a, b, rng, modes=5):
    """Random smooth field vanishing at ``a`` and ``b``: a short sine series."""
    coef = rng.standard_normal((modes, n)) / np.arange(1, modes + 1)[:, None] ** 2

    def v(t):
        s = (np.asarray(t, dtype=np.float64) - a) / (b - a)
        S = np.sin(np.pi * np.outer(s, np.arange(1, modes + 1)))
        return S @ coef

    return v


def representative(d: IndexFormDiscretization, v_nodes):
    """Nodal values of ``z = I v``: the ``H^1_0`` representative of ``I(v, .)``.

    ``v_nodes`` has shape ``(m + 1, n)`` with zero end rows; so does the result.
    """
    v_nodes = np.asarray(v_nodes, dtype=np.float64)
    x = v_nodes[1:-1].ravel()
    Kx = _band_matvec(d.K_band, x)
    z = scipy.linalg.solveh_banded(d.G_band, Kx, lower=False)
    out = np.zeros_like(v_nodes)
    out[1:-1] = z.reshape(-1, d.n)
    return out


def _band_matvec(band, x):
    u = band.shape[0] - 1
    N = len(x)
    y = band[u] * x
    for d in range(1, u + 1):
        diag = band[u - d, d:]
        y[:-d] += diag * x[d:]
        y[d:] += diag * x[:-d]
    return y


def image_map(Phi: FundamentalSolution, z_nodes):
    """``P1 Phi_b int_a^b Phi_t^{-1} (z'(t), 0) dt`` for a piecewise-linear ``z``.

    ``z_nodes`` holds values at the nodes of the fundamental-solution grid;
    ``z'`` is constant on each cell and the integrand is integrated with the
    trapezoidal rule.
    """
    z = np.asarray(z_nodes, dtype=np.float64)
    n = Phi.n
    if z.shape != (len(Phi.times), n):
        raise PreconditionError(f"z must have shape {(len(Phi.times), n)}, got {z.shape}")
    if np.max(np.abs(z[0])) > 0 or np.max(np.abs(z[-1])) > 0:
        raise PreconditionError("z must vanish at both ends")
    J = np.block([[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]])
    inv_cols = (-J @ np.swapaxes(Phi.Phi, -1, -2) @ J)[:, :, :n]  # Phi^{-1} restricted to H + 0
    dz = np.diff(z, axis=0) / np.diff(Phi.times)[:, None]
    h = np.diff(Phi.times)
    left = np.einsum("kij,kj->ki", inv_cols[:-1], dz)
    right = np.einsum("kij,kj->ki", inv_cols[1:], dz)
    integral = np.sum(0.5 * h[:, None] * (left + right), axis=0)
    return (Phi.Phi[-1] @ integral)[:n]


def range_residual(E, y, tol: Tolerance = DEFAULT_TOL):
    """Distance from ``y`` to ``range(E)``, with singular values at most
    ``kernel_tol * max(1, ||E||)`` treated as zero."""
    U, s, _ = np.linalg.svd(E)
    r = int(np.count_nonzero(s > tol.kernel_tol * max(1.0, s[0] if s.size else 0.0)))
    Ur = U[:, :r]
    return float(np.linalg.norm(y - Ur @ (Ur.T @ y)))
