"""Symplectic space ``V = H + H``, Lagrangian frames and the chart atlas.

Vectors of ``V`` are stacked ``(x, y)`` with ``J(x, y) = (-y, x)`` and
``omega(u, v) = <J u, v>``.  A Lagrangian is carried by an orthonormal
``2n x n`` frame; every observable computed here is invariant under a change
of frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import ChartDomainError, PreconditionError, SearchExhaustedError
from .linalg_core import DEFAULT_TOL, Tolerance, as_sym, orthonormalize

__all__ = [
    "SymplecticSpace",
    "Lagrangian",
    "SpElement",
    "complex_structure",
    "omega",
    "is_lagrangian",
    "chart",
    "chart_inverse",
    "chart_matrix",
    "transversality_gap",
    "pair_defect",
    "common_transversal",
    "frame_tangent",
    "is_symplectic",
    "symplectic_inverse",
    "assemble_sp",
    "decompose_sp",
]


@lru_cache(maxsize=64)
def _J(n):
    I = np.eye(n)
    Z = np.zeros((n, n))
    J = np.block([[Z, -I], [I, Z]])
    J.setflags(write=False)
    return J


def complex_structure(n: int) -> np.ndarray:
    """The ``2n x 2n`` matrix of ``J(x, y) = (-y, x)``."""
    if n < 1:
        raise PreconditionError("n must be positive")
    return _J(n)


@dataclass(frozen=True)
class SymplecticSpace:
    n: int

    @property
    def J(self):
        return complex_structure(self.n)

    @property
    def dim(self):
        return 2 * self.n


class Lagrangian:
    """A Lagrangian subspace carried by an orthonormal frame.

    The constructor orthonormalizes ``frame`` and checks isotropy; pass
    ``check=False`` inside hot loops where the frame is known to be good.
    """

    __slots__ = ("frame",)

    def __init__(self, frame, check=True, tol=1e-8):
        F = np.asarray(frame, dtype=np.float64)
        if F.ndim != 2 or F.shape[0] != 2 * F.shape[1]:
            raise PreconditionError(f"frame must be 2n x n, got {F.shape}")
        F = orthonormalize(F)
        if check:
            iso = np.max(np.abs(F.T @ _J(F.shape[1]) @ F))
            if iso > tol:
                raise PreconditionError(f"frame is not isotropic (defect {iso:.3e})")
        F.setflags(write=False)
        self.frame = F

    @property
    def n(self):
        return self.frame.shape[1]

    @property
    def space(self):
        return SymplecticSpace(self.n)

    @property
    def projector(self):
        return self.frame @ self.frame.T

    def image(self, M) -> "Lagrangian":
        """The Lagrangian ``M(L)`` for a symplectic matrix ``M``."""
        return Lagrangian(M @ self.frame, check=False)

    def rotate(self, theta) -> "Lagrangian":
        """Apply the symplectic rotation ``exp(theta J) = cos + sin J``."""
        J = _J(self.n)
        return Lagrangian(np.cos(theta) * self.frame + np.sin(theta) * (J @ self.frame), check=False)

    def perp(self) -> "Lagrangian":
        """``J(L)``, which is the orthogonal complement of ``L``."""
        return Lagrangian(_J(self.n) @ self.frame, check=False)

    @classmethod
    def vertical(cls, n):
        """``L0 = {0} + H``."""
        return cls(np.vstack([np.zeros((n, n)), np.eye(n)]), check=False)

    @classmethod
    def horizontal(cls, n):
        """``L1 = H + {0}``."""
        return cls(np.vstack([np.eye(n), np.zeros((n, n))]), check=False)

    @classmethod
    def graph(cls, S):
        """``{(S y, y)}`` for symmetric ``S``: the Lagrangian with chart value ``S``
        in the standard chart ``(L0, L1)``."""
        S = as_sym(S)
        return cls(np.vstack([S, np.eye(S.shape[0])]), check=False)

    def __repr__(self):
        return f"Lagrangian(n={self.n})"


@dataclass(frozen=True)
class SpElement:
    """Block form ``[[A, B], [C, -A^T]]`` of an element of sp(V)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def assemble(self):
        return assemble_sp(self.A, self.B, self.C)

    @classmethod
    def from_matrix(cls, X, tol=1e-12):
        return cls(*decompose_sp(X, tol))


def assemble_sp(A, B, C) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = as_sym(B)
    C = as_sym(C)
    return np.block([[A, B], [C, -A.T]])


def decompose_sp(X, tol=1e-12):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0] // 2
    J = _J(n)
    defect = np.max(np.abs(X.T @ J + J @ X))
    if defect > tol * (1.0 + np.max(np.abs(X))):
        raise PreconditionError(f"matrix is not in sp(V) (defect {defect:.3e})")
    A = X[:n, :n]
    B = X[:n, n:]
    C = X[n:, :n]
    return A.copy(), 0.5 * (B + B.T), 0.5 * (C + C.T)


def omega(u, v) -> float:
    """Symplectic form ``<J u, v>``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1 or u.size % 2:
        raise PreconditionError(f"vectors of equal even length expected, got {u.shape}, {v.shape}")
    n = u.size // 2
    # J u = (-u_y, u_x)
    return float(-u[n:] @ v[:n] + u[:n] @ v[n:])


def is_lagrangian(F, tol=1e-10) -> bool:
    """Whether the columns of ``F`` span a Lagrangian subspace."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != 2 * F.shape[1]:
        return False
    sv = scipy.linalg.svdvals(F)
    if sv[-1] <= 1e-12 * max(1.0, sv[0]):
        return False
    Q = orthonormalize(F)
    if np.max(np.abs(Q.T @ Q - np.eye(Q.shape[1]))) > 1e-12:
        return False
    return bool(np.max(np.abs(Q.T @ _J(Q.shape[1]) @ Q)) <= tol)


def transversality_gap(P, Q) -> float:
    """Smallest singular value of the stacked frame ``[P | Q]``.

    Zero exactly when ``P`` and ``Q`` intersect; at most 1.
    """
    return float(scipy.linalg.svdvals(np.hstack([P.frame, Q.frame]))[-1])


def _chart_coords(F0, F1, F):
    """Coordinates ``alpha, beta`` with ``F = F0 alpha + F1 beta``."""
    n = F0.shape[1]
    ab = np.linalg.solve(np.hstack([F0, F1]), F)
    return ab[:n], ab[n:]


def chart_matrix(F0, F1, F):
    """Raw chart value ``rho * beta * alpha^{-1}`` for frames, no checks.

    ``F`` may be any (not necessarily orthonormal) frame of the Lagrangian
    and may be a stack of frames with shape ``(..., 2n, n)``.
    """
    n = F0.shape[1]
    rho = F0.T @ _J(n) @ F1
    M = np.hstack([F0, F1])
    ab = np.linalg.solve(M, F) if F.ndim == 2 else np.linalg.solve(M[None], F)
    alpha, beta = ab[..., :n, :], ab[..., n:, :]
    # beta alpha^{-1} = (alpha^{-T} beta^T)^T
    bai = np.swapaxes(np.linalg.solve(np.swapaxes(alpha, -1, -2), np.swapaxes(beta, -1, -2)), -1, -2)
    S = rho @ bai
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def chart(L0: Lagrangian, L1: Lagrangian, L: Lagrangian, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Chart value of ``L`` in ``phi_{L0, L1}``, in ``L0``-frame coordinates.

    ``L`` is the graph of a map ``T: L0 -> L1``; the value is
    ``rho T`` with ``rho = P_{L0} J|_{L1}``.

    Raises
    ------
    ChartDomainError
        If ``L`` or ``L0`` is not transversal to ``L1`` at ``tol.gap_tol``.
    """
    g = transversality_gap(L0, L1)
    if g < tol.gap_tol:
        raise ChartDomainError("chart base L0 is not transversal to L1", g)
    g = transversality_gap(L, L1)
    if g < tol.gap_tol:
        raise ChartDomainError("Lagrangian is outside the chart domain O(L1)", g)
    return chart_matrix(L0.frame, L1.frame, L.frame)


def chart_inverse(L0: Lagrangian, L1: Lagrangian, S, tol: Tolerance = DEFAULT_TOL) -> Lagrangian:
    """The Lagrangian whose chart value in ``phi_{L0, L1}`` is ``S``."""
    g = transversality_gap(L0, L1)
    if g < tol.gap_tol:
        raise ChartDomainError("chart base L0 is not transversal to L1", g)
    return Lagrangian(chart_inverse_frame(L0.frame, L1.frame, as_sym(S)), check=False)


def chart_inverse_frame(F0, F1, S):
    """Frame ``F0 + F1 rho^{-1} S`` of the graph with chart value ``S``."""
    n = F0.shape[1]
    rho = F0.T @ _J(n) @ F1
    return F0 + F1 @ np.linalg.solve(rho, S)


def pair_defect(P: Lagrangian, Q: Lagrangian, tol: float | Tolerance = DEFAULT_TOL):
    """``(dim(P & Q), codim(P + Q))`` at threshold ``tol``.

    The intersection dimension counts principal angles whose sine is at most
    ``tol``; the codimension is computed independently from the rank of the
    stacked frame.
    """
    t = tol.kernel_tol if isinstance(tol, Tolerance) else float(tol)
    n = P.n
    sines = scipy.linalg.svdvals(Q.frame - P.frame @ (P.frame.T @ Q.frame))
    inter = int(np.count_nonzero(sines <= t))
    sv = scipy.linalg.svdvals(np.hstack([P.frame, Q.frame]))
    rank = int(np.count_nonzero(sv > t))
    return inter, 2 * n - rank


def common_transversal(P: Lagrangian, Q: Lagrangian, seed=0, tol: Tolerance = DEFAULT_TOL,
                       n_grid=64, refine=3) -> Lagrangian:
    """A Lagrangian transversal to both ``P`` and ``Q``.

    Searches the circle ``exp(theta J) J(P)`` for the ``theta`` maximizing
    the smaller of the two transversality gaps.  The grid offset is drawn
    from ``seed``, and the best cell is refined ``refine`` times.
    """
    base = P.perp()
    rng = np.random.default_rng(seed)
    offset = rng.uniform(0.0, np.pi / n_grid)

    def score(theta):
        L = base.rotate(theta)
        return min(transversality_gap(L, P), transversality_gap(L, Q))

    # exp(theta J) J(P) has period pi as a subspace
    thetas = offset + np.arange(n_grid) * (np.pi / n_grid)
    scores = np.array([score(th) for th in thetas])
    width = np.pi / n_grid
    best = thetas[int(np.argmax(scores))]
    for _ in range(refine):
        local = best + np.linspace(-width, width, 9)
        s = np.array([score(th) for th in local])
        best = local[int(np.argmax(s))]
        width /= 4.0
    L = base.rotate(best)
    g = min(transversality_gap(L, P), transversality_gap(L, Q))
    if g < tol.gap_tol:
        raise SearchExhaustedError(f"best common transversal has gap {g:.3e} < {tol.gap_tol:.1e}")
    return L


def frame_tangent(F, dF) -> np.ndarray:
    """Tangent operator of a Lagrangian curve in frame coordinates.

    For a differentiable frame curve ``F(s)`` of a Lagrangian curve, the
    derivative at ``s`` seen as a symmetric form on the Lagrangian is
    ``u, v -> <J F u, dF v>`` pulled back to coordinates, i.e. ``F^T J dF``.
    If ``F`` is orthonormal the result is the tangent in orthonormal
    ``F``-coordinates.
    """
    n = F.shape[-1]
    H = np.swapaxes(F, -1, -2) @ _J(n) @ dF
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def is_symplectic(M, tol=1e-8) -> bool:
    n = M.shape[0] // 2
    J = _J(n)
    return bool(np.linalg.norm(M.T @ J @ M - J, 2) <= tol)


def symplectic_inverse(M):
    """Inverse of a symplectic matrix, ``-J M^T J``."""
    n = M.shape[-1] // 2
    J = _J(n)
    return -J @ np.swapaxes(M, -1, -2) @ J
