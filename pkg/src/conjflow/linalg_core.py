"""Dense self-adjoint spectral kernel.

Self-adjoint operators on a truncated Hilbert space are plain symmetric
``numpy`` arrays.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AmbiguousSplitError, EigenSolverError, PreconditionError

__all__ = [
    "Tolerance",
    "DEFAULT_TOL",
    "as_sym",
    "spectrum",
    "morse_index",
    "kernel_dim",
    "is_positive_isomorphism",
    "sym_inv_sqrt",
    "spectral_shift_witness",
    "spectral_split",
    "random_sym",
    "random_spd",
]


@dataclass(frozen=True)
class Tolerance:
    """Two-tier threshold pair.

    Eigenvalues with magnitude at most ``kernel_tol`` count as kernel.
    Eigenvalues with magnitude at least ``gap_tol`` count as safely
    invertible.  The interval between the two is a dead zone.
    """

    kernel_tol: float = 1e-9
    gap_tol: float = 1e-6

    def __post_init__(self):
        if self.kernel_tol < 0 or self.gap_tol < 0:
            raise PreconditionError("tolerances must be nonnegative")
        if not self.kernel_tol < self.gap_tol:
            raise PreconditionError("kernel_tol must be smaller than gap_tol")


DEFAULT_TOL = Tolerance()


def as_sym(S) -> np.ndarray:
    """Return the symmetrized float64 copy of ``S``.

    Asymmetry up to ``1e-12 * (1 + max|S|)`` is repaired silently; anything
    larger raises :class:`PreconditionError`.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise PreconditionError(f"expected a nonempty square matrix, got shape {S.shape}")
    scale = 1.0 + np.max(np.abs(S))
    drift = np.max(np.abs(S - S.T))
    if drift > 1e-12 * scale:
        raise PreconditionError(f"matrix is not symmetric (drift {drift:.3e})")
    return 0.5 * (S + S.T)


def _eigh(S, vectors=False):
    try:
        if vectors:
            return np.linalg.eigh(S)
        return np.linalg.eigvalsh(S)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"symmetric eigensolver failed: {exc}") from exc


def spectrum(S) -> np.ndarray:
    """Eigenvalues of ``S`` in ascending order, with multiplicity."""
    return _eigh(as_sym(S))


def morse_index(S, tol: Tolerance = DEFAULT_TOL) -> int:
    """Number of eigenvalues below ``-tol.kernel_tol``."""
    return int(np.count_nonzero(spectrum(S) < -tol.kernel_tol))


def kernel_dim(S, tol: Tolerance = DEFAULT_TOL) -> int:
    """Number of eigenvalues with magnitude at most ``tol.kernel_tol``."""
    return int(np.count_nonzero(np.abs(spectrum(S)) <= tol.kernel_tol))


def is_positive_isomorphism(S, tol: Tolerance = DEFAULT_TOL) -> bool:
    return bool(spectrum(S)[0] >= tol.gap_tol)


def sym_inv_sqrt(S, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Inverse square root of a symmetric positive definite operator."""
    S = as_sym(S)
    w, U = _eigh(S, vectors=True)
    if w[0] < tol.gap_tol:
        raise PreconditionError(
            f"inverse square root needs a positive isomorphism (min eigenvalue {w[0]:.3e})"
        )
    R = (U / np.sqrt(w)) @ U.T
    return 0.5 * (R + R.T)


def spectral_shift_witness(T, H, slack: float = 1e-9):
    """Pair every eigenvalue of ``T`` with a witness eigenvalue of ``T + H``.

    With ``alpha`` and ``beta`` the extreme eigenvalues of ``H``, each
    ``lam`` in the spectrum of ``T`` should have some ``mu`` in the spectrum
    of ``T + H`` with ``lam + alpha <= mu <= lam + beta``.

    Returns
    -------
    list of (lam, mu)
        ``mu`` is the eigenvalue of ``T + H`` closest to the middle of the
        target interval, or ``None`` when the interval (widened by
        ``slack``) contains no eigenvalue.  The ``None`` entries are
        counterexample records.
    """
    T = as_sym(T)
    H = as_sym(H)
    if T.shape != H.shape:
        raise PreconditionError("T and H must have the same shape")
    hs = spectrum(H)
    alpha, beta = hs[0], hs[-1]
    mus = spectrum(T + H)
    pairs = []
    for lam in spectrum(T):
        lo, hi = lam + alpha - slack, lam + beta + slack
        inside = mus[(mus >= lo) & (mus <= hi)]
        if inside.size == 0:
            pairs.append((float(lam), None))
            continue
        mid = lam + 0.5 * (alpha + beta)
        pairs.append((float(lam), float(inside[np.argmin(np.abs(inside - mid))])))
    return pairs


def spectral_split(S, tol: Tolerance = DEFAULT_TOL):
    """Orthogonal projectors onto the positive, kernel and negative parts.

    Raises
    ------
    AmbiguousSplitError
        If some eigenvalue magnitude lies strictly between ``kernel_tol``
        and ``gap_tol``.
    """
    S = as_sym(S)
    w, U = _eigh(S, vectors=True)
    a = np.abs(w)
    dead = (a > tol.kernel_tol) & (a < tol.gap_tol)
    if np.any(dead):
        raise AmbiguousSplitError(w[dead], tol.kernel_tol, tol.gap_tol)

    def proj(mask):
        V = U[:, mask]
        return V @ V.T

    return proj(w >= tol.gap_tol), proj(a <= tol.kernel_tol), proj(w <= -tol.gap_tol)


def random_sym(n, rng, scale=1.0) -> np.ndarray:
    M = rng.standard_normal((n, n)) * scale
    return 0.5 * (M + M.T)


def random_spd(n, rng, lo=0.5, hi=2.0) -> np.ndarray:
    """Random symmetric matrix with eigenvalues drawn uniformly from [lo, hi]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(lo, hi, size=n)
    M = (Q * w) @ Q.T
    return 0.5 * (M + M.T)


def orthonormalize(F) -> np.ndarray:
    """Orthonormal basis of the column span of a full-rank ``F``.

    The sign of each column is fixed so that the triangular factor has a
    positive diagonal, which makes the output a smooth function of ``F``.
    """
    Q, R = np.linalg.qr(F)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def psd_sqrt_inv_derivative(S, dS):
    """Derivative of ``S**(-1/2)`` along direction ``dS`` for SPD ``S``."""
    w, U = np.linalg.eigh(S)
    r = np.sqrt(w)
    D = U.T @ dS @ U
    # d(S^{1/2}) solves Y X + X Y = dS in the eigenbasis
    dY = D / (r[:, None] + r[None, :])
    Z = (U / r) @ U.T
    dsqrt = U @ dY @ U.T
    return -Z @ dsqrt @ Z


def smallest_singular_value(M) -> float:
    return float(scipy.linalg.svdvals(M)[-1])
