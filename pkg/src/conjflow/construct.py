"""From prescribed conjugate data back to a system and a metric.

The pipeline is

    prescription -> diagonal operator A -> T(t) = f(t) - A -> xi on [c, b)
    -> extension of xi to [a, b) -> symplectic system -> Riemannian form
    -> conformally flat metric e^Omega g0 with Omega(x, t) = <R(t) x, x>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .conjugate import ConjugateReport, OperatorCurve, detect
from .errors import (
    BudgetError,
    LiftingDriftError,
    PreconditionError,
    VerificationError,
)
from .linalg_core import DEFAULT_TOL, Tolerance
from .symplectic import Lagrangian, complex_structure
from .system import (
    SymplecticSystemSpec,
    Tabulated,
    make_grid,
    riemannian_reduce,
)

__all__ = [
    "SingularityPrescription",
    "BuiltOperator",
    "LagrangianCurve",
    "ManifoldScenario",
    "build_operator",
    "prescribed_curve",
    "curve_to_xi",
    "extend_xi",
    "xi_to_system",
    "realize_metric",
    "full_pipeline",
    "theta",
    "theta_inv",
]

INF = math.inf


def theta(t, c):
    """``(t - c) / (1 + t - c)``: a diffeomorphism ``[c, inf) -> [0, 1)``."""
    s = np.asarray(t, dtype=np.float64) - c
    return s / (1.0 + s)


def theta_inv(s, c):
    s = np.asarray(s, dtype=np.float64)
    return c + s / (1.0 - s)


# -- prescriptions --------------------------------------------------------------


@dataclass
class SingularityPrescription:
    """Prescribed conjugate data on ``(c, b)``.

    ``points`` are the instants with prescribed multiplicity (``math.inf``
    allowed); ``intervals`` are closed subintervals of ``(c, b)``.  When
    ``b`` is infinite, points and intervals are given in the coordinate
    ``s = theta(t)`` in ``(0, 1)``.
    """

    c: float = 0.0
    b: float = 1.0
    points: list = field(default_factory=list)
    multiplicities: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    budget: int = 64
    cap: int = 8
    density: float = 32.0

    def __post_init__(self):
        self.points = [float(x) for x in self.points]
        self.multiplicities = [INF if m is None or m == "inf" else m for m in self.multiplicities]
        self.intervals = [(float(lo), float(hi)) for lo, hi in self.intervals]
        if len(self.points) != len(self.multiplicities):
            raise PreconditionError("points and multiplicities differ in length")
        if len(set(self.points)) != len(self.points):
            raise PreconditionError("points must be distinct")
        lo_s, hi_s = self.param_range
        for x in self.points:
            if not lo_s < x < hi_s:
                raise PreconditionError(f"point {x} outside ({lo_s}, {hi_s})")
        for m in self.multiplicities:
            if not (m == INF or (int(m) == m and m >= 1)):
                raise PreconditionError(f"multiplicity {m} must be a positive integer or inf")
        for lo, hi in self.intervals:
            if not (lo_s < lo < hi < hi_s):
                raise PreconditionError(f"interval [{lo}, {hi}] must be a closed subinterval of ({lo_s}, {hi_s})")

    @property
    def infinite(self):
        return self.b == INF

    @property
    def param_range(self):
        """Range of the prescription coordinate."""
        return (0.0, 1.0) if self.infinite else (self.c, self.b)

    def to_time(self, s):
        """Map a prescription coordinate to the time axis."""
        return theta_inv(s, self.c) if self.infinite else np.asarray(s, dtype=np.float64)

    def to_dict(self):
        return {
            "c": self.c,
            "b": "inf" if self.infinite else self.b,
            "points": self.points,
            "multiplicities": ["inf" if m == INF else int(m) for m in self.multiplicities],
            "intervals": [list(iv) for iv in self.intervals],
            "budget": self.budget,
            "cap": self.cap,
            "density": self.density,
        }

    @classmethod
    def from_dict(cls, d):
        b = d.get("b", 1.0)
        return cls(
            c=float(d.get("c", 0.0)),
            b=INF if b in ("inf", None) else float(b),
            points=d.get("points", []),
            multiplicities=d.get("multiplicities", []),
            intervals=d.get("intervals", []),
            budget=int(d.get("budget", 64)),
            cap=int(d.get("cap", 8)),
            density=float(d.get("density", 32.0)),
        )


@dataclass
class BuiltOperator:
    """Diagonal operator with one provenance label per diagonal entry."""

    diagonal: np.ndarray
    provenance: list
    flags: list

    @property
    def A(self):
        return np.diag(self.diagonal)

    @property
    def n(self):
        return len(self.diagonal)


def build_operator(p: SingularityPrescription) -> BuiltOperator:
    """Diagonal operator whose eigenvalues realize the prescription.

    Each point is repeated ``min(m, cap)`` times; each interval is sampled
    uniformly at ``density`` points per unit length (at least two).  An
    empty prescription yields the one-dimensional operator ``c - 1`` (in
    prescription coordinates), which is never crossed on ``[c, b)``.
    """
    entries, flags = [], []
    for x, m in zip(p.points, p.multiplicities):
        k = p.cap if m == INF else int(m)
        if m == INF or m > p.cap:
            flags.append({"flag": "capped infinity" if m == INF else "capped multiplicity",
                          "point": x, "kept": min(k, p.cap)})
        entries += [(x, "point")] * min(k, p.cap)
    for lo, hi in p.intervals:
        count = max(2, int(round(p.density * (hi - lo))))
        entries += [(float(x), "continuum sample") for x in np.linspace(lo, hi, count)]
    if len(entries) > p.budget:
        raise BudgetError(len(entries), p.budget)
    if not entries:
        entries = [(p.param_range[0] - 1.0, "padding")]
        flags.append({"flag": "padded", "value": entries[0][0]})
    entries.sort(key=lambda e: e[0])
    return BuiltOperator(np.array([e[0] for e in entries]), [e[1] for e in entries], flags)


def prescribed_curve(p: SingularityPrescription, A, b_eff=None) -> OperatorCurve:
    """``T(t) = t - A``, or ``theta(t) - A`` when ``b`` is infinite.

    The returned function can be evaluated slightly to the left of ``c``,
    which the extension step uses.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    I = np.eye(n)
    c = p.c
    if p.infinite:
        if b_eff is None:
            raise PreconditionError("an infinite prescription needs a finite working horizon")

        def fn(t):
            return np.asarray(theta(t, c))[..., None, None] * I - A

        def dfn(t):
            s = np.asarray(t, dtype=np.float64) - c
            return (1.0 / (1.0 + s) ** 2)[..., None, None] * I

    else:
        b_eff = p.b if b_eff is None else b_eff

        def fn(t):
            return np.asarray(t, dtype=np.float64)[..., None, None] * I - A

        def dfn(t):
            return np.ones(np.shape(t))[..., None, None] * I

    curve = OperatorCurve(fn, c, float(b_eff), n, label="prescribed")
    curve.derivative = dfn
    return curve


# -- Lagrangian curves --------------------------------------------------------


class LagrangianCurve:
    """Curve of Lagrangians given by a (not necessarily orthonormal) frame.

    ``frame(t)`` and ``dframe(t)`` return ``(2n, n)`` arrays.
    """

    def __init__(self, frame, dframe, a, b, n, meta=None):
        self.frame = frame
        self.dframe = dframe
        self.a = float(a)
        self.b = float(b)
        self.n = n
        self.meta = meta or {}

    def at(self, t) -> Lagrangian:
        return Lagrangian(self.frame(t), check=False)

    def tangent(self, t):
        """Derivative as a symmetric matrix in orthonormal-frame coordinates."""
        F, dF = self.frame(t), self.dframe(t)
        Q, R = np.linalg.qr(F)
        M = F.T @ complex_structure(self.n) @ dF
        M = 0.5 * (M + M.T)
        Ri = np.linalg.inv(R)
        H = Ri.T @ M @ Ri
        d = np.sign(np.diag(R))
        return d[:, None] * H * d[None, :]

    def lifting_generator(self, t):
        """``-J H P`` with ``H`` the tangent as an operator on ``V`` supported on ``xi(t)``.

        Accepts a scalar or an array of times.
        """
        F, dF = self.frame(t), self.dframe(t)
        J = complex_structure(self.n)
        Ft = np.swapaxes(F, -1, -2)
        M = Ft @ J @ dF
        M = 0.5 * (M + np.swapaxes(M, -1, -2))
        Gi = np.linalg.inv(Ft @ F)
        return -J @ (F @ Gi @ M @ Gi @ Ft)


def curve_to_xi(T: OperatorCurve) -> LagrangianCurve:
    """``xi(t) = chart^{-1}(-T(t))`` in the standard chart: frames ``[-T; 1]``."""
    n = T.n
    I = np.eye(n)
    Z = np.zeros((n, n))

    def frame(t):
        return np.vstack([-T(t), I])

    def dframe(t):
        return np.vstack([-T.derivative(t), Z])

    return LagrangianCurve(frame, dframe, T.a, T.b, n, meta={"source": T.label})


def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)

    def bump(x):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)

    u, v = bump(s), bump(1.0 - s)
    return u / (u + v)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
BLEND_TAIL = 0.1


def extend_xi(T: OperatorCurve, a, tol: Tolerance = DEFAULT_TOL, step=5e-4, eps=None) -> LagrangianCurve:
    """Extend the curve ``xi`` of ``T`` from ``[c, b)`` to ``[a, b)``.

    In the chart with companion ``L1 = graph(P)``, ``P = 1 - T(c)^{-1}``,
    the value at ``c`` is ``-1``.  On ``[a, c]`` the chart value is
    ``sigma(t) = int_a^t tau`` with
    ``tau = w sigma_bar' - (1 - w) K``, where ``w`` is a smooth step rising
    on ``[c - eps, c - eps/10]`` and ``K`` is the positive matrix making
    ``sigma(c) = -1``.  Hence ``sigma`` agrees with the chart value of the
    original curve on ``[c - eps/10, c]`` and the glued curve is smooth.
    A wide blend keeps the second derivative of ``xi``, and with it the
    curvature of the resulting system, moderate.

    Raises
    ------
    VerificationError
        If one of ``sigma(a) = 0``, ``sigma < 0`` on ``(a, c]``,
        ``sigma' < 0`` on ``[a, c]`` or the match at ``c`` fails.
    """
    c = T.a
    if not a < c:
        raise PreconditionError("extension needs a < c")
    n = T.n
    I = np.eye(n)
    Tc = T(c)
    w_c = np.linalg.eigvalsh(Tc)
    if np.min(np.abs(w_c)) < tol.gap_tol:
        raise PreconditionError("xi(c) is not transversal to L0")
    P = I - np.linalg.inv(Tc)
    P = 0.5 * (P + P.T)

    def dsigma_bar(t):
        Tt, dT = T(t), T.derivative(t)
        Mi = np.linalg.inv(I + P @ Tt)
        return -dT @ Mi + Tt @ Mi @ P @ dT @ Mi

    def gl_nodes(edges):
        l, r = edges[:-1, None], edges[1:, None]
        return (0.5 * (r - l) * _GL_X + 0.5 * (r + l)).ravel(), (0.5 * (r - l) * _GL_W).ravel()

    def build(eps):
        lo = c - eps

        def w(t):
            return _smooth_step((t - lo) / ((1.0 - BLEND_TAIL) * eps))

        # integrals of w sigma_bar' and (1 - w) over [a, c]
        xs, ws = gl_nodes(np.linspace(lo, c, max(64, int(np.ceil(eps / step))) + 1))
        wx = w(xs)
        Sw = np.tensordot(ws * wx, dsigma_bar(xs), axes=(0, 0))
        one_minus = (lo - a) + float(np.sum(ws * (1.0 - wx)))
        K = (I + Sw) / one_minus
        return 0.5 * (K + K.T), w

    eps = 0.95 * (c - a) if eps is None else eps
    for _ in range(30):
        K, w = build(eps)
        if np.linalg.eigvalsh(K)[0] > tol.gap_tol:
            break
        eps *= 0.5
    else:
        raise VerificationError("no admissible blending window for the extension")
    lo = c - eps

    def tau(t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.broadcast_to(-K, t.shape + K.shape).copy()
        blend = t > lo
        if np.any(blend):
            wt = w(t[blend])[:, None, None]
            out[blend] = -(1.0 - wt) * K + wt * dsigma_bar(t[blend])
        return out

    # cumulative table of sigma on [a, c]
    m = int(np.ceil((c - a) / step))
    nodes = np.linspace(a, c, m + 1)
    dx = nodes[1] - nodes[0]
    xs, ws = gl_nodes(nodes)
    pieces = np.einsum("iq,iqjk->ijk", ws.reshape(m, -1), tau(xs).reshape(m, len(_GL_X), n, n))
    table = np.concatenate([np.zeros((1, n, n)), np.cumsum(pieces, axis=0)])

    def sigma(t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = -(t - a)[:, None, None] * K
        blend = t > lo
        if np.any(blend):
            tb = t[blend]
            i = np.clip(np.floor((tb - a) / dx).astype(int), 0, m)
            l = nodes[i]
            x = (0.5 * (tb - l))[:, None] * _GL_X + (0.5 * (tb + l))[:, None]
            vals = tau(x.ravel()).reshape(len(tb), len(_GL_X), n, n)
            rem = np.einsum("q,pqjk->pjk", _GL_W, vals) * (0.5 * (tb - l))[:, None, None]
            S = table[i] + rem
            out[blend] = 0.5 * (S + np.swapaxes(S, -1, -2))
        return out

    def _frames(t, derivative):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.empty((len(t), 2 * n, n))
        right = t >= c
        if np.any(right):
            tr = t[right]
            if derivative:
                out[right] = np.concatenate([-T.derivative(tr), np.zeros((len(tr), n, n))], axis=1)
            else:
                out[right] = np.concatenate([-T(tr), np.broadcast_to(I, (len(tr), n, n))], axis=1)
        left = ~right
        if np.any(left):
            S = tau(t[left]) if derivative else sigma(t[left])
            bottom = P @ S if derivative else I + P @ S
            out[left] = np.concatenate([S, bottom], axis=1)
        return out[0] if scalar else out

    def frame(t):
        return _frames(t, False)

    def dframe(t):
        return _frames(t, True)

    checks = _verify_extension(table, nodes, tau, dsigma_bar, c, tol)
    meta = {"eps": eps, "K_min_eig": float(np.linalg.eigvalsh(K)[0]), "checks": checks,
            "c": c, "P": P}
    return LagrangianCurve(frame, dframe, a, T.b, n, meta=meta)


def _verify_extension(table, nodes, tau, dsigma_bar, c, tol):
    n = table.shape[1]
    I = np.eye(n)
    checks = {}
    checks["sigma_at_a"] = float(np.max(np.abs(table[0])))
    sig_max = np.max(np.linalg.eigvalsh(0.5 * (table[1:] + np.swapaxes(table[1:], -1, -2))))
    checks["sigma_max_eig"] = float(sig_max)
    sample = nodes[:: max(1, len(nodes) // 2000)]
    checks["tau_max_eig"] = float(np.max(np.linalg.eigvalsh(tau(np.append(sample, c)))))
    checks["value_match"] = float(np.max(np.abs(table[-1] + I)))
    checks["derivative_match"] = float(np.max(np.abs(tau(c)[0] - dsigma_bar(c))))
    scale = 1.0 + float(np.max(np.abs(dsigma_bar(c))))
    failures = []
    if checks["sigma_at_a"] != 0.0:
        failures.append("sigma(a) = 0")
    if not sig_max < 0:
        failures.append("sigma negative definite on (a, c]")
    if not checks["tau_max_eig"] < 0:
        failures.append("sigma' negative definite")
    if checks["value_match"] > 1e-8:
        failures.append("sigma(c) = -1")
    if checks["derivative_match"] > 1e-8 * scale:
        failures.append("sigma'(c) matches")
    if failures:
        raise VerificationError("extension postconditions failed: " + ", ".join(failures))
    return checks


# -- systems from curves --------------------------------------------------------


def _max_principal_sine(F, G):
    """Largest principal-angle sine between column spans (stacks allowed)."""
    Qf, _ = np.linalg.qr(F)
    Qg, _ = np.linalg.qr(G)
    D = Qg - Qf @ (np.swapaxes(Qf, -1, -2) @ Qg)
    return float(np.max(np.linalg.norm(D, 2, axis=(-2, -1))))


def xi_to_system(xi: LagrangianCurve, h=1e-3, lift_tol=1e-6) -> SymplecticSystemSpec:
    """Symplectic system whose Lagrangian curve is ``xi``.

    Integrates the lifting ``psi' = -J H P psi``, ``psi(a) = 1`` with RK4 at
    half the step ``h`` and tabulates ``X = -psi^{-1} psi'`` on that grid.

    Raises
    ------
    LiftingDriftError
        If ``psi(t)(L0)`` departs from ``xi(t)`` by a principal angle with
        sine above ``lift_tol`` at some table node.
    """
    n = xi.n
    ts = make_grid(xi.a, xi.b, 0.5 * h)
    dt = ts[1] - ts[0]
    J = complex_structure(n)
    gens = xi.lifting_generator(ts)
    mids = xi.lifting_generator(ts[:-1] + 0.5 * dt)
    psis = np.empty_like(gens)
    psi = np.eye(2 * n)
    psis[0] = psi
    for k in range(len(ts) - 1):
        k1 = gens[k] @ psi
        k2 = mids[k] @ (psi + 0.5 * dt * k1)
        k3 = mids[k] @ (psi + 0.5 * dt * k2)
        k4 = gens[k + 1] @ (psi + dt * k3)
        psi = psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        psis[k + 1] = psi
    psi_inv = -J @ np.swapaxes(psis, -1, -2) @ J
    Xs = -psi_inv @ gens @ psis
    drift = _max_principal_sine(psis[..., n:], xi.frame(ts))
    if drift > lift_tol:
        raise LiftingDriftError(f"lifted curve drifts from xi (sine {drift:.3e})",
                                metric="lifting_drift", value=drift)
    A = Xs[:, :n, :n]
    B = 0.5 * (Xs[:, :n, n:] + np.swapaxes(Xs[:, :n, n:], -1, -2))
    C = 0.5 * (Xs[:, n:, :n] + np.swapaxes(Xs[:, n:, :n], -1, -2))
    X = SymplecticSystemSpec(
        n, xi.a, xi.b,
        Tabulated(ts, A, source="prescribed"),
        Tabulated(ts, B, source="prescribed"),
        Tabulated(ts, C, source="prescribed"),
        label="prescribed",
    )
    X.lifting_drift = drift
    return X


# -- metrics --------------------------------------------------------------------


class ManifoldScenario:
    """``M = H + R`` with metric ``e^Omega g0``, ``Omega(x, t) = <R(t) x, x>``.

    Points are arrays ``(x_1, ..., x_n, t)``; the geodesic of interest is
    ``t -> (0, t)``.
    """

    def __init__(self, R, n, a, b):
        self.R = R
        self.n = n
        self.a = float(a)
        self.b = float(b)

    @property
    def dim(self):
        return self.n + 1

    def _split(self, p):
        p = np.asarray(p, dtype=np.float64)
        return p[: self.n], float(p[self.n])

    def omega(self, p):
        x, t = self._split(p)
        return float(x @ self.R(t) @ x)

    def grad_omega(self, p):
        x, t = self._split(p)
        R = self.R(t)
        return np.append(2.0 * R @ x, x @ self.R.derivative(t) @ x)

    def metric(self, p):
        return np.exp(self.omega(p)) * np.eye(self.dim)

    def metric_derivative(self, p):
        """``dg[k, i, j] = d_k g_ij``."""
        e = np.exp(self.omega(p))
        return e * self.grad_omega(p)[:, None, None] * np.eye(self.dim)[None]

    def christoffel(self, p):
        """``G[k, i, j]`` = Gamma^k_ij from the conformal-factor formula."""
        d = self.grad_omega(p)
        I = np.eye(self.dim)
        G = 0.5 * (I[:, :, None] * d[None, None, :] + I[:, None, :] * d[None, :, None]
                   - I[None, :, :] * d[:, None, None])
        return G

    def christoffel_fd(self, p, step=1e-4):
        """Christoffel symbols from central differences of the metric."""
        p = np.asarray(p, dtype=np.float64)
        m = self.dim
        dg = np.empty((m, m, m))
        for k in range(m):
            e = np.zeros(m)
            e[k] = step
            dg[k] = (self.metric(p + e) - self.metric(p - e)) / (2 * step)
        ginv = np.linalg.inv(self.metric(p))
        # Gamma^l_ij = 1/2 g^{lk} (d_i g_kj + d_j g_ki - d_k g_ij)
        S = 0.5 * (np.transpose(dg, (1, 0, 2)) + np.transpose(dg, (1, 2, 0)) - dg)
        # S[k, i, j] with dg indexed [deriv, row, col]
        return np.einsum("lk,kij->lij", ginv, S)

    def geodesic(self, p0, v0, duration=1.0, rtol=1e-12, atol=1e-14):
        m = self.dim

        def rhs(_, y):
            p, v = y[:m], y[m:]
            G = self.christoffel(p)
            return np.concatenate([v, -np.einsum("kij,i,j->k", G, v, v)])

        y0 = np.concatenate([np.asarray(p0, float), np.asarray(v0, float)])
        return solve_ivp(rhs, (0.0, duration), y0, method="DOP853", rtol=rtol, atol=atol,
                         dense_output=True)

    def axis_deviation(self, duration=1.0, samples=101):
        """Max distance of the geodesic from ``(0, a)`` with velocity ``(0, 1)`` to ``(0, a + s)``."""
        p0 = np.zeros(self.dim)
        p0[self.n] = self.a
        v0 = np.zeros(self.dim)
        v0[self.n] = 1.0
        duration = min(duration, self.b - self.a)
        sol = self.geodesic(p0, v0, duration)
        s = np.linspace(0.0, duration, samples)
        Y = sol.sol(s)[: self.dim]
        target = np.zeros_like(Y)
        target[self.n] = self.a + s
        return float(np.max(np.abs(Y - target)))

    def jacobi_operator_fd(self, t, step=1e-3, inner_step=1e-4):
        """``v -> Rm(gamma', v) gamma'`` at ``(0, t)`` from finite-difference curvature.

        Christoffel symbols come from differences of the metric and their
        derivatives from differences of those; the quadratic terms are
        included even though they vanish on the axis.
        """
        m, n = self.dim, self.n
        p = np.zeros(m)
        p[n] = t
        dG = np.empty((m, m, m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = step
            dG[i] = (self.christoffel_fd(p + e, inner_step) - self.christoffel_fd(p - e, inner_step)) / (2 * step)
        G = self.christoffel_fd(p, inner_step)
        tt = n
        out = np.empty((n, n))
        # Rm(d_i, d_j) d_k = R^l_kij d_l with i = t, j = v, k = t
        for v in range(n):
            Rl = dG[tt][:, v, tt] - dG[v][:, tt, tt] + G[:, tt, :] @ G[:, v, tt] - G[:, v, :] @ G[:, tt, tt]
            out[:, v] = Rl[:n]
        return out


def realize_metric(Xr: SymplecticSystemSpec) -> ManifoldScenario:
    """Conformally flat metric whose axis geodesic has Jacobi operator ``C(t)``."""
    if not Xr.riemannian:
        raise PreconditionError("realize_metric needs a Riemannian system")
    return ManifoldScenario(Xr.C, Xr.n, Xr.a, Xr.b)


# -- the whole pipeline ---------------------------------------------------------


@dataclass
class PipelineResult:
    scenario: ManifoldScenario
    report: ConjugateReport
    expected: list  # (t, multiplicity, provenance)
    matched: bool
    metadata: dict


def _expected_instants(p: SingularityPrescription, op: BuiltOperator):
    out = []
    for v, prov in zip(op.diagonal, op.provenance):
        if prov == "padding":
            continue
        t = float(p.to_time(v))
        if out and abs(out[-1][0] - t) < 1e-12:
            out[-1][1] += 1
        else:
            out.append([t, 1, prov])
    return [tuple(e) for e in out]


def full_pipeline(p: SingularityPrescription, a=-0.5, h=1e-3, tol: Tolerance = DEFAULT_TOL,
                  b_eff=None, match_tol=1e-6) -> PipelineResult:
    """Prescription to metric, then detection on the reduced system."""
    op = build_operator(p)
    if p.infinite and b_eff is None:
        top = max(float(np.max(op.diagonal)), 0.5)
        target = float(theta_inv(top, p.c)) + 1.0
        b_eff = a + h * math.ceil((target - a) / h - 1e-9)
    T = prescribed_curve(p, op.A, b_eff)
    xi = extend_xi(T, a, tol)
    X = xi_to_system(xi, h)
    Xr, gauge = riemannian_reduce(X, h, tol)
    scenario = realize_metric(Xr)
    report = detect(Xr, h, tol)

    expected = _expected_instants(p, op)
    got = [(c.t, c.multiplicity) for c in report.instants]
    matched = len(got) == len(expected) and all(
        abs(t - te) <= match_tol and m == me for (t, m), (te, me, _) in zip(got, expected)
    )
    for c in report.instants:
        near = [e for e in expected if abs(e[0] - c.t) <= match_tol]
        c.provenance = near[0][2] if near else "unexpected"
    metadata = {
        "operator_flags": op.flags,
        "dimension": op.n,
        "b_eff": float(T.b),
        "extension": {k: v for k, v in xi.meta.items() if k != "P"},
        "lifting_drift": X.lifting_drift,
        "detector": report.quality,
        "instants_in_extension": [c.t for c in report.instants if a < c.t <= p.c],
    }
    return PipelineResult(scenario, report, expected, matched, metadata)
