"""Detection and bookkeeping of conjugate instants.

Along a positive system the curve ``T(t) = -chart(L0, L1, xi(t))`` has a
positive definite derivative, so its sorted eigenvalues are increasing
functions of ``t``.  A conjugate instant is a zero of one of these
branches; its multiplicity is the number of branches vanishing there.
The companion ``L1`` is re-anchored whenever ``xi`` drifts too close to
it, which splits ``[a, b)`` into chart windows.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import NonPositiveSystemError, PreconditionError
from .linalg_core import DEFAULT_TOL, Tolerance, orthonormalize
from .symplectic import Lagrangian, chart_matrix, common_transversal, symplectic_inverse
from .system import FundamentalSolution, SymplecticSystemSpec, integrate, make_grid

__all__ = [
    "OperatorCurve",
    "ChartWindow",
    "ConjugateInstant",
    "ConjugateReport",
    "MorseFlow",
    "TruncationStudy",
    "detect",
    "morse_flow",
    "isolation_check",
    "truncation_study",
    "diagonal_family",
]

MERGE_RADIUS = 1e-8
ROOT_XTOL = 1e-13
REANCHOR_RATIO = 0.25


@dataclass
class OperatorCurve:
    """A path ``t -> T(t)`` of symmetric matrices on ``[a, b]``.

    ``fn`` accepts a scalar or a 1-d array of times.
    """

    fn: Callable
    a: float
    b: float
    n: int
    label: str = ""

    def __call__(self, t):
        T = np.asarray(self.fn(t), dtype=np.float64)
        return 0.5 * (T + np.swapaxes(T, -1, -2))


def diagonal_family(N):
    """``T_N(t) = t - diag(1 - 1/k)`` for ``k = 1..N`` on ``[0, 1]``."""
    d = 1.0 - 1.0 / np.arange(1, N + 1)

    def fn(t):
        t = np.asarray(t, dtype=np.float64)
        return t[..., None, None] * np.eye(N) - np.diag(d)

    return OperatorCurve(fn, 0.0, 1.0, N, label=f"diagonal_family[{N}]")


@dataclass
class ChartWindow:
    t_lo: float
    t_hi: float
    t0: float
    L1: Lagrangian | None
    times: np.ndarray
    T: np.ndarray
    evaluate: Callable = field(repr=False)
    min_gap: float = np.inf

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.T)

    def contains(self, t):
        return self.t_lo - 1e-12 <= t <= self.t_hi + 1e-12


@dataclass
class ConjugateInstant:
    t: float
    multiplicity: int
    branches: list
    kind: str
    near_zero_profile: list
    window: int
    kernel_dim: int
    kernel_vectors: np.ndarray = field(repr=False, default=None)
    cross_validated: bool | None = None
    e_kernel_dim: int | None = None
    spread: float = 0.0
    provenance: str | None = None

    def to_dict(self):
        d = {
            "t": self.t,
            "multiplicity": self.multiplicity,
            "branches": list(self.branches),
            "kind": self.kind,
            "near_zero_profile": list(self.near_zero_profile),
            "window": self.window,
            "kernel_dim": self.kernel_dim,
            "cross_validated": self.cross_validated,
            "e_kernel_dim": self.e_kernel_dim,
            "spread": self.spread,
        }
        if self.provenance is not None:
            d["provenance"] = self.provenance
        return d


@dataclass
class ConjugateReport:
    instants: list
    windows: list
    a: float
    b: float
    h: float
    quality: dict
    solution: FundamentalSolution | None = field(default=None, repr=False)

    @property
    def times(self):
        return [c.t for c in self.instants]

    @property
    def multiplicities(self):
        return [c.multiplicity for c in self.instants]

    def total_multiplicity(self):
        return int(sum(self.multiplicities))

    def window_for(self, t):
        for k, w in enumerate(self.windows):
            if w.contains(t):
                return k
        return len(self.windows) - 1

    def T_at(self, t):
        return self.windows[self.window_for(t)].evaluate(t)

    def branch_curves(self):
        """List of ``(times, eigenvalues)`` per window."""
        return [(w.times, w.eigenvalues()) for w in self.windows]

    def to_dict(self):
        return {
            "a": self.a,
            "b": self.b,
            "h": self.h,
            "instants": [c.to_dict() for c in self.instants],
            "windows": [
                {"t_lo": w.t_lo, "t_hi": w.t_hi, "t0": w.t0, "min_gap": w.min_gap}
                for w in self.windows
            ],
            "quality": self.quality,
        }


# -- windows ------------------------------------------------------------------


def _vertical(n):
    return np.vstack([np.zeros((n, n)), np.eye(n)])


def _orthonormal_stack(F):
    Q, R = np.linalg.qr(F)
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    return Q * d[..., None, :]


def _system_windows(sol: FundamentalSolution, tol: Tolerance, seed, chunk=512):
    n = sol.n
    F0 = _vertical(n)
    frames = _orthonormal_stack(symplectic_inverse(sol.Phi)[..., :, n:])
    N = len(sol.times) - 1
    windows = []
    i0 = 0
    L0 = Lagrangian(F0, check=False)

    def make_eval(L1frame):
        def evaluate(t):
            F = symplectic_inverse(sol.at(t))[:, n:]
            return -chart_matrix(F0, L1frame, F)

        return evaluate

    while True:
        L1 = common_transversal(L0, Lagrangian(frames[i0], check=False), seed=seed + len(windows), tol=tol)
        g0 = np.linalg.svd(np.hstack([frames[i0], L1.frame]), compute_uv=False)[-1]
        thr = max(2.0 * tol.gap_tol, REANCHOR_RATIO * g0)
        i1 = N
        start = i0 + 1
        gaps_all = [np.array([g0])]
        while start <= N:
            stop = min(start + chunk, N + 1)
            M = np.concatenate([frames[start:stop], np.broadcast_to(L1.frame, (stop - start,) + L1.frame.shape)], axis=-1)
            g = np.linalg.svd(M, compute_uv=False)[:, -1]
            bad = np.nonzero(g < thr)[0]
            if bad.size:
                i1 = max(start + bad[0] - 1, i0 + 1)
                gaps_all.append(g[: max(bad[0], 1)])
                break
            gaps_all.append(g)
            start = stop
        sl = slice(i0, i1 + 1)
        T = -chart_matrix(F0, L1.frame, frames[sl])
        gaps = np.concatenate(gaps_all)
        windows.append(
            ChartWindow(
                float(sol.times[i0]), float(sol.times[i1]), float(sol.times[i0]), L1,
                sol.times[sl].copy(), T, make_eval(L1.frame), float(np.min(gaps)),
            )
        )
        if i1 >= N:
            break
        i0 = i1
    return windows


def _curve_window(curve: OperatorCurve, h):
    times = make_grid(curve.a, curve.b, h)
    T = curve(times)
    return [ChartWindow(curve.a, curve.b, curve.a, None, times, T, lambda t: curve(float(t)))]


# -- roots ----------------------------------------------------------------------


def _branch_roots(w: ChartWindow):
    lam = w.eigenvalues()
    roots = []
    descending = 0
    for k in range(lam.shape[1]):
        up = np.nonzero((lam[:-1, k] < 0) & (lam[1:, k] >= 0))[0]
        down = np.nonzero((lam[:-1, k] > 0) & (lam[1:, k] <= 0))[0]
        descending += int(down.size)
        for j in np.concatenate([up, down]):
            lo, hi = float(w.times[j]), float(w.times[j + 1])

            def f(t, k=k):
                return float(np.linalg.eigvalsh(w.evaluate(t))[k])

            flo, fhi = f(lo), f(hi)
            if flo == 0.0:
                r = lo
            elif fhi == 0.0:
                r = hi
            elif flo * fhi > 0:
                # the dense evaluation disagrees with the node cache; take the node root
                r = hi
            else:
                r = brentq(f, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)
            roots.append((r, k))
    roots.sort()
    return roots, descending


def _cluster(roots, radius=MERGE_RADIUS):
    clusters = []
    for r, k in roots:
        if clusters and r - clusters[-1][-1][0] <= radius:
            clusters[-1].append((r, k))
        else:
            clusters.append([(r, k)])
    return clusters


def _e_kernel(sol: FundamentalSolution, t, mult, tol: Tolerance):
    """Kernel dimension and kernel vectors of ``(t - a) E_t``."""
    n = sol.n
    P = sol.at(t)
    U, s, Vt = np.linalg.svd(P[:n, n:])
    scale = max(1.0, np.linalg.norm(P, 2))
    kdim = int(np.count_nonzero(s <= tol.kernel_tol * scale))
    return kdim, Vt[n - max(mult, 1):].T


def detect(X, h=1e-3, tol: Tolerance = DEFAULT_TOL, seed=0, drift_bound=1e-8, check_positive=True):
    """Conjugate instants on ``(a, b)``.

    ``X`` is a :class:`SymplecticSystemSpec`, an already integrated
    :class:`FundamentalSolution`, or an :class:`OperatorCurve` (whose
    zeros of ``T`` are reported directly).
    """
    sol = None
    if isinstance(X, OperatorCurve):
        windows = _curve_window(X, h)
        a, b = X.a, X.b
    else:
        if isinstance(X, FundamentalSolution):
            sol = X
        else:
            if check_positive and not X.is_positive(make_grid(X.a, X.b, h), tol):
                raise NonPositiveSystemError("detect needs a positive system")
            sol = integrate(X, h, drift_bound=drift_bound)
        windows = _system_windows(sol, tol, seed)
        a, b = sol.system.a, sol.system.b
        h = sol.h

    found = []
    descending = 0
    collisions = []
    for wi, w in enumerate(windows):
        roots, desc = _branch_roots(w)
        descending += desc
        for cl in _cluster(roots):
            ts = np.array([r for r, _ in cl])
            found.append((float(np.mean(ts)), len(cl), [k for _, k in cl], wi, float(np.ptp(ts))))
            if len(cl) > 1 and np.ptp(ts) > 0:
                collisions.append({"t": float(np.mean(ts)), "branches": [k for _, k in cl],
                                   "spread": float(np.ptp(ts))})

    # windows share their boundary node; keep one instant per location
    found.sort()
    merged = []
    for item in found:
        if merged and item[0] - merged[-1][0] <= MERGE_RADIUS and item[3] != merged[-1][3]:
            if item[1] > merged[-1][1]:
                merged[-1] = item
        else:
            merged.append(item)

    instants = []
    for t, mult, branches, wi, spread in merged:
        if t <= a:
            continue
        T = windows[wi].evaluate(t)
        lam, V = np.linalg.eigh(T)
        kd = int(np.count_nonzero(np.abs(lam) <= tol.kernel_tol))
        near = [float(x) for x in lam if abs(x) < tol.gap_tol]
        kind = "monoconjugate" if len(near) <= mult else "cluster-flagged"
        inst = ConjugateInstant(t, mult, branches, kind, near, wi, kd, spread=spread)
        if sol is not None:
            ekd, vecs = _e_kernel(sol, t, mult, tol)
            inst.e_kernel_dim = ekd
            inst.cross_validated = ekd == mult
            inst.kernel_vectors = vecs
        else:
            order = np.argsort(np.abs(lam))[:mult]
            inst.kernel_vectors = V[:, order]
        instants.append(inst)

    quality = {
        "n_windows": len(windows),
        "min_transversality_gap": float(min(w.min_gap for w in windows)),
        "descending_crossings": descending,
        "collisions": collisions,
        "cross_validation_ok": all(c.cross_validated is not False for c in instants),
    }
    if sol is not None:
        quality["symplectic_drift"] = sol.drift
        guard = _guard(sol.system, sol.times)
        quality["delta_guard"] = guard
        quality["guard_ok"] = not any(a < c.t < a + guard for c in instants)
    return ConjugateReport(instants, windows, float(a), float(b), float(h), quality, sol)


def _guard(X: SymplecticSystemSpec, times):
    """Heuristic radius ``min eig B(a) / (4 max ||C||)`` free of instants."""
    bmin = float(np.linalg.eigvalsh(X.blocks(X.a)[1])[0])
    C = X.blocks(times)[2]
    cmax = float(np.max(np.linalg.norm(C, 2, axis=(-2, -1))))
    if cmax == 0.0:
        return float(X.b - X.a)
    return min(bmin / (4.0 * cmax), float(X.b - X.a))


# -- Morse flow ---------------------------------------------------------------


@dataclass
class MorseFlow:
    times: np.ndarray
    index: np.ndarray
    jumps: list
    violations: list

    @property
    def ok(self):
        return not self.violations


def _index(T, tol):
    return int(np.count_nonzero(np.linalg.eigvalsh(T) < -tol.kernel_tol))


def morse_flow(report: ConjugateReport, tol: Tolerance = DEFAULT_TOL, delta=None) -> MorseFlow:
    """Index profile ``t -> morse_index(T(t))`` and its jumps at detected instants.

    Each jump is checked against the kernel dimension of ``T`` at the
    instant: the index must drop by exactly that amount across ``t*`` and
    be right-continuous there.
    """
    delta = 10.0 * report.h if delta is None else delta
    ts = np.concatenate([w.times for w in report.windows])
    idx = np.concatenate([np.count_nonzero(w.eigenvalues() < -tol.kernel_tol, axis=1) for w in report.windows])
    all_t = report.times
    jumps, violations = [], []
    for i, c in enumerate(report.instants):
        w = report.windows[c.window]
        d = delta
        if i > 0:
            d = min(d, 0.5 * (c.t - all_t[i - 1]))
        if i + 1 < len(all_t):
            d = min(d, 0.5 * (all_t[i + 1] - c.t))
        d = min(d, c.t - w.t_lo, w.t_hi - c.t) if w.t_hi > c.t else min(d, c.t - w.t_lo)
        before = _index(w.evaluate(c.t - d), tol)
        at = _index(w.evaluate(c.t), tol)
        after = _index(w.evaluate(c.t + d), tol) if c.t + d <= report.b else at
        kd = _kernel_dim(w.evaluate(c.t), tol)
        jump = before - after
        jumps.append((c.t, jump))
        if after != at or before != at + kd:
            violations.append({"t": c.t, "before": before, "at": at, "after": after,
                               "kernel_dim": kd, "delta": d})
    return MorseFlow(ts, idx, jumps, violations)


def _kernel_dim(T, tol):
    return int(np.count_nonzero(np.abs(np.linalg.eigvalsh(T)) <= tol.kernel_tol))


def isolation_check(report: ConjugateReport, tol: Tolerance = DEFAULT_TOL, radius=None, samples=8) -> bool:
    """True iff ``T`` is invertible at sampled points of a punctured
    neighborhood (default radius two grid steps) of every instant."""
    radius = 2.0 * report.h if radius is None else radius
    offsets = radius * np.arange(1, samples + 1) / samples
    for c in report.instants:
        w = report.windows[c.window]
        for s in np.concatenate([-offsets, offsets]):
            t = c.t + s
            if t <= report.a or t > report.b:
                continue
            if np.min(np.abs(np.linalg.eigvalsh(w.evaluate(t)))) < tol.kernel_tol:
                return False
    return True


# -- truncation studies -------------------------------------------------------


@dataclass
class TruncationStudy:
    dims: list
    reports: dict
    probes: list
    eps_grid: list
    near_zero: dict  # (N, probe, eps) -> count
    probe_kernel: dict  # (N, probe) -> kernel_dim
    last_gap: dict  # N -> gap between the last two instants
    window_max_gap: dict  # (N, probe) -> max gap between consecutive instants near the probe
    verdict: dict  # probe -> label

    def gap_exponent(self):
        """Least-squares slope of ``log(last_gap)`` against ``log(N)``."""
        Ns = [N for N in self.dims if np.isfinite(self.last_gap[N])]
        if len(Ns) < 2:
            return float("nan")
        x = np.log(Ns)
        y = np.log([self.last_gap[N] for N in Ns])
        return float(np.polyfit(x, y, 1)[0])

    def to_dict(self):
        return {
            "dims": list(self.dims),
            "probes": list(self.probes),
            "eps_grid": list(self.eps_grid),
            "instants": {str(N): self.reports[N].times for N in self.dims},
            "near_zero": [
                {"N": N, "probe": p, "eps": e, "count": c} for (N, p, e), c in sorted(self.near_zero.items())
            ],
            "probe_kernel": [{"N": N, "probe": p, "kernel_dim": k} for (N, p), k in sorted(self.probe_kernel.items())],
            "last_gap": {str(N): g for N, g in self.last_gap.items()},
            "window_max_gap": [
                {"N": N, "probe": p, "gap": g} for (N, p), g in sorted(self.window_max_gap.items())
            ],
            "gap_exponent": self.gap_exponent(),
            "verdict": {str(p): v for p, v in self.verdict.items()},
        }


def truncation_study(family, dims, probes, eps_grid, h=1e-3, tol: Tolerance = DEFAULT_TOL,
                     probe_window=0.1, workers=1) -> TruncationStudy:
    """Run :func:`detect` for each truncation size and collect accumulation diagnostics.

    The verdict at a probe is ``"strictly-epiconjugate (truncation surrogate)"``
    when the smallest-epsilon near-zero count strictly increases with ``N``
    while the kernel dimension at the probe stays put; otherwise
    ``"no accumulation observed"``.
    """
    dims = [int(N) for N in dims]
    if any(b <= a for a, b in zip(dims, dims[1:])):
        raise PreconditionError("dims must be strictly increasing")

    def run(N):
        return N, detect(family(N), h=h, tol=tol)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            reports = dict(ex.map(run, dims))
    else:
        reports = dict(map(run, dims))

    near_zero, probe_kernel, last_gap, window_gap = {}, {}, {}, {}
    for N in dims:
        rep = reports[N]
        ts = rep.times
        last_gap[N] = ts[-1] - ts[-2] if len(ts) >= 2 else float("inf")
        for p in probes:
            lam = np.abs(np.linalg.eigvalsh(rep.T_at(p)))
            for e in eps_grid:
                near_zero[(N, p, e)] = int(np.count_nonzero(lam < e))
            probe_kernel[(N, p)] = int(np.count_nonzero(lam <= tol.kernel_tol))
            near = [t for t in ts if abs(t - p) <= probe_window]
            window_gap[(N, p)] = float(np.max(np.diff(near))) if len(near) >= 2 else float("inf")

    verdict = {}
    e0 = min(eps_grid)
    for p in probes:
        counts = [near_zero[(N, p, e0)] for N in dims]
        kernels = {probe_kernel[(N, p)] for N in dims}
        growing = len(counts) >= 2 and all(b > a for a, b in zip(counts, counts[1:]) if a > 0) and counts[-1] > counts[0]
        if growing and len(kernels) == 1:
            verdict[p] = "strictly-epiconjugate (truncation surrogate)"
        else:
            verdict[p] = "no accumulation observed"
    return TruncationStudy(dims, reports, list(probes), list(eps_grid), near_zero, probe_kernel,
                           last_gap, window_gap, verdict)
