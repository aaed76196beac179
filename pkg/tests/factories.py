"""Random systems and operator paths shared by the test modules."""

import numpy as np

from conjflow.conjugate import OperatorCurve
from conjflow.linalg_core import random_spd, random_sym
from conjflow.system import Constant, Polynomial, SymplecticSystemSpec, riemannian_system


def random_positive_system(n, rng, a=0.0, b=3.0, scale=0.5):
    """Polynomial A, B, C with B uniformly positive on [a, b]."""
    A = Polynomial([rng.standard_normal((n, n)) * scale, rng.standard_normal((n, n)) * scale * 0.3], a)
    B0 = random_spd(n, rng, 0.8, 2.0)
    B1 = random_sym(n, rng, 0.3 / (b - a))
    C = Polynomial([random_sym(n, rng, 1.0) - 2.0 * np.eye(n), random_sym(n, rng, 0.5)], a)
    return SymplecticSystemSpec(n, a, b, A, Polynomial([B0, B1], a), C, label="random")


def random_riemannian_system(n, rng, a=0.0, b=4.0):
    """Riemannian system with curvature term negative on average."""
    C0 = -random_spd(n, rng, 0.5, 4.0)
    C1 = random_sym(n, rng, 0.3)
    return riemannian_system(Polynomial([C0, C1 / (b - a)], a), a, b, label="random")


def sphere(n, kappa, b, a=0.0):
    return riemannian_system(Constant(-kappa * np.eye(n)), a, b, label="sphere")


def flat(n, b, a=0.0):
    return riemannian_system(Constant(np.zeros((n, n))), a, b, label="flat")


def random_operator_path(n, rng, a=0.0, b=1.0):
    """T(t) = T0 + (t - a) D with D positive definite, so T' > 0."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    D = random_spd(n, rng, 0.5, 2.0)
    # put some spectrum of T0 inside the window so there are crossings
    T0 = random_sym(n, rng, 1.0) - 0.5 * (b - a) * D

    def fn(t):
        t = np.asarray(t, dtype=np.float64)
        return T0 + (t[..., None, None] - a) * D

    curve = OperatorCurve(fn, a, b, n, label="affine")
    curve.derivative = lambda t: np.broadcast_to(D, np.shape(t) + (n, n))
    return curve, T0, D
