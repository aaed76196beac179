import numpy as np
import pytest
from scipy.linalg import subspace_angles

from conjflow.errors import IntegrationQualityError, NonPositiveSystemError, PreconditionError
from conjflow.linalg_core import kernel_dim
from conjflow.symplectic import Lagrangian, complex_structure, is_lagrangian, pair_defect
from conjflow.system import (
    Constant,
    DiagonalProfile,
    GaugeCurve,
    Polynomial,
    SymplecticSystemSpec,
    Tabulated,
    assemble,
    exp_differential,
    gauge_transform,
    integrate,
    lagrangian_curve,
    make_grid,
    riemannian_reduce,
    riemannian_system,
    xi_tangent,
)

from factories import flat, random_positive_system, sphere


def test_assemble_examples():
    X = flat(2, 1.0)
    assert np.array_equal(assemble(X, 0.3), np.block([[np.zeros((2, 2)), np.eye(2)], [np.zeros((2, 2)), np.zeros((2, 2))]]))
    R = np.array([[-1.0, 0.2], [0.2, -3.0]])
    X = riemannian_system(Constant(R), 0.0, 1.0)
    assert np.array_equal(assemble(X, 0.5), np.block([[np.zeros((2, 2)), np.eye(2)], [R, np.zeros((2, 2))]]))
    X = SymplecticSystemSpec(1, 0.0, 1.0, Constant([[1.0]]), Constant([[0.0]]), Constant([[0.0]]))
    assert np.array_equal(assemble(X, 0.0), [[1.0, 0.0], [0.0, -1.0]])


def test_assemble_errors():
    X = flat(1, 1.0)
    with pytest.raises(PreconditionError):
        assemble(X, 1.5)
    with pytest.raises(PreconditionError):
        assemble(X, [0.1, 0.2])


def test_assemble_is_in_sp():
    X = random_positive_system(4, np.random.default_rng(0))
    J = complex_structure(4)
    for t in np.linspace(X.a, X.b, 7):
        M = assemble(X, t)
        assert np.abs(M.T @ J + J @ M).max() <= 1e-12


def test_components_and_derivatives():
    rng = np.random.default_rng(1)
    comps = [
        Polynomial([rng.standard_normal((2, 2)) for _ in range(3)], 0.5),
        DiagonalProfile([1.0, 2.0], [0.3, 0.1], [2.0, 5.0], [0.0, 1.0]),
        Tabulated(np.linspace(0, 1, 41), np.sin(np.linspace(0, 1, 41))[:, None, None] * np.eye(2)),
    ]
    e = 1e-6
    for c in comps:
        for t in (0.2, 0.61):
            fd = (c(t + e) - c(t - e)) / (2 * e)
            assert np.allclose(c.derivative(t), fd, atol=1e-7)
        stack = c(np.array([0.2, 0.61]))
        assert stack.shape == (2, 2, 2)
        assert np.allclose(stack[1], c(0.61))


def test_system_roundtrip_dict():
    X = random_positive_system(2, np.random.default_rng(2))
    Y = SymplecticSystemSpec.from_dict(X.to_dict())
    for t in (0.0, 1.3, 3.0):
        assert np.array_equal(X.matrix(t), Y.matrix(t))


def test_positivity_flag():
    X = random_positive_system(3, np.random.default_rng(3))
    assert X.is_positive(np.linspace(X.a, X.b, 50))
    Y = SymplecticSystemSpec(1, 0.0, 1.0, Constant([[0.0]]), Constant([[-1.0]]), Constant([[0.0]]))
    assert not Y.is_positive([0.0, 1.0])


def test_make_grid():
    g = make_grid(0.0, 1.0, 0.25)
    assert np.allclose(g, [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(PreconditionError):
        make_grid(0.0, 1.0, 0.3)
    with pytest.raises(PreconditionError):
        make_grid(0.0, 1.0, -0.1)


def test_integrate_flat_closed_form():
    h = 1e-2
    P = integrate(flat(2, 4.0), h)
    assert np.array_equal(P.Phi[0], np.eye(4))
    for i, t in enumerate(P.times):
        exact = np.block([[np.eye(2), t * np.eye(2)], [np.zeros((2, 2)), np.eye(2)]])
        assert np.abs(P.Phi[i] - exact).max() <= 5 * h**4 * max(t, 1.0)


def test_integrate_harmonic_closed_form():
    P = integrate(sphere(1, 1.0, 6.0), 1e-3)
    for t in (0.5, 2.0, 5.9, 6.0):
        M = P.at(t)
        exact = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
        assert np.abs(M - exact).max() <= 1e-10


def test_dense_output_between_nodes():
    P = integrate(sphere(1, 1.0, 2.0), 1e-2)
    t = 1.2345
    exact = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    assert np.abs(P.at(t) - exact).max() <= 1e-8


@pytest.mark.parametrize("n", [1, 4, 16])
def test_symplectic_drift(n):
    rng = np.random.default_rng(n)
    P = integrate(sphere(n, 1.0, 10.0), 1e-3)
    assert P.drift <= 1e-8
    X = random_positive_system(min(n, 6), rng, b=3.0)
    assert integrate(X, 1e-3).drift <= 1e-8


def test_drift_bound_raises():
    with pytest.raises(IntegrationQualityError) as info:
        integrate(sphere(2, 400.0, 10.0), 0.05, drift_bound=1e-8)
    assert info.value.profile is not None


def test_reprojection_keeps_drift_small():
    P = integrate(sphere(2, 25.0, 10.0), 1e-2, drift_bound=None, reproject=True)
    assert P.drift <= 1e-10


def test_lagrangian_curve_examples():
    P = integrate(flat(2, 2.0), 1e-3)
    L = lagrangian_curve(P, 0.0)
    assert pair_defect(L, Lagrangian.vertical(2)) == (2, 2)
    for t in (0.5, 1.7):
        L = lagrangian_curve(P, t)
        assert is_lagrangian(L.frame)
        expected = np.vstack([-t * np.eye(2), np.eye(2)])
        assert np.max(subspace_angles(L.frame, expected)) <= 1e-10


def test_exp_differential_examples():
    P = integrate(flat(2, 2.0), 1e-3)
    assert np.allclose(exp_differential(P, 1.3), np.eye(2), atol=1e-12)
    P = integrate(sphere(1, 1.0, 4.0), 1e-3)
    for t in (0.5, 2.0, 3.5):
        assert exp_differential(P, t)[0, 0] == pytest.approx(np.sin(t) / t, abs=1e-10)
    with pytest.raises(PreconditionError):
        exp_differential(P, 0.0)


def test_exp_differential_kernel_law():
    P = integrate(sphere(2, 1.0, 4 * np.pi / 3), np.pi / 3000)
    for t in (1.0, np.pi, 4.0):
        E = exp_differential(P, t)
        inter, codim = pair_defect(lagrangian_curve(P, t), Lagrangian.vertical(2))
        assert kernel_dim(E) == inter == codim


def test_no_instants_right_after_start():
    rng = np.random.default_rng(4)
    X = random_positive_system(3, rng)
    P = integrate(X, 1e-3)
    ratios = [np.linalg.svd(P.at(s)[:3, 3:], compute_uv=False)[-1] / s for s in (1e-3, 1e-2, 5e-2)]
    assert min(ratios) > 0.1


def test_xi_tangent_examples():
    rng = np.random.default_rng(5)
    X = random_positive_system(3, rng)
    P = integrate(X, 1e-3)
    H = xi_tangent(P, X.a)
    Q = lagrangian_curve(P, X.a).frame[3:]
    assert np.allclose(H, -Q.T @ X.blocks(X.a)[1] @ Q, atol=1e-6)
    Ps = integrate(sphere(2, 1.0, 6.0), 1e-3)
    for t in (0.5, 2.0, 4.0):
        assert np.linalg.eigvalsh(xi_tangent(Ps, t))[-1] < 0


def test_xi_tangent_flat_matches_analytic():
    P = integrate(flat(2, 2.0), 1e-3)
    t = 0.8
    F = np.vstack([-t * np.eye(2), np.eye(2)])
    Q, R = np.linalg.qr(F)
    # d/dt of span[-t; 1] in frame coordinates: R^-T (F^T J F') R^-1
    Fd = np.vstack([-np.eye(2), np.zeros((2, 2))])
    Ri = np.linalg.inv(R)
    exact = Ri.T @ (F.T @ complex_structure(2) @ Fd) @ Ri
    L = lagrangian_curve(P, t)
    U = Q.T @ L.frame  # change between the two orthonormal frames
    assert np.allclose(xi_tangent(P, t), U.T @ exact @ U, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_tangent_identity_on_random_positive_systems(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 7))
    X = random_positive_system(n, rng)
    P = integrate(X, 1e-3)
    for t in rng.uniform(X.a, X.b, 3):
        H = xi_tangent(P, t)
        U = (P.at(t) @ lagrangian_curve(P, t).frame)[n:]
        M = U.T @ X.blocks(t)[1] @ U
        assert np.linalg.norm(H + M) <= 1e-4 * np.linalg.norm(M)


def test_gauge_identity_and_scalar_examples():
    X = random_positive_system(2, np.random.default_rng(6), b=1.0)
    Y = gauge_transform(X, GaugeCurve.identity(2), 1e-2)
    for t in (0.0, 0.37, 1.0):
        assert np.allclose(X.matrix(t), Y.matrix(t), atol=1e-9)
    X = SymplecticSystemSpec(2, 0.0, 1.0, Constant(np.zeros((2, 2))), Constant(4 * np.eye(2)), Constant(np.zeros((2, 2))))
    g = GaugeCurve(Constant(0.5 * np.eye(2)), Constant(np.zeros((2, 2))))
    Y = gauge_transform(X, g, 1e-2)
    assert np.allclose(Y.blocks(0.5)[1], np.eye(2))


def test_gauge_singular_raises():
    X = flat(2, 1.0)
    g = GaugeCurve(Constant(np.diag([1.0, 0.0])), Constant(np.zeros((2, 2))))
    with pytest.raises(PreconditionError):
        gauge_transform(X, g, 1e-2)


def test_gauge_relates_fundamental_solutions():
    rng = np.random.default_rng(7)
    X = random_positive_system(3, rng, b=2.0)
    Z = Polynomial([np.eye(3) + 0.1 * rng.standard_normal((3, 3)), 0.2 * rng.standard_normal((3, 3))])
    W = Polynomial([np.zeros((3, 3)), 0.5 * (lambda M: M + M.T)(rng.standard_normal((3, 3)))])
    g = GaugeCurve(Z, W)
    h = 1e-3
    P, Pt = integrate(X, h), integrate(gauge_transform(X, g, h), h)
    phi = g.phi(P.times)
    J = complex_structure(3)
    assert np.abs(np.swapaxes(phi, 1, 2) @ J @ phi - J).max() <= 1e-8
    pred = phi @ P.Phi @ np.linalg.inv(phi[0])
    assert np.linalg.norm(Pt.Phi - pred, axis=(1, 2)).max() <= 1e-6


def test_riemannian_reduce_examples():
    X = sphere(2, 1.0, 1.0)
    Xr, g = riemannian_reduce(X, 1e-2)
    assert Xr is X
    assert np.allclose(g.phi(0.3), np.eye(4))
    C = np.array([[1.0, 0.5], [0.5, -2.0]])
    X = SymplecticSystemSpec(2, 0.0, 1.0, Constant(np.zeros((2, 2))), Constant(4 * np.eye(2)), Constant(C))
    Xr, _ = riemannian_reduce(X, 1e-2)
    assert np.allclose(Xr.blocks(0.4)[2], 4 * C, atol=1e-9)


def test_riemannian_reduce_rejects_nonpositive():
    X = SymplecticSystemSpec(1, 0.0, 1.0, Constant([[0.0]]), Constant([[-1.0]]), Constant([[0.0]]))
    with pytest.raises(NonPositiveSystemError):
        riemannian_reduce(X, 1e-2)


@pytest.mark.parametrize("seed", range(3))
def test_riemannian_reduce_random(seed):
    rng = np.random.default_rng(200 + seed)
    X = random_positive_system(int(rng.integers(1, 5)), rng)
    h = 1e-3
    Xr, g = riemannian_reduce(X, h)
    A, B, _ = Xr.blocks(make_grid(X.a, X.b, h))
    assert np.abs(A).max() <= 1e-8 and np.abs(B - np.eye(X.n)).max() <= 1e-8
    P, Pr = integrate(X, h), integrate(Xr, h)
    phi = g.phi(P.times)
    pred = phi @ P.Phi @ np.linalg.inv(phi[0])
    assert np.linalg.norm(Pr.Phi - pred, axis=(1, 2)).max() <= 1e-6
    # gauge covariance of the Lagrangian curve
    for t in (0.9, 2.4):
        L = lagrangian_curve(P, t).image(phi[0])
        Lr = lagrangian_curve(Pr, t)
        assert np.max(subspace_angles(L.frame, Lr.frame)) <= 1e-6
