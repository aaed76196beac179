import math

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from conjflow.conjugate import detect
from conjflow.construct import (
    LagrangianCurve,
    SingularityPrescription,
    build_operator,
    curve_to_xi,
    extend_xi,
    full_pipeline,
    prescribed_curve,
    realize_metric,
    theta,
    theta_inv,
    xi_to_system,
)
from conjflow.errors import BudgetError, PreconditionError
from conjflow.symplectic import Lagrangian, chart, complex_structure, pair_defect
from conjflow.system import Constant, integrate, lagrangian_curve, riemannian_reduce, riemannian_system

from factories import flat, random_positive_system


def rotation_curve(b=2.0):
    """exp(tJ)(L0) for n = 1: frame (-sin t, cos t)."""
    return LagrangianCurve(
        lambda t: np.stack([-np.sin(t), np.cos(t)], axis=-1)[..., None],
        lambda t: np.stack([-np.cos(t), -np.sin(t)], axis=-1)[..., None],
        0.0, b, 1,
    )


def test_theta_roundtrip():
    assert theta(0.0, 0.0) == 0.0
    s = np.linspace(0.0, 0.99, 50)
    assert np.allclose(theta(theta_inv(s, 0.3), 0.3), s)
    t = np.linspace(0, 50, 200)
    assert np.all(np.diff(theta(t, 0.0)) > 0)


def test_prescription_validation():
    with pytest.raises(PreconditionError):
        SingularityPrescription(points=[0.3, 0.3], multiplicities=[1, 1])
    with pytest.raises(PreconditionError):
        SingularityPrescription(points=[1.2], multiplicities=[1])
    with pytest.raises(PreconditionError):
        SingularityPrescription(points=[0.3], multiplicities=[0])
    with pytest.raises(PreconditionError):
        SingularityPrescription(intervals=[(0.4, 0.2)])
    p = SingularityPrescription(points=[0.7], multiplicities=["inf"], intervals=[(0.2, 0.4)], cap=4)
    assert SingularityPrescription.from_dict(p.to_dict()) == p


def test_build_operator_examples():
    op = build_operator(SingularityPrescription(points=[0.3, 0.5], multiplicities=[1, 2]))
    assert np.array_equal(op.diagonal, [0.3, 0.5, 0.5])
    op = build_operator(SingularityPrescription(intervals=[(0.2, 0.4)], density=25.0))
    assert np.allclose(op.diagonal, [0.2, 0.25, 0.3, 0.35, 0.4])
    assert op.provenance == ["continuum sample"] * 5
    p = SingularityPrescription(points=[0.7], multiplicities=[math.inf], intervals=[(0.2, 0.4)], cap=4, density=25.0)
    op = build_operator(p)
    assert np.count_nonzero(op.diagonal == 0.7) == 4
    assert op.n == 9
    assert op.flags[0]["flag"] == "capped infinity"


def test_build_operator_budget():
    p = SingularityPrescription(points=[0.3, 0.5], multiplicities=[3, 3], budget=5)
    with pytest.raises(BudgetError) as info:
        build_operator(p)
    assert (info.value.required, info.value.available) == (6, 5)


def test_prescribed_curve_examples():
    p = SingularityPrescription(points=[0.3], multiplicities=[1])
    T = prescribed_curve(p, np.diag([0.3]))
    assert T(0.3)[0, 0] == 0.0
    assert np.array_equal(T.derivative(0.7), np.eye(1))
    q = SingularityPrescription(b=math.inf, points=[0.5], multiplicities=[1])
    T = prescribed_curve(q, np.diag([0.5]), b_eff=3.0)
    assert T(0.0)[0, 0] == -0.5
    assert T.derivative(np.array([0.0, 2.0]))[:, 0, 0] == pytest.approx([1.0, 1 / 9])
    rep = detect(T)
    assert rep.times == pytest.approx([1.0], abs=1e-10)


def test_detector_on_prescribed_curve():
    p = SingularityPrescription(points=[0.3, 0.5], multiplicities=[1, 2])
    rep = detect(prescribed_curve(p, build_operator(p).A))
    assert rep.multiplicities == [1, 2]
    assert np.allclose(rep.times, [0.3, 0.5], atol=1e-12)


def test_curve_to_xi_stage_isolation():
    p = SingularityPrescription(points=[0.3, 0.5], multiplicities=[1, 2])
    T = prescribed_curve(p, build_operator(p).A)
    xi = curve_to_xi(T)
    L0, L1 = Lagrangian.vertical(3), Lagrangian.horizontal(3)
    for t in (0.1, 0.3, 0.77):
        assert np.abs(chart(L0, L1, xi.at(t)) + T(t)).max() <= 1e-10
        # tangent congruent to -T': same inertia, all negative
        assert np.linalg.eigvalsh(xi.tangent(t))[-1] < 0
    T0 = prescribed_curve(p, 0.0 * build_operator(p).A)
    assert pair_defect(curve_to_xi(T0).at(0.0), L0) == (3, 3)


def test_xi_tangent_of_curve_is_congruent_to_minus_derivative():
    p = SingularityPrescription(points=[0.3], multiplicities=[1])
    T = prescribed_curve(p, np.diag([0.3]))
    xi = curve_to_xi(T)
    t = 0.6
    # frame [-T; 1] = Q R, tangent in Q coordinates is R^-T (-T') R^-1
    F = xi.frame(t)
    _, R = np.linalg.qr(F)
    expected = -np.linalg.inv(R).T @ T.derivative(t) @ np.linalg.inv(R)
    assert xi.tangent(t) == pytest.approx(expected)


@pytest.mark.parametrize("points", [[0.3, 0.5], [0.12, 0.44, 0.87], []])
def test_extend_xi_postconditions(points):
    p = SingularityPrescription(points=points, multiplicities=[1] * len(points))
    T = prescribed_curve(p, build_operator(p).A)
    xi = extend_xi(T, -0.5)
    checks = xi.meta["checks"]
    assert checks["sigma_at_a"] == 0.0
    assert checks["sigma_max_eig"] < 0
    assert checks["tau_max_eig"] < 0
    assert checks["value_match"] <= 1e-8
    assert checks["derivative_match"] <= 1e-8 * (1 + np.abs(T.derivative(0.0)).max())
    n = T.n
    L0 = Lagrangian.vertical(n)
    assert pair_defect(xi.at(-0.5), L0) == (n, n)
    for t in np.linspace(-0.49, 0.0, 9):
        assert pair_defect(xi.at(t), L0) == (0, 0)
    # the glued curve agrees with the original on [c, b)
    for t in (0.0, 0.25, 0.9):
        assert np.max(subspace_angles(xi.frame(t), curve_to_xi(T).frame(t))) <= 1e-12
    # and is continuous with matching derivative across c
    e = 1e-7
    assert np.max(subspace_angles(xi.frame(-e), xi.frame(e))) <= 1e-6


def test_extend_xi_requires_transversal_start():
    p = SingularityPrescription(c=0.0, points=[0.3], multiplicities=[1])
    T = prescribed_curve(p, np.diag([0.0]))
    with pytest.raises(PreconditionError):
        extend_xi(T, -0.5)


def test_xi_to_system_rotation():
    # the lifting psi' = J P psi of exp(tJ)(L0) is psi = exp(tJ) [[1, 0], [-t, 1]],
    # so X = [[-t, 1], [-t^2, t]]; reduction turns it into the constant system C = -1
    X = xi_to_system(rotation_curve(), h=1e-3)
    for t in (0.0, 0.8, 1.9):
        A, B, C = X.blocks(t)
        assert A[0, 0] == pytest.approx(-t, abs=1e-8)
        assert B[0, 0] == pytest.approx(1.0, abs=1e-8)
        assert C[0, 0] == pytest.approx(-t * t, abs=1e-8)
    assert X.lifting_drift <= 1e-6
    Xr, _ = riemannian_reduce(X, 1e-3)
    for t in (0.3, 1.2, 1.9):
        assert Xr.blocks(t)[2][0, 0] == pytest.approx(-1.0, abs=1e-7)
    rep = detect(Xr, h=1e-3)
    assert rep.instants == []  # pi lies beyond the horizon 2


def test_xi_to_system_roundtrip_from_riemannian_curve():
    # xi of the harmonic system with curvature -4, n = 2
    Xs = riemannian_system(Constant(-4.0 * np.eye(2)), 0.0, 1.0)
    P = integrate(Xs, 1e-3)
    J = complex_structure(2)

    def frame(t):
        t = np.asarray(t, dtype=np.float64)
        c, s = np.cos(2 * t), np.sin(2 * t)
        # Phi_t^{-1} [0; 1] for v'' = -4 v
        top = -(s / 2)[..., None, None] * np.eye(2)
        bot = c[..., None, None] * np.eye(2)
        return np.concatenate([top, bot], axis=-2)

    def dframe(t):
        t = np.asarray(t, dtype=np.float64)
        c, s = np.cos(2 * t), np.sin(2 * t)
        return np.concatenate([-c[..., None, None] * np.eye(2), -2 * s[..., None, None] * np.eye(2)], axis=-2)

    xi = LagrangianCurve(frame, dframe, 0.0, 1.0, 2)
    X = xi_to_system(xi, h=1e-3)
    assert X.is_positive(np.linspace(0, 1, 11))
    for t in (0.25, 0.5, 0.99):
        M = X.matrix(t)
        assert np.abs(M.T @ J + J @ M).max() <= 1e-8
    Q = integrate(X, 1e-3)
    for t in (0.3, 0.7, 1.0):
        assert np.max(subspace_angles(lagrangian_curve(Q, t).frame, lagrangian_curve(P, t).frame)) <= 1e-6


def test_realize_metric_flat():
    sc = realize_metric(flat(2, 1.0))
    p = np.array([0.3, -0.2, 0.5])
    assert sc.omega(p) == 0.0
    assert np.array_equal(sc.metric(p), np.eye(3))
    with pytest.raises(PreconditionError):
        realize_metric(random_positive_system(2, np.random.default_rng(0)))


def test_metric_christoffel_and_geodesic():
    R = Constant(np.array([[-2.0, 0.5], [0.5, -1.0]]))
    sc = realize_metric(riemannian_system(R, 0.0, 2.0))
    for t in (0.1, 0.9, 1.7):
        p = np.array([0.0, 0.0, t])
        assert np.abs(sc.christoffel_fd(p)).max() <= 1e-6
        assert np.abs(sc.christoffel(p)).max() == 0.0
    off = np.array([0.2, -0.1, 0.5])
    assert np.allclose(sc.christoffel_fd(off), sc.christoffel(off), atol=1e-7)
    assert sc.axis_deviation(1.0) <= 1e-6
    J = sc.jacobi_operator_fd(1.0)
    assert np.linalg.norm(J - R(1.0)) <= 2e-3 * np.linalg.norm(R(1.0))


def test_full_pipeline_example():
    p = SingularityPrescription(points=[0.3, 0.5], multiplicities=[1, 2])
    res = full_pipeline(p, a=-0.5)
    assert res.matched
    assert res.report.multiplicities == [1, 2]
    assert np.allclose(res.report.times, [0.3, 0.5], atol=1e-6)
    assert res.metadata["instants_in_extension"] == []
    assert all(c.provenance == "point" for c in res.report.instants)
    assert res.report.quality["symplectic_drift"] <= 1e-8


def test_full_pipeline_empty():
    res = full_pipeline(SingularityPrescription(), a=-0.5)
    assert res.report.instants == []
    assert res.matched
    assert res.metadata["operator_flags"][0]["flag"] == "padded"


def test_full_pipeline_interval_samples():
    p = SingularityPrescription(intervals=[(0.2, 0.4)], density=25.0)
    res = full_pipeline(p, a=-0.5)
    assert res.matched
    assert np.allclose(res.report.times, [0.2, 0.25, 0.3, 0.35, 0.4], atol=1e-6)
    assert all(c.provenance == "continuum sample" for c in res.report.instants)


def test_full_pipeline_infinite_horizon():
    p = SingularityPrescription(b=math.inf, points=[0.5, 0.75], multiplicities=[1, 1])
    res = full_pipeline(p, a=-0.5)
    assert res.matched
    assert np.allclose(res.report.times, [1.0, 3.0], atol=1e-6)


def test_reduced_pipeline_metric_consistency():
    p = SingularityPrescription(points=[0.3, 0.6], multiplicities=[1, 2])
    res = full_pipeline(p, a=-0.5)
    sc = res.scenario
    for t in (-0.3, 0.2, 0.45):
        J = sc.jacobi_operator_fd(t)
        R = sc.R(t)
        assert np.linalg.norm(J - R) <= 2e-3 * max(np.linalg.norm(R), 1.0)
