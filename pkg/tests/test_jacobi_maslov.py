from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from submaslov.errors import InvalidArgument, InvalidBoundaryData, InvalidField
from submaslov.geometry import (
    FieldAlongCurve,
    MetricField,
    integrate_geodesic,
    orthonormal_basis,
    parallel_transport_frame,
    random_smooth_frame,
    rotating_frame,
)
from submaslov.jacobi_maslov import (
    BoundaryData,
    IndexFormContext,
    causal_character,
    causal_index,
    conjugate_counts,
    detect_focal_instants,
    index_form,
    jacobi_space_evaluation,
    jacobi_system,
    lagrangian_LQ,
    q_maslov_index,
    verify_index_identity,
)
from submaslov.scenarios import (
    BoxDomain,
    flat_product,
    get_scenario,
    index_identity_residuals,
    integrate_pair,
    random_admissible_field,
)
from submaslov.submersion import SubmanifoldData, lifted_boundary_shape
from submaslov.symplectic import SymmetricForm

TH, PH, T = sp.symbols("theta phi t")
SPHERE = MetricField.from_sympy(sp.diag(1, sp.sin(TH) ** 2), [TH, PH], 0,
                                domain=BoxDomain(((0.05, np.pi - 0.05), None)), name="S2")
STATIC = MetricField.from_sympy(sp.diag(-1, 1, sp.sin(TH) ** 2), [T, TH, PH], 1,
                                domain=BoxDomain((None, (0.05, np.pi - 0.05), None)), name="RxS2")
XS = sp.symbols("x0:3")
EUCLID3 = MetricField.from_sympy(sp.eye(3), XS, 0)
EUCLID2 = MetricField.from_sympy(sp.eye(2), XS[:2], 0)


def equator(b, steps=400):
    return integrate_geodesic(SPHERE, [np.pi / 2, 0.0], [0.0, 1.0], (0.0, b), steps)


def same_span(a, b, tol=1e-8):
    ra = np.linalg.matrix_rank(a, tol)
    return ra == np.linalg.matrix_rank(b, tol) == np.linalg.matrix_rank(np.hstack([a, b]), tol)


# --- L_Q -------------------------------------------------------------------


def flat_line(steps=40, b=2.0):
    return integrate_geodesic(EUCLID3, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], (0.0, b), steps)


def test_LQ_point_is_vertical():
    curve = flat_line()
    frame = parallel_transport_frame(EUCLID3, curve, np.eye(3))
    lq = lagrangian_LQ(BoundaryData.point(3), frame, EUCLID3)
    assert np.allclose(lq.columns[:3], 0.0)
    assert np.linalg.matrix_rank(lq.columns[3:]) == 3


def test_LQ_totally_geodesic_plane():
    curve = flat_line()
    frame = parallel_transport_frame(EUCLID3, curve, np.eye(3))
    tang = np.eye(3)[:, 1:]
    lq = lagrangian_LQ(BoundaryData(tang, np.zeros((2, 2))), frame, EUCLID3)
    expect = np.zeros((6, 3))
    expect[1, 0] = expect[2, 1] = 1.0
    expect[3, 2] = 1.0
    assert same_span(lq.columns, expect)


def test_LQ_hypersurface_shape():
    curve = flat_line()
    frame = parallel_transport_frame(EUCLID3, curve, np.eye(3))
    kappa = np.array([0.5, -2.0])
    tang = np.eye(3)[:, 1:]
    lq = lagrangian_LQ(BoundaryData(tang, np.diag(kappa)), frame, EUCLID3)
    expect = np.zeros((6, 3))
    expect[1, 0], expect[4, 0] = 1.0, kappa[0]
    expect[2, 1], expect[5, 1] = 1.0, kappa[1]
    expect[3, 2] = 1.0
    assert same_span(lq.columns, expect)


def test_boundary_data_validation():
    curve = flat_line()
    frame = parallel_transport_frame(EUCLID3, curve, np.eye(3))
    with pytest.raises(InvalidBoundaryData):
        lagrangian_LQ(BoundaryData(np.eye(3)[:, :2], np.zeros((2, 2))), frame, EUCLID3)
    with pytest.raises(InvalidBoundaryData):
        lagrangian_LQ(BoundaryData(np.array([[0.0, 0.0], [1.0, 2.0], [0.0, 0.0]]), np.zeros((2, 2))),
                      frame, EUCLID3)
    with pytest.raises(InvalidBoundaryData):
        BoundaryData(np.eye(3)[:, 1:], np.zeros((3, 3)))


def test_boundary_data_rescales_shape_to_velocity():
    sub = SubmanifoldData([0.0, 0.0, 0.0], np.eye(3)[:, 1:], [1.0, 0.0, 0.0], np.diag([1.0, 2.0]))
    bd = BoundaryData.from_submanifold(sub, [3.0, 0.0, 0.0])
    assert np.allclose(bd.shape.entries, np.diag([3.0, 6.0]))
    with pytest.raises(InvalidBoundaryData):
        BoundaryData.from_submanifold(sub, [0.0, 1.0, 0.0])


# --- index and focal instants ----------------------------------------------


def test_flat_index_zero():
    curve = flat_line(steps=200, b=10.0)
    assert q_maslov_index(EUCLID3, curve, BoundaryData.point(3)) == 0
    report = detect_focal_instants(EUCLID3, curve, BoundaryData.point(3))
    assert report.instants == []


def test_sphere_index_three_half_pi():
    curve = equator(1.5 * np.pi, 600)
    assert q_maslov_index(SPHERE, curve, BoundaryData.point(2)) == 1


def test_sphere_index_frame_independent():
    curve = equator(1.5 * np.pi, 600)
    par = parallel_transport_frame(SPHERE, curve, orthonormal_basis(SPHERE, curve.points[0]))
    rng = np.random.default_rng(11)
    frames = [random_smooth_frame(par, rng), rotating_frame(SPHERE, par, rng.normal(size=(2, 2)))]
    for fr in frames:
        assert q_maslov_index(SPHERE, curve, BoundaryData.point(2), frame=fr) == 1


def test_sphere_single_conjugate_instant():
    curve = equator(2 * np.pi - 0.3, 800)
    report = detect_focal_instants(SPHERE, curve, BoundaryData.point(2))
    assert len(report.instants) == 1
    inst = report.instants[0]
    assert abs(inst.t - np.pi) < 1e-6
    assert inst.kernel_dim == 1
    assert inst.contribution == 1
    assert inst.flags == ()
    assert report.total_index == 1 and report.consistent


def test_endpoint_instant_contributes_half():
    curve = equator(np.pi, 400)
    report = detect_focal_instants(SPHERE, curve, BoundaryData.point(2))
    assert len(report.instants) == 1
    assert "endpoint" in report.instants[0].flags
    assert report.instants[0].contribution == Fraction(1, 2)
    assert report.total_index == Fraction(1, 2)


def test_closed_convention_adds_initial_half_signature():
    # for a point, l(a) = L0 and the crossing form at a is definite of rank n = 2: +n/2
    curve = equator(1.5 * np.pi, 600)
    bd = BoundaryData.point(2)
    assert q_maslov_index(SPHERE, curve, bd, convention="closed") == 2
    report = detect_focal_instants(SPHERE, curve, bd, convention="closed")
    assert report.initial_contribution == 1 and report.consistent
    with pytest.raises(InvalidArgument):
        q_maslov_index(SPHERE, curve, bd, convention="half-open")


def test_static_lorentzian_product_matches_sphere():
    # Jacobi equation splits: flat t-direction plus the S^2 factor
    curve = integrate_geodesic(STATIC, [0.0, np.pi / 2, 0.0], [0.0, 0.0, 1.0], (0, 2 * np.pi - 0.3), 800)
    report = detect_focal_instants(STATIC, curve, BoundaryData.point(3))
    assert len(report.instants) == 1
    assert abs(report.instants[0].t - np.pi) < 1e-6
    assert report.instants[0].contribution == 1
    assert report.total_index == 1


def test_jacobi_space_evaluation():
    curve = equator(2 * np.pi - 0.3, 800)
    system = jacobi_system(SPHERE, curve, BoundaryData.point(2))
    regular = jacobi_space_evaluation(system, 1.0)
    assert regular.kernel_dim == 0 and regular.space.shape == (2, 2)
    focal = jacobi_space_evaluation(system, np.pi, kernel_dim=1)
    comp = focal.complement[:, 0]
    assert abs(comp[1]) < 1e-6 * abs(comp[0])
    assert focal.contribution == 1 and not focal.degenerate
    with pytest.raises(InvalidArgument):
        jacobi_space_evaluation(system, 0.0)


def test_vertical_space_inside_jacobi_evaluation():
    sc = get_scenario("hopf", steps=600)
    gamma, _, _ = integrate_pair(sc)
    frame, shape = lifted_boundary_shape(sc.spec, sc.pdata(), gamma.points[0], gamma.velocities[0])
    system = jacobi_system(sc.spec.total, gamma, BoundaryData(frame, SymmetricForm(shape)))
    for t0 in (0.7, 1.4, 2.2, 3.0):
        ev = jacobi_space_evaluation(system, t0)
        x, _ = gamma.at(t0)
        ver = np.eye(3) - sc.spec.differential(x).T @ np.linalg.pinv(sc.spec.differential(x).T)
        vert = ver @ np.array([0.0, 1.0, 1.0])
        assert same_span(np.column_stack([ev.space, vert]), ev.space, tol=1e-6)


# --- index form ------------------------------------------------------------


def test_index_form_flat_closed_form():
    # Q is the line through gamma(a) orthogonal to gamma'; E = (b - t) e with e tangent to Q
    curve = integrate_geodesic(EUCLID2, [0.0, 0.0], [1.0, 0.0], (0.0, 2.0), 40)
    bd = BoundaryData(np.array([[0.0], [1.0]]), np.zeros((1, 1)))
    ctx = IndexFormContext(EUCLID2, curve, bd)
    e = np.array([0.0, 0.7])
    F = FieldAlongCurve(curve, np.outer(2.0 - curve.times, e))
    assert np.isclose(index_form(ctx, F, F), 2.0 * (e @ e), rtol=1e-10)
    E = FieldAlongCurve(curve, np.outer(curve.times, e))
    with pytest.raises(InvalidField):
        index_form(ctx, E, F)
    G = FieldAlongCurve(curve, np.outer(2.0 - curve.times, [0.7, 0.0]))
    with pytest.raises(InvalidField):
        index_form(ctx, G, F)


def test_index_form_vanishes_on_jacobi_fields():
    curve = equator(np.pi, 400)
    ctx = IndexFormContext(SPHERE, curve, BoundaryData.point(2))
    t = curve.times
    J = FieldAlongCurve(curve, np.column_stack([np.sin(t), np.zeros_like(t)]))
    F = FieldAlongCurve(curve, np.column_stack([np.sin(t) * (np.pi - t), np.sin(2 * t) * t]))
    assert abs(index_form(ctx, J, F)) < 1e-6
    assert abs(index_form(ctx, F, J)) < 1e-6


def test_index_form_symmetric():
    curve = equator(2.5, 200)
    ctx = IndexFormContext(SPHERE, curve, BoundaryData.point(2))
    rng = np.random.default_rng(2)
    for _ in range(5):
        E = random_admissible_field(curve, np.zeros((2, 0)), rng)
        F = random_admissible_field(curve, np.zeros((2, 0)), rng)
        assert np.isclose(index_form(ctx, E, F), index_form(ctx, F, E), rtol=1e-12, atol=1e-12)


def test_index_form_rejects_bad_fields():
    curve = equator(2.5, 200)
    ctx = IndexFormContext(SPHERE, curve, BoundaryData.point(2))
    t = curve.times
    ok = FieldAlongCurve(curve, np.column_stack([t * (2.5 - t), np.zeros_like(t)]))
    bad_a = FieldAlongCurve(curve, np.column_stack([2.5 - t, np.zeros_like(t)]))
    with pytest.raises(InvalidField):
        index_form(ctx, bad_a, ok)
    other = equator(2.5, 100)
    with pytest.raises(InvalidField):
        index_form(ctx, ok, FieldAlongCurve(other, np.zeros((101, 2))))
    with pytest.raises(InvalidArgument):
        IndexFormContext(SPHERE, equator(2.5, 101), BoundaryData.point(2))


# --- index identity ---------------------------------------------------------


def test_index_identity_vertical_field_product():
    spec = flat_product(3, 2)
    b = 2.0
    gamma = integrate_geodesic(spec.total, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], (0.0, b), 200)
    t = gamma.times
    E = FieldAlongCurve(gamma, np.column_stack([0 * t, 0 * t, np.sin(np.pi * t / b)]))
    pdata = SubmanifoldData.point_submanifold([0.0, 0.0], [1.0, 0.0])
    res = verify_index_identity(spec, gamma, pdata, E, E)
    expect = np.pi ** 2 / (2 * b)
    assert np.isclose(res.lhs, expect, rtol=1e-8)
    assert abs(res.base) < 1e-12
    assert np.isclose(res.correction, expect, rtol=1e-8)
    assert res.residual < 1e-8


def test_index_identity_hopf_random_fields():
    sc = get_scenario("hopf", steps=800)
    for residual, lhs in index_identity_residuals(sc, pairs=5):
        assert residual < 1e-5 * (1 + lhs)


# --- conjugate counts and causal index --------------------------------------


def test_conjugate_counts_flat():
    spec = flat_product(3, 2)
    gamma = integrate_geodesic(spec.total, [0.0, 0.0, 0.0], [1.0, 0.5, 0.0], (0.0, 4.0), 100)
    c = conjugate_counts(spec, gamma)
    assert (c.omega, c.omega_delta, c.omega_n, c.omega_delta_base) == (0, 0, 0, 0)


def test_conjugate_counts_hopf_at_antipode():
    # S^3: every Jacobi field with J(0) = 0 orthogonal to gamma' is sin(t) E(t), so omega = 2 at pi;
    # the one with horizontal initial derivative projects to the S^2(1/2) field sin(2t)
    sc = get_scenario("hopf", steps=800, interval=(0.0, np.pi))
    gamma, base, _ = integrate_pair(sc)
    c = conjugate_counts(sc.spec, gamma, base_curve=base)
    assert (c.omega, c.omega_delta, c.omega_n) == (2, 1, 1)
    assert c.omega_delta_base == 1
    assert not c.uncertain


def test_causal_index_timelike_static():
    v = np.array([np.sqrt(2.0), 0.0, 1.0])
    curve = integrate_geodesic(STATIC, [0.0, np.pi / 2, 0.0], v, (0.0, 4.0), 600)
    assert causal_character(STATIC, curve) == "timelike"
    assert causal_index(STATIC, curve) == 1
    space = integrate_geodesic(STATIC, [0.0, np.pi / 2, 0.0], [0.0, 0.0, 1.0], (0.0, 1.0), 20)
    assert causal_character(STATIC, space) == "spacelike"
    with pytest.raises(InvalidArgument):
        causal_index(STATIC, space)
