from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from oracles import char_poly_eigenvalues, souriau_maslov
from submaslov.errors import (
    ChartDomainError,
    InvalidChart,
    InvalidDimension,
    InvalidLagrangian,
    InvalidSymplectomorphism,
    ResolutionError,
    SplitInapplicable,
)
from submaslov.symplectic import (
    LagrangianFrame,
    LagrangianPath,
    SymmetricForm,
    SymplecticMatrix,
    apply_symplectomorphism,
    canonical_omega,
    chart_value,
    direct_sum_split,
    intersection_dim,
    maslov_index,
    signature,
    symplectic_residual,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def hamiltonian(rng, n, scale=1.0):
    s = rng.normal(size=(2 * n, 2 * n)) * scale
    return canonical_omega(n) @ (s + s.T) / 2


def random_lagrangian(rng, n):
    q = expm(hamiltonian(rng, n))
    return LagrangianFrame(q @ LagrangianFrame.vertical(n).columns)


def flow_path(x, frame, t1, samples=400, t0=0.0):
    times = np.linspace(t0, t1, samples)
    cols = np.stack([expm(t * x) @ frame for t in times])
    return LagrangianPath.from_arrays(times, cols)


def rotation_flow(n=1):
    return np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])


# --- canonical_omega -------------------------------------------------------------


def test_omega_n1():
    assert np.array_equal(canonical_omega(1), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_omega_n2_blocks():
    om = canonical_omega(2)
    assert np.array_equal(om[:2, 2:], np.eye(2))
    assert np.array_equal(om[2:, :2], -np.eye(2))
    assert not om[:2, :2].any() and not om[2:, 2:].any()


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_omega_antisymmetric_and_square(n):
    om = canonical_omega(n)
    assert np.array_equal(om.T, -om)
    assert np.array_equal(om @ om, -np.eye(2 * n))


def test_omega_zero_dimension():
    with pytest.raises(InvalidDimension):
        canonical_omega(0)


def test_omega_matches_form_definition():
    # omega((v, a), (w, b)) = b(v) - a(w)
    rng = np.random.default_rng(0)
    v, a, w, b = rng.normal(size=(4, 3))
    x, y = np.concatenate([v, a]), np.concatenate([w, b])
    assert x @ canonical_omega(3) @ y == pytest.approx(b @ v - a @ w)


# --- signature -------------------------------------------------------------------


def test_signature_diagonal():
    assert signature(SymmetricForm(np.diag([1.0, 1.0, -1.0]), tol=1e-9)) == (2, 1, 0)


def test_signature_zero():
    assert signature(SymmetricForm(np.zeros((3, 3)))) == (0, 0, 3)


def test_symmetric_form_symmetrizes():
    f = SymmetricForm(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert np.array_equal(f.entries, f.entries.T)


def test_signature_relative_threshold():
    # zero threshold is tol * max(1, spectral radius) = 1e-2 here
    f = SymmetricForm(np.diag([1e6, 1e-1, -10.0]), tol=1e-8)
    assert signature(f) == (2, 1, 0)
    f = SymmetricForm(np.diag([1e6, 1e-3, -10.0]), tol=1e-8)
    assert signature(f) == (1, 1, 1)


def test_signature_harmonic_chart_vs_charpoly():
    # n = 2 oscillator with frequencies 1 and sqrt(2): quarter period of the slow mode
    x = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.diag([1.0, 2.0]), np.zeros((2, 2))]])
    start = LagrangianFrame.graph(np.array([[0.3, 0.7], [0.7, -0.2]]))
    L = apply_symplectomorphism(expm(np.pi / 2 * x), start)
    form = chart_value(L, LagrangianFrame.vertical(2), LagrangianFrame.horizontal(2))
    eigs = char_poly_eigenvalues(form.entries)
    want = (int(np.sum(eigs > 1e-8)), int(np.sum(eigs < -1e-8)), int(np.sum(np.abs(eigs) <= 1e-8)))
    assert signature(form) == want
    assert np.allclose(np.sort(form.eigenvalues()), np.sort(eigs), atol=1e-10)


@given(seeds, st.integers(1, 6))
def test_signature_vs_charpoly_oracle(seed, n):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = rng.choice([-1.0, 0.0, 1.0], size=n) * rng.uniform(0.5, 3.0, size=n)
    a = q @ np.diag(lam) @ q.T
    eigs = char_poly_eigenvalues(a)
    scale = max(1.0, np.max(np.abs(eigs)))
    want = (int(np.sum(eigs > 1e-8 * scale)), int(np.sum(eigs < -1e-8 * scale)),
            int(np.sum(np.abs(eigs) <= 1e-8 * scale)))
    got = signature(SymmetricForm(a))
    assert got == want
    assert sum(got) == n


# --- LagrangianFrame / SymplecticMatrix --------------------------------------------


def test_frame_rejects_non_isotropic():
    # e1 and f1 pair to 1 under omega
    with pytest.raises(InvalidLagrangian):
        LagrangianFrame(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))


def test_frame_rejects_rank_deficient():
    with pytest.raises(InvalidLagrangian):
        LagrangianFrame(np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))


def test_frame_shape_checked():
    with pytest.raises(InvalidDimension):
        LagrangianFrame(np.ones((3, 2)))


def test_symplectic_matrix_check():
    with pytest.raises(InvalidSymplectomorphism):
        SymplecticMatrix(np.diag([2.0, 1.0]))


def test_apply_identity_same_span():
    rng = np.random.default_rng(1)
    L = random_lagrangian(rng, 3)
    assert apply_symplectomorphism(np.eye(6), L).same_span(L)


def test_apply_omega_swaps_factors():
    out = apply_symplectomorphism(canonical_omega(2), LagrangianFrame.vertical(2))
    assert out.same_span(LagrangianFrame.horizontal(2))


def test_apply_rejects_non_symplectic():
    with pytest.raises(InvalidSymplectomorphism):
        apply_symplectomorphism(np.diag([2.0, 1.0, 1.0, 1.0]), LagrangianFrame.vertical(2))


@given(seeds, st.integers(1, 3))
def test_lower_triangular_family_fixes_vertical(seed, n):
    # [[A, 0], [W A, A^-T]] with W symmetric maps {0}+R^n* onto itself
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, n))
    w = w + w.T
    m = 0.3 * rng.normal(size=(n, n))
    L0 = LagrangianFrame.vertical(n)
    for t in np.linspace(0, 2, 5):
        at = expm(t * m)
        phi = np.block([[at, np.zeros((n, n))], [t * w @ at, np.linalg.inv(at).T]])
        assert symplectic_residual(phi) < 1e-10
        assert apply_symplectomorphism(phi, L0).same_span(L0)


# --- chart_value ---------------------------------------------------------------------


def test_chart_of_L0_is_zero():
    rng = np.random.default_rng(2)
    L0 = random_lagrangian(rng, 3)
    L1 = random_lagrangian(rng, 3)
    assert np.allclose(chart_value(L0, L0, L1).entries, 0.0, atol=1e-12)


@pytest.mark.parametrize("c", [-2.5, 0.0, 0.7, 3.0])
def test_chart_n1_hand_computed(c):
    L0 = LagrangianFrame(np.array([[1.0], [0.0]]))
    L1 = LagrangianFrame(np.array([[0.0], [1.0]]))
    L = LagrangianFrame(np.array([[1.0], [c]]))
    # T e1 = (0, c); omega((v, a), (w, b)) = b(v) - a(w) gives omega(T e1, e1) = -c
    want = np.array([0.0, c]) @ np.array([[0.0, 1.0], [-1.0, 0.0]]) @ np.array([1.0, 0.0])
    assert want == -c
    assert chart_value(L, L0, L1).entries[0, 0] == pytest.approx(want, abs=1e-12)


def test_chart_errors():
    L0 = LagrangianFrame.vertical(2)
    with pytest.raises(InvalidChart):
        chart_value(LagrangianFrame.horizontal(2), L0, L0)
    with pytest.raises(ChartDomainError):
        chart_value(LagrangianFrame.horizontal(2), L0, LagrangianFrame.horizontal(2))


def _rank_oracle(a, b):
    # dim(A cap B) = 2n - rank [A | B] = number of vanishing singular values
    s = np.linalg.svd(np.hstack([a.columns, b.columns]), compute_uv=False)
    return int(np.sum(s < 1e-9 * s[0]))


@given(seeds, st.integers(1, 4), st.integers(0, 4))
def test_chart_kernel_is_intersection(seed, n, k):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    psi = expm(hamiltonian(rng, n, 0.3))   # keeps (L0, L1) well conditioned
    L0 = apply_symplectomorphism(psi, LagrangianFrame.vertical(n))
    L1 = apply_symplectomorphism(psi, LagrangianFrame.horizontal(n))
    # L shares exactly k directions with L0: L = phi(L0) with phi = identity on a k-dim isotropic piece
    sym = np.diag(np.concatenate([np.zeros(k), rng.uniform(0.5, 2.0, n - k) * rng.choice([-1, 1], n - k)]))
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    sym = q @ sym @ q.T
    # symplectic basis adapted to (L0, L1): L = graph of sym over L0 inside L0 + L1
    a0, a1 = L0.orthonormal, L1.orthonormal
    pairing = a1.T @ canonical_omega(n) @ a0
    L = LagrangianFrame(a0 + a1 @ np.linalg.solve(pairing.T, sym))
    form = chart_value(L, L0, L1)
    kernel = signature(form)[2]
    assert kernel == _rank_oracle(L, L0) == intersection_dim(L, L0, 1e-8) == k


# --- maslov_index ------------------------------------------------------------------------


def test_constant_path_zero():
    rng = np.random.default_rng(3)
    L = random_lagrangian(rng, 2)
    path = LagrangianPath.from_frames(np.linspace(0, 1, 5), [L] * 5)
    assert maslov_index(path, random_lagrangian(rng, 2)) == 0


def _chart_1d(l, l0, l1):
    # graph of T: l0 -> l1 through l, value omega(T l0, l0) with the literal 2x2 form
    a, b = np.linalg.solve(np.column_stack([l0, l1]), l)
    tf = (b / a) * l1
    # omega(x, y) = y_a x_v - x_a y_v
    return l0[1] * tf[0] - tf[1] * l0[0]


def _brute_force_1d(l0, pieces):
    """Index of t -> span(sin t, cos t) by the chart formula on hand-picked pieces."""
    total = Fraction(0)
    for lo, hi, l1 in pieces:
        ts = np.linspace(lo, hi, 400)
        vals = [_chart_1d(np.array([np.sin(t), np.cos(t)]), l0, l1) for t in ts]
        assert all(np.isfinite(vals))
        sig = lambda x: 0 if abs(x) < 1e-12 else int(np.sign(x))  # noqa: E731
        total += Fraction(sig(vals[-1]) - sig(vals[0]), 2)
    return total


ROTATION_END = np.pi + 0.1
DIAG_PLUS = np.array([1.0, 1.0]) / np.sqrt(2)
DIAG_MINUS = np.array([1.0, -1.0]) / np.sqrt(2)


def test_rotation_flow_crossing_half_period():
    # l(t) = span(sin t, cos t) meets span(1, 0) once, at t = pi/2, with contribution +1
    path = flow_path(rotation_flow(), np.array([[0.0], [1.0]]), ROTATION_END, samples=200)
    L0 = LagrangianFrame(np.array([[1.0], [0.0]]))
    want = _brute_force_1d(np.array([1.0, 0.0]), [(0.0, 2.0, DIAG_MINUS), (2.0, ROTATION_END, DIAG_PLUS)])
    assert want == 1
    assert maslov_index(path, L0) == want


def test_rotation_flow_interior_crossing():
    # relative to span(0, 1) the v-component sin t vanishes once inside (0, pi + 0.1]
    eps = 0.05
    path = flow_path(rotation_flow(), np.array([[0.0], [1.0]]), ROTATION_END, samples=200, t0=eps)
    L0 = LagrangianFrame(np.array([[0.0], [1.0]]))
    want = _brute_force_1d(np.array([0.0, 1.0]), [(eps, 1.2, np.array([1.0, 0.0])),
                                                  (1.2, ROTATION_END, DIAG_PLUS)])
    assert want == 1
    assert maslov_index(path, L0) == want


def test_rotation_flow_starting_on_L0():
    # starting on L0 adds the endpoint half signature of axiom (c)
    path = flow_path(rotation_flow(), np.array([[0.0], [1.0]]), ROTATION_END, samples=200)
    L0 = LagrangianFrame(np.array([[0.0], [1.0]]))
    want = _brute_force_1d(np.array([0.0, 1.0]), [(0.0, 1.2, np.array([1.0, 0.0])),
                                                  (1.2, ROTATION_END, DIAG_PLUS)])
    assert want == Fraction(3, 2)
    assert maslov_index(path, L0) == want
    assert souriau_maslov([path.frame(k).columns for k in range(len(path))], L0.columns)[0] == want


def test_chart_formula_single_chart():
    # a path inside one chart: index equals half the signature jump of the chart
    n = 2
    L0, L1 = LagrangianFrame.vertical(n), LagrangianFrame.horizontal(n)
    ts = np.linspace(0, 1, 50)
    s0, s1 = np.diag([1.0, -2.0]), np.diag([-1.0, 0.5])
    frames = [LagrangianFrame(np.vstack([(1 - t) * s0 + t * s1, np.eye(n)])) for t in ts]
    path = LagrangianPath.from_frames(ts, frames)
    p0, m0, _ = signature(chart_value(frames[0], L0, L1))
    p1, m1, _ = signature(chart_value(frames[-1], L0, L1))
    assert maslov_index(path, L0) == Fraction((p1 - m1) - (p0 - m0), 2)


@given(seeds, st.integers(1, 3))
def test_maslov_vs_winding_oracle(seed, n):
    rng = np.random.default_rng(seed)
    x = hamiltonian(rng, n, 0.8)
    start = random_lagrangian(rng, n).columns
    path = flow_path(x, start, 3.0, samples=300)
    L0 = random_lagrangian(rng, n)
    want, raw = souriau_maslov([path.frame(k).columns for k in range(len(path))], L0.columns)
    assert abs(raw - want) < 1e-3   # oracle itself is unambiguous
    assert maslov_index(path, L0) == want


@given(seeds, st.integers(1, 3), st.integers(20, 280))
def test_concatenation_additive(seed, n, cut):
    rng = np.random.default_rng(seed)
    path = flow_path(hamiltonian(rng, n, 0.8), random_lagrangian(rng, n).columns, 3.0, samples=300)
    L0 = random_lagrangian(rng, n)
    total = maslov_index(path, L0)
    parts = maslov_index(path.restrict(0, cut), L0) + maslov_index(path.restrict(cut, len(path) - 1), L0)
    assert total == parts
    joined = path.restrict(0, cut).concatenate(path.restrict(cut, len(path) - 1))
    assert maslov_index(joined, L0) == total


@given(seeds, st.integers(1, 3))
def test_symplectomorphism_invariance(seed, n):
    rng = np.random.default_rng(seed)
    path = flow_path(hamiltonian(rng, n, 0.8), random_lagrangian(rng, n).columns, 2.5, samples=300)
    L0 = random_lagrangian(rng, n)
    phi = expm(hamiltonian(rng, n, 0.3))
    assert maslov_index(path.transform(phi), apply_symplectomorphism(phi, L0)) == maslov_index(path, L0)


@given(seeds, st.integers(1, 3))
def test_family_fixing_L0_invariance(seed, n):
    # t -> phi_t(l(t)) with phi_t = [[A_t, 0], [t W A_t, A_t^-T]] fixing L0 = vertical
    rng = np.random.default_rng(seed)
    path = flow_path(hamiltonian(rng, n, 0.8), random_lagrangian(rng, n).columns, 2.5, samples=400)
    w = rng.normal(size=(n, n)) * 0.5
    w = w + w.T
    m = rng.normal(size=(n, n)) * 0.3

    def phi(t):
        a = expm(t * m)
        return np.block([[a, np.zeros((n, n))], [t * w @ a, np.linalg.inv(a).T]])

    L0 = LagrangianFrame.vertical(n)
    assert maslov_index(path.transform(phi), L0) == maslov_index(path, L0)


@given(seeds, st.integers(1, 3))
def test_refinement_stable(seed, n):
    rng = np.random.default_rng(seed)
    path = flow_path(hamiltonian(rng, n, 0.8), random_lagrangian(rng, n).columns, 3.0, samples=200)
    L0 = random_lagrangian(rng, n)
    assert maslov_index(path.refined(2), L0) == maslov_index(path, L0)


def test_coarse_sampling_rejected():
    times = np.array([0.0, 1.0])
    with pytest.raises(ResolutionError):
        LagrangianPath.from_frames(times, [LagrangianFrame.vertical(1), LagrangianFrame.horizontal(1)])


# --- direct sums -----------------------------------------------------------------------------


def _product_path(w1, w2, t1, samples=400):
    x = np.zeros((4, 4))
    x[0, 2], x[2, 0] = w1, -w1
    x[1, 3], x[3, 1] = w2, -w2
    return flow_path(x, LagrangianFrame.vertical(2).columns, t1, samples)


def test_direct_sum_of_rotations():
    t1 = 4.0
    path = _product_path(1.0, 2.0, t1)
    L0 = LagrangianFrame.vertical(2)
    V1 = np.eye(4)[:, [0, 2]]
    V2 = np.eye(4)[:, [1, 3]]
    i1, i2 = direct_sum_split(path, L0, V1, V2)
    vert1 = LagrangianFrame(np.array([[0.0], [1.0]]))
    r = rotation_flow()
    sep1 = maslov_index(flow_path(1.0 * r, vert1.columns, t1), vert1)
    sep2 = maslov_index(flow_path(2.0 * r, vert1.columns, t1), vert1)
    assert (i1, i2) == (sep1, sep2)
    assert i1 + i2 == maslov_index(path, L0)


def test_direct_sum_constant_factor():
    path = _product_path(1.0, 0.0, 4.0)
    i1, i2 = direct_sum_split(path, LagrangianFrame.vertical(2), np.eye(4)[:, [0, 2]], np.eye(4)[:, [1, 3]])
    assert i2 == 0
    assert i1 == maslov_index(path, LagrangianFrame.vertical(2))


def test_direct_sum_not_split():
    rng = np.random.default_rng(5)
    path = flow_path(hamiltonian(rng, 2, 0.8), random_lagrangian(rng, 2).columns, 1.0, samples=100)
    with pytest.raises(SplitInapplicable):
        direct_sum_split(path, LagrangianFrame.vertical(2), np.eye(4)[:, [0, 2]], np.eye(4)[:, [1, 3]])
