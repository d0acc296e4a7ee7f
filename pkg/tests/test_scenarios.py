import json

import numpy as np
import pytest
import sympy as sp

from submaslov.errors import InvalidKKData, InvalidStationaryData
from submaslov.geometry import MetricField, integrate_geodesic
from submaslov.scenarios import (
    SCENARIOS,
    check_stationary_beta,
    get_scenario,
    hopf_fibration,
    integrate_pair,
    kaluza_klein_toy,
    kk_scenario,
    random_stationary_scenario,
    stationary_spacetime,
    verify_main_theorem,
)
from submaslov.submersion import horizontal_lift, lift_geodesic_check, projectors, tensor_A, tensor_T

X, Y = sp.symbols("x y")
TH, PH = sp.symbols("theta phi")
PLANE = MetricField.from_sympy(sp.eye(2), [X, Y], 0)
ROUND = MetricField.from_sympy(sp.diag(1, sp.sin(TH) ** 2), [TH, PH], 0)


def test_stationary_flat_is_minkowski():
    spec = stationary_spacetime(PLANE, 1, [0, 0])
    p = np.array([0.3, -0.2, 1.0])
    assert np.allclose(spec.total.eval(p), np.diag([1.0, 1.0, -1.0]))
    assert np.allclose(spec.base.eval(p[:2]), np.eye(2))
    assert spec.total.index == 1 and spec.base.index == 0


def test_stationary_static_sphere_base_is_round():
    spec = stationary_spacetime(ROUND, 1, [0, 0])
    x = np.array([1.1, 0.4])
    assert np.allclose(spec.base.eval(x), np.diag([1.0, np.sin(1.1) ** 2]))


def test_stationary_constant_shift_base_metric():
    d = np.array([0.4, -0.3])
    spec = stationary_spacetime(PLANE, 1, list(d))
    p = np.array([0.5, 0.5, 0.0])
    assert np.allclose(spec.base.eval(p[:2]), np.eye(2) + np.outer(d, d))
    spec.check_point(p)
    _, hor = projectors(spec, p)
    assert not np.allclose(hor, np.diag([1.0, 1.0, 0.0]))
    # base metric h + delta delta^T from the horizontal lift, by hand
    u = np.array([0.7, 1.2])
    w = horizontal_lift(spec, p, u)
    assert np.isclose(w @ spec.total.eval(p) @ w, u @ u + (d @ u) ** 2)


def test_stationary_rejects_bad_lapse_and_shift():
    with pytest.raises(InvalidStationaryData):
        stationary_spacetime(PLANE, -1, [0, 0])
    with pytest.raises(InvalidStationaryData):
        stationary_spacetime(PLANE, 1, [0])
    with pytest.raises(InvalidStationaryData):
        stationary_spacetime(PLANE, 1 + sp.Symbol("t"), [0, 0])
    spec = stationary_spacetime(PLANE, 1 - X, [0, 0])
    check_stationary_beta(spec, [[0.5, 0.0, 0.0]])
    with pytest.raises(InvalidStationaryData):
        check_stationary_beta(spec, [[0.5, 0.0, 0.0], [1.5, 0.0, 0.0]])


def test_hopf_builder():
    spec = hopf_fibration()
    p = np.array([0.8, 0.1, -0.4])
    spec.check_point(p)
    base = integrate_geodesic(spec.base, [np.pi / 2, 0.0], [0.6, 1.6], (0, 1), 50)
    u = base.velocities[0] / np.sqrt(base.velocities[0] @ spec.base.eval(base.points[0]) @ base.velocities[0])
    w = horizontal_lift(spec, [np.pi / 4, 0.0, 0.0], u)
    assert np.isclose(w @ spec.total.eval([np.pi / 4, 0.0, 0.0]) @ w, 1.0)


def test_kk_rejects_bad_data():
    with pytest.raises(InvalidKKData):
        kaluza_klein_toy(PLANE, 1.0, [0, 0])
    mink = MetricField.from_sympy(sp.diag(-1, 1), [X, Y], 1)
    with pytest.raises(InvalidKKData):
        kaluza_klein_toy(mink, 0.0, [0, 0])
    with pytest.raises(InvalidKKData):
        kaluza_klein_toy(mink, 1.0, [0])


def test_kk_trivial_tilt_flat_base_is_product():
    mink = MetricField.from_sympy(sp.diag(-1, 1), [X, Y], 1)
    spec = kaluza_klein_toy(mink, 2.0, [0, 0])
    p = np.array([0.1, 0.2, 0.3])
    assert np.allclose(spec.total.eval(p), np.diag([-1.0, 1.0, 4.0]))
    assert spec.total.index == 1
    rng = np.random.default_rng(1)
    e, f = rng.normal(size=(2, 3))
    assert np.allclose(tensor_T(spec, p, e, f), 0.0, atol=1e-9)
    assert np.allclose(tensor_A(spec, p, e, f), 0.0, atol=1e-9)


def test_kk_tilt_gives_nonzero_A_and_horizontal_geodesics():
    sc = kk_scenario(steps=600)
    p = sc.point
    _, hor = projectors(sc.spec, p)
    rng = np.random.default_rng(2)
    a = tensor_A(sc.spec, p, hor @ rng.normal(size=4), hor @ rng.normal(size=4))
    assert np.linalg.norm(a) > 1e-3
    gamma = integrate_geodesic(sc.spec.total, sc.point, sc.velocity, sc.interval, 600)
    assert lift_geodesic_check(sc.spec, gamma).max_vertical < 1e-8


def test_kk_untilted_reproduces_sphere_factor():
    # without tilt the lifted geodesic sees only the S^2 factor: conjugate instants at k pi / 0.75
    sc = kk_scenario(steps=1200, eps=0.0)
    res = verify_main_theorem(sc, frames=False)
    assert res.passed, res.failed_checks()
    want = [k * np.pi / 0.75 for k in (1, 2)]
    assert np.allclose(res.report_total.times(), want, atol=1e-6)
    assert all(i.contribution == 1 for i in res.report_total.instants)


def test_flat_scenario_passes():
    res = verify_main_theorem(get_scenario("flat", steps=400))
    assert res.passed, res.failed_checks()
    assert res.index_total == res.index_base == 0
    assert res.report_total.instants == [] and res.report_base.instants == []
    json.dumps(res.to_dict())


def test_registry():
    assert set(SCENARIOS) == {"flat", "hopf", "kk", "stationary_s2", "stationary_tilted"}
    for name in SCENARIOS:
        sc = get_scenario(name, steps=100)
        assert sc.name == name and sc.description
        assert np.allclose(sc.spec.project(sc.point), sc.base_point)
    with pytest.raises(KeyError):
        get_scenario("nope")


def test_hopf_interval_oracle():
    sc = get_scenario("hopf", steps=100)
    assert np.allclose(sc.base_instants, [np.pi / 2, np.pi])


def test_random_stationary_deterministic_and_valid():
    a = random_stationary_scenario(np.random.default_rng(5), steps=2000)
    b = random_stationary_scenario(np.random.default_rng(5), steps=2000)
    assert a.inputs == b.inputs
    assert np.allclose(a.point, b.point)
    a.spec.check_point(a.point)
    gamma, base, _ = integrate_pair(a)
    check_stationary_beta(a.spec, gamma.points)
    h = a.spec.base.eval(a.point[:2])
    assert np.isclose(a.base_velocity @ h @ a.base_velocity, 1.0)
