from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import FAMILIES, model
from pwmel.builtins import builtin_model
from pwmel.flow import (
    FlowError,
    GrazingError,
    NoReturnError,
    dt_deps,
    dt_dy,
    find_return,
    fundamental_matrix,
    integrate_side,
    omega,
    y_sensitivity,
)
from pwmel.model import PiecewiseSystem, Tolerances, seed_point


def _analytic_jacobian(lib, side, t, p, step=1e-5):
    # the closed-form flow is affine in (x, y, z) for pwl-a, so central differences are exact
    cols = []
    for k in range(3):
        d = np.zeros(3)
        d[k] = step
        cols.append((lib.flow(side, t, p + d) - lib.flow(side, t, p - d)) / (2 * step))
    return np.array(cols).T


def test_pwl_a_flow_matches_closed_form():
    system, _, lib = model("pwl-a")
    p0 = np.array([1.0, 0.0, 0.0])
    seg = integrate_side(system, "+", p0, math.pi / 2)
    np.testing.assert_allclose(seg.states[-1], lib.flow("+", math.pi / 2, p0), atol=1e-9)
    back = integrate_side(system, "-", p0, -1.3)
    np.testing.assert_allclose(back(-1.3), lib.flow("-", -1.3, p0), atol=1e-9)


def test_zero_length_segment():
    system, _, _ = model("pwl-a")
    seg = integrate_side(system, "+", (0.4, 0.1, 0.0), 0.0)
    assert len(seg.states) == 1
    np.testing.assert_array_equal(seg.states[0], [0.4, 0.1, 0.0])


def test_paraboloid_isochronous_period():
    system, _, _ = model("parab-flat")
    p0 = np.array([1.0, 2.0, 1.0])  # y = x^2 + z^2: on the invariant paraboloid
    seg = integrate_side(system, "+", p0, 2 * math.pi)
    np.testing.assert_allclose(seg.states[-1], p0, atol=1e-8)


def test_dense_output_against_restart():
    system, _, lib = model("pwl-b")
    p0 = np.array([0.5, 0.0, 0.0])
    seg = integrate_side(system, "+", p0, 1.0)
    for t in np.linspace(0.05, 0.95, 7):
        np.testing.assert_allclose(seg(t), lib.flow("+", t, p0), atol=1e-9)


@pytest.mark.parametrize("name, u, tau", [
    ("pwl-a", 1.0, math.pi / 2),
    ("pwl-quadratic", 2.0, math.atan(20 / 21)),
    ("parab-y", 0.3, math.acos(-0.8)),
])
def test_find_return_examples(name, u, tau):
    system, seed, _ = model(name)
    ev = find_return(system, "+", seed_point(system, seed, u), "forward")
    assert ev.tau == pytest.approx(tau, abs=1e-8)
    assert abs(system.h(ev.point)) <= 1e-12
    assert ev.transversal_speed < 0


def test_no_return_and_grazing():
    system, _, _ = model("pwl-b")
    # outside |x| < 1 the + orbit of pwl-b escapes without returning
    with pytest.raises(NoReturnError):
        find_return(system, "+", (1.5, 0.0, 0.0), "forward", t_max=5.0)
    with pytest.raises(FlowError, match="escaped"):
        find_return(system, "+", (1.5, 0.0, 0.0), "forward", t_max=50.0)
    pwl_a, _, _ = model("pwl-a")
    with pytest.raises(GrazingError):
        find_return(pwl_a, "+", (0.0, 0.0, 0.0), "forward")


@pytest.mark.parametrize("name", FAMILIES)
def test_group_property(name):
    system, seed, _ = model(name)
    rng = np.random.default_rng(11)
    for u in seed.grid(5):
        p = seed_point(system, seed, u)
        t, s = rng.uniform(0.05, 0.6, size=2)
        direct = integrate_side(system, "+", p, t + s).states[-1]
        mid = integrate_side(system, "+", p, s).states[-1]
        np.testing.assert_allclose(integrate_side(system, "+", mid, t).states[-1], direct, atol=1e-9)


def test_fundamental_matrix_identity_and_closed_form():
    system, _, lib = model("pwl-a")
    p0 = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(fundamental_matrix(system, "+", p0, 0.0), np.eye(3))
    W = fundamental_matrix(system, "+", p0, 1.0)
    np.testing.assert_allclose(W, _analytic_jacobian(lib, "+", 1.0, p0), atol=1e-8)


@pytest.mark.parametrize("name, t", [("pwl-a", 1.2), ("pwl-b", -0.8), ("parab-x2", 2.0)])
def test_liouville(name, t):
    system, seed, _ = model(name)
    p0 = seed_point(system, seed, seed.grid(3)[1])
    W = fundamental_matrix(system, "+", p0, t)
    seg = integrate_side(system, "+", p0, t)
    nodes, weights = np.polynomial.legendre.leggauss(24)
    ts = 0.5 * t * (nodes + 1)
    trace = sum(w * np.trace(system.dx0("+", seg(s))) for s, w in zip(ts, weights)) * 0.5 * t
    assert np.linalg.det(W) == pytest.approx(math.exp(trace), rel=1e-7)


def test_liouville_pwl_a_closed_form():
    # trace of the pwl-a linear part is 1
    system, _, _ = model("pwl-a")
    W = fundamental_matrix(system, "+", (0.7, 0.0, 0.0), 1.5)
    assert np.linalg.det(W) == pytest.approx(math.exp(1.5), rel=1e-8)


def test_omega_zero_time_and_fd_in_eps():
    # X1+ = (0, 1, 0): constant term of the y-component
    pert = builtin_model("pwl-a", {"alpha0p": 1.0})[0]
    p0 = np.array([1.0, 0.0, 0.0])
    assert not np.any(omega(pert, "+", p0, 0.0))
    t = math.pi / 2
    w = omega(pert, "+", p0, t)
    e = 1e-6
    fd = (integrate_side(pert, "+", p0, t, e).states[-1] - integrate_side(pert, "+", p0, t, -e).states[-1]) / (2 * e)
    np.testing.assert_allclose(w, fd, atol=1e-6)
    assert pert.x1("+", p0) == pytest.approx([0.0, 1.0, 0.0])


@pytest.mark.parametrize("name", ["pwl-quadratic", "parab-y"])
def test_omega_ivp_matches_integral(name):
    system, seed, _ = model(name)
    rng = np.random.default_rng(5)
    pert = system.with_coefficients(rng.standard_normal(len(system.perturbation_coefficients)))
    p0 = seed_point(system, seed, seed.grid(5)[2])
    w_ivp = omega(pert, "+", p0, 0.7)
    w_int = omega(pert, "+", p0, 0.7, method="integral")
    np.testing.assert_allclose(w_ivp, w_int, atol=1e-8 * max(1.0, np.max(np.abs(w_ivp))))


def test_y_sensitivity():
    system, _, lib = model("pwl-a")
    p0 = np.array([0.8, 0.0, 0.0])
    np.testing.assert_array_equal(y_sensitivity(system, "+", p0, 0.0), [[0.0], [1.0], [0.0]])
    tau = lib.value("tau_plus", 0.8)
    Y = y_sensitivity(system, "+", p0, tau)
    np.testing.assert_allclose(Y[:, 0], _analytic_jacobian(lib, "+", tau, p0)[:, 1], atol=1e-8)


def test_quadratic_dg_dy_factor():
    quad = builtin_model("pwl-quadratic", {"c": 0.3, "d": 0.2})[0]
    u = 2.5
    assert quad.g_grad((u, 0.0))[1] == pytest.approx(0.3 * u)


def test_dt_deps_zero_without_perturbation():
    system, _, _ = model("pwl-a")
    assert dt_deps(system, "+", 1.0, 0.0) == 0.0


def test_dt_deps_against_perturbed_return():
    pert = builtin_model("pwl-a", {"alpha0p": 1.0})[0]
    p0 = np.array([1.0, 0.0, 0.0])
    e = 1e-6
    tp = find_return(pert, "+", p0, "forward", e).tau
    tm = find_return(pert, "+", p0, "forward", -e).tau
    assert dt_deps(pert, "+", 1.0, 0.0) == pytest.approx((tp - tm) / (2 * e), abs=1e-5)


@pytest.mark.parametrize("side", ["+", "-"])
def test_dt_dy_against_fd(side):
    system, _, _ = model("pwl-a")
    direction = "forward" if side == "+" else "backward"
    h = 1e-6
    tp = find_return(system, side, (1.0, h, 0.0), direction).tau
    tm = find_return(system, side, (1.0, -h, 0.0), direction).tau
    assert dt_dy(system, side, 1.0, 0.0)[0] == pytest.approx((tp - tm) / (2 * h), abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=0.1, max_value=2.9))
def test_closure_of_seed_orbits(u):
    system, seed, _ = model("pwl-a")
    p0 = seed_point(system, seed, u)
    fwd = find_return(system, "+", p0, "forward")
    bwd = find_return(system, "-", p0, "backward")
    assert np.max(np.abs(fwd.point - bwd.point)) <= 1e-8


def test_custom_tolerances_are_used():
    system, _, _ = model("pwl-a")
    loose = Tolerances(rtol=1e-6, atol=1e-8)
    tight = integrate_side(system, "+", (1.0, 0.0, 0.0), 3.0)
    rough = integrate_side(system, "+", (1.0, 0.0, 0.0), 3.0, tols=loose)
    assert len(rough.times) < len(tight.times)


def test_backward_equals_time_reversed_forward():
    sys = PiecewiseSystem(n=1, m=1, x0_plus=("z", "-x"), x0_minus=("z", "-x"),
                          x1_plus=("0", "0"), x1_minus=("0", "0"), g="0")
    seg = integrate_side(sys, "+", (1.0, 0.0), -math.pi / 3)
    np.testing.assert_allclose(seg.states[0], [math.cos(math.pi / 3), math.sin(math.pi / 3)], atol=1e-10)
