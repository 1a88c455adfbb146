from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import FAMILIES, cmap, model, random_coefficients
from pwmel.builtins import builtin_model
from pwmel.melnikov import (
    SingularBetaError,
    coefficient_map,
    crossing_data,
    ls_reduction,
    melnikov,
    melnikov_scan,
    projector,
)
from pwmel.model import PiecewiseSystem, SeedManifold, seed_point

finite = st.floats(min_value=-10, max_value=10, allow_nan=False)


def _rotation_model():
    """Rotation in the (x, z) plane with y frozen: y-sensitivities cancel across sides."""
    system = PiecewiseSystem(
        n=1, m=2, x0_plus=("-z", "0", "x"), x0_minus=("-z", "0", "x"),
        x1_plus=("a", "0", "0"), x1_minus=("0", "0", "0"), g="0",
        params={"a": 1.0}, perturbation_coefficients=("a",),
    )
    return system, SeedManifold(((0.5, 2.0),), ("0",), "rotation")


@pytest.mark.parametrize("name", FAMILIES)
def test_projector_identities(name):
    system, seed, _ = model(name)
    rng = np.random.default_rng(3)
    for u in seed.grid(4):
        p = seed_point(system, seed, u) + np.array([0.0, 0.0, 1e-3])
        for side in ("+", "-"):
            P = projector(system, side, p)
            assert np.max(np.abs(P @ system.x0(side, p))) <= 1e-12
            w = rng.standard_normal(3)
            assert abs(system.grad_h(p) @ (P @ w)) <= 1e-12 * max(1.0, np.max(np.abs(w)))


def test_projector_vertical_field():
    system = PiecewiseSystem(n=1, m=2, x0_plus=("0", "0", "1"), x0_minus=("0", "0", "1"),
                             x1_plus=("0",) * 3, x1_minus=("0",) * 3, g="0")
    np.testing.assert_array_equal(projector(system, "+", (0.3, -1.0, 0.0)), np.diag([1.0, 1.0, 0.0]))


def test_ls_reduction_examples():
    g1 = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(ls_reduction(np.zeros((3, 0)), np.zeros((0, 0)), g1), g1)
    np.testing.assert_allclose(ls_reduction([[0.0]], [[2.0]], [5.0, 7.0]), [5.0])
    with pytest.raises(SingularBetaError):
        ls_reduction([[1.0]], [[0.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        ls_reduction([[1.0, 2.0]], [[1.0]], [1.0, 1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(finite, finite.filter(lambda d: abs(d) > 1e-3), finite, finite)
def test_ls_reduction_scalar(gamma, delta, a, b):
    got = ls_reduction([[gamma]], [[delta]], [a, b])[0]
    assert got == pytest.approx(a - gamma * b / delta, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name, u, expected, tol", [
    ("pwl-a", 1.0, 2 * math.sinh(math.pi / 2), 1e-7),
    ("pwl-b", 0.5, 8.0 / 3.0, 1e-7),
    ("parab-flat", 0.8, math.exp(-math.pi) - math.exp(math.pi), 1e-6),
    ("parab-flat", 1.7, math.exp(-math.pi) - math.exp(math.pi), 1e-6),
])
def test_pi2_beta_examples(name, u, expected, tol):
    system, seed, lib = model(name)
    cd = crossing_data(system, seed, u)
    assert cd.pi2_beta_det == pytest.approx(expected, abs=tol)
    assert cd.pi2_beta_det == pytest.approx(lib.value("beta", u), abs=tol)


@pytest.mark.parametrize("name", FAMILIES)
def test_alpha_beta_tangent_to_sigma(name):
    system, seed, _ = model(name)
    rng = np.random.default_rng(8)
    pert = system.with_coefficients(random_coefficients(system, rng))
    cd = crossing_data(pert, seed, seed.grid(3)[1])
    gh = system.grad_h(cd.endpoint)
    assert abs(gh @ cd.alpha) <= 1e-8 * max(1.0, np.max(np.abs(cd.alpha)))
    assert np.all(np.abs(gh @ cd.beta) <= 1e-8 * max(1.0, np.max(np.abs(cd.beta))))


def test_pwl_a_single_coefficient_closed_form():
    system, seed, lib = builtin_model("pwl-a", {"alpha0p": 1.0})
    for u in (0.3, 1.0, 2.2):
        expected = 1.0 - math.tanh(math.atan(u)) / u
        assert lib.melnikov({"alpha0p": 1.0}, u) == pytest.approx(expected, abs=1e-12)
        assert melnikov(system, seed, u)[0] == pytest.approx(expected, abs=1e-9)
    assert melnikov(system, seed, 1.0)[0] == pytest.approx(0.3442058, abs=1e-6)


@pytest.mark.parametrize("name", ["pwl-a", "pwl-b"])
def test_printed_coefficient_maps(name):
    system, seed, lib = model(name)
    rng = np.random.default_rng(21)
    coeffs = random_coefficients(system, rng)
    pert = system.with_coefficients(coeffs)
    for u in seed.grid(4):
        assert melnikov(pert, seed, u)[0] == pytest.approx(lib.melnikov(coeffs, u), abs=1e-8)


@pytest.mark.parametrize("name", FAMILIES)
def test_zero_perturbation_gives_zero(name):
    system, seed, _ = model(name)
    scan = melnikov_scan(system, seed, 6)
    assert np.all(scan.h1_pass)
    assert np.max(np.abs(scan.values)) == 0.0


@pytest.mark.parametrize("name", ["pwl-quadratic", "parab-y"])
def test_superposition(name):
    system, seed, _ = model(name)
    rng = np.random.default_rng(4)
    a = random_coefficients(system, rng)
    b = random_coefficients(system, rng)
    both = {k: a[k] + 2 * b[k] for k in a}
    u = seed.grid(5)[3]
    ma = melnikov(system.with_coefficients(a), seed, u)
    mb = melnikov(system.with_coefficients(b), seed, u)
    mab = melnikov(system.with_coefficients(both), seed, u)
    assert mab == pytest.approx(ma + 2 * mb, abs=1e-9 * max(1.0, abs(ma[0]) + abs(mb[0])))


@pytest.mark.parametrize("name", FAMILIES)
def test_coefficient_map_matches_direct(name):
    system, seed, _ = model(name)
    cm = cmap(name)
    rng = np.random.default_rng(13)
    coeffs = random_coefficients(system, rng)
    vec = np.array([coeffs[k] for k in cm.names])
    pert = system.with_coefficients(coeffs)
    predicted = cm(vec)
    for k in (0, len(cm.grid) // 2, len(cm.grid) - 1):
        direct = melnikov(pert, seed, cm.grid[k])[0]
        assert direct == pytest.approx(predicted[k], abs=1e-9 * max(1.0, cm.magnitude(vec)[k]))


def test_coefficient_map_explicit_grid_shapes():
    system, seed, _ = model("pwl-b")
    cm = coefficient_map(system, seed, [0.2, 0.6])
    assert cm.matrix.shape == (2, len(system.perturbation_coefficients))
    assert cm.pi2_beta_det == pytest.approx([-4 * u / (u * u - 1) for u in (0.2, 0.6)], abs=1e-8)


def test_singular_beta_detected():
    system, seed = _rotation_model()
    cd = crossing_data(system, seed, 1.0)
    assert abs(cd.pi2_beta_det) <= 1e-10
    with pytest.raises(SingularBetaError):
        melnikov(system, seed, 1.0)
    scan = melnikov_scan(system, seed, 5)
    assert np.all(scan.h1_pass) and np.all(np.isnan(scan.values))
    assert scan.messages and "singular" in scan.messages[0]
    with pytest.raises(SingularBetaError):
        coefficient_map(system, seed, [1.0])


def test_scan_rows_and_grid():
    system, seed, _ = builtin_model("pwl-a", {"alpha0p": 1.0})
    scan = melnikov_scan(system, seed, 16)
    assert len(scan.grid) == 16 and scan.box == seed.v_box
    rows = scan.rows()
    assert set(rows[0]) == {"u", "M", "pi2_beta_det", "h1_pass"}
    for r in rows:
        assert r["M"] == pytest.approx(1 - math.tanh(math.atan(r["u"])) / r["u"], abs=1e-9)
