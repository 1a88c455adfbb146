from __future__ import annotations

import numpy as np
import pytest

from _support import cmap, model, scale_fn
from pwmel.builtins import builtin_model
from pwmel.melnikov import crossing_data
from pwmel.validate import (
    ValidationError,
    closure_gap,
    convergence_study,
    displacement,
    refine_periodic_orbit,
)
from pwmel.zeros import realize_zero_count


@pytest.fixture(scope="module")
def pwl_a_pair():
    system, seed, _ = model("pwl-a")
    real = realize_zero_count(system, seed, (0.5, 1.5), scale=scale_fn("pwl-a"),
                              scan_nodes=40, cmap=cmap("pwl-a"))
    return system.with_coefficients(real.coefficients), seed


def test_unperturbed_displacement_vanishes():
    system, seed, _ = model("parab-x2")
    for u in seed.grid(4):
        d = displacement(system, u, seed.v(u), 0.0)
        assert np.max(np.abs(d)) <= 1e-9
        assert abs(d[-1]) <= 1e-10


def test_displacement_first_order_is_alpha():
    system, seed, _ = builtin_model("pwl-a", {"alpha0p": 1.0})
    u, e = 1.0, 1e-4
    d = (displacement(system, u, 0.0, e) - displacement(system, u, 0.0, 0.0)) / e
    alpha = crossing_data(system, seed, u).alpha
    np.testing.assert_allclose(d[:-1], alpha[:-1], atol=1e-3 * max(1.0, np.max(np.abs(alpha))))


def test_displacement_y_derivative_is_beta():
    system, seed, _ = model("parab-flat")
    u, h = 1.2, 1e-5
    y = seed.v(u)
    d = (displacement(system, u, y + h, 0.0) - displacement(system, u, y - h, 0.0)) / (2 * h)
    beta = crossing_data(system, seed, u).beta[:, 0]
    np.testing.assert_allclose(d[:-1], beta[:-1], atol=1e-5 * max(1.0, np.max(np.abs(beta))))


def test_zero_eps_needs_no_iterations():
    system, seed, _ = model("pwl-b")
    orbit = refine_periodic_orbit(system, seed, 0.4, 0.0)
    assert orbit.iterations == 0 and orbit.closure_residual <= 1e-10
    assert orbit.period == pytest.approx(2 * np.log(1.4 / 0.6), abs=1e-9)


def test_orbits_near_melnikov_zeros(pwl_a_pair):
    system, seed = pwl_a_pair
    for target in (0.5, 1.5):
        orbit = refine_periodic_orbit(system, seed, target, 1e-3)
        assert abs(orbit.u[0] - target) <= 2e-3
        assert orbit.closure_residual <= 1e-10
        assert closure_gap(system, orbit) <= 1e-8


def test_negative_eps(pwl_a_pair):
    system, seed = pwl_a_pair
    orbit = refine_periodic_orbit(system, seed, 0.5, -1e-3)
    assert abs(orbit.u[0] - 0.5) <= 2e-3 and orbit.eps == -1e-3


def test_local_uniqueness(pwl_a_pair):
    system, seed = pwl_a_pair
    found = [refine_periodic_orbit(system, seed, 1.5 + d, 1e-3).u[0] for d in (-0.02, -0.01, 0.0, 0.01, 0.02)]
    assert np.ptp(found) <= 1e-9


def test_eps_guard_and_lost_crossing():
    system, seed, _ = model("pwl-a")
    with pytest.raises(ValueError):
        refine_periodic_orbit(system, seed, 1.0, 0.05)
    pwl_b, seed_b, _ = model("pwl-b")
    with pytest.raises(ValidationError):
        refine_periodic_orbit(pwl_b, seed_b.with_box([(0.05, 2.0)]), 1.5, 1e-3)


def test_convergence_study_is_first_order(pwl_a_pair):
    system, seed = pwl_a_pair
    table = convergence_study(system, seed, 0.5, (1.25e-3, 5e-3, 2.5e-3))
    assert list(table.eps) == [5e-3, 2.5e-3, 1.25e-3]
    assert table.monotone
    np.testing.assert_allclose(table.ratios, 0.5, atol=0.05)
    assert np.all(table.closure <= 1e-8)
    rows = table.rows()
    assert set(rows[0]) == {"eps", "u", "distance", "iterations", "closure"}
    with pytest.raises(ValueError):
        convergence_study(system, seed, 0.5, (1e-3, -1e-3))
