from __future__ import annotations

import json
import math

import jsonschema
import numpy as np
import pytest

from _support import FAMILIES, model
from pwmel.builtins import builtin_model
from pwmel.model import (
    MODEL_SCHEMA,
    ModelError,
    PiecewiseSystem,
    SeedManifold,
    Tolerances,
    check_h1,
    dump_model,
    lie_derivative,
    load_model,
    model_from_dict,
    model_to_dict,
    seed_point,
    switching_value,
)


def test_tolerances_validate_and_refine():
    with pytest.raises(ValueError):
        Tolerances(rtol=0.0)
    with pytest.raises(ValueError):
        Tolerances(t_max=-1.0)
    t = Tolerances().refined(4)
    assert t.rtol == pytest.approx(Tolerances().rtol / 4) and t.close == Tolerances().close


def test_system_shape_checks():
    with pytest.raises(ModelError):
        PiecewiseSystem(n=1, m=2, x0_plus=("x", "y"), x0_minus=("x", "y", "z"),
                        x1_plus=("0",) * 3, x1_minus=("0",) * 3, g="0")
    with pytest.raises(ModelError):
        PiecewiseSystem(n=2, m=1, x0_plus=("x",) * 2, x0_minus=("x",) * 2,
                        x1_plus=("0",) * 2, x1_minus=("0",) * 2, g="0")


def test_unknown_builtin_and_parameter():
    with pytest.raises(ModelError):
        builtin_model("pwl-z")
    with pytest.raises(ModelError):
        builtin_model("pwl-a", {"lam": 2.0})


def test_switching_value_examples():
    system, _, _ = model("parab-flat")
    assert switching_value(system, (1.0, 2.0, 0.5)) == 0.5
    quad, _, _ = model("pwl-quadratic")
    assert switching_value(quad, (0.0, 3.0, 9.0)) == 9.0  # c = d = 0 so g = x^2 = 0
    assert switching_value(quad, (3.0, 0.0, 9.0)) == 0.0
    u = 0.7
    assert switching_value(system, (u, u * u, u * u)) == pytest.approx(u * u)


@pytest.mark.parametrize("name", FAMILIES)
def test_seed_points_lie_on_sigma(name):
    system, seed, _ = model(name)
    for u in seed.grid(7):
        assert abs(switching_value(system, seed_point(system, seed, u))) <= 1e-14


def test_lie_derivative_examples():
    system, _, _ = model("pwl-a")
    for u in (0.2, 1.0, 2.5):
        assert lie_derivative(system, "+", (u, 0.0, 0.0)) == pytest.approx(u)
    # tangency: at (0, 0, z) the pwl-a field has zero h-component
    assert lie_derivative(system, "+", (0.0, 0.0, 0.3)) == 0.0

    parab, seed, _ = model("parab-x2")
    u = 0.4
    p = seed_point(parab, seed, u)
    step = 1e-6
    f = parab.x0("+", p)
    fd = (parab.h(p + step * f) - parab.h(p - step * f)) / (2 * step)
    assert lie_derivative(parab, "+", p) == pytest.approx(fd, abs=1e-8)


def test_closed_form_return_times():
    _, _, lib = model("pwl-a")
    assert lib.value("tau_plus", 1.0) == pytest.approx(math.pi / 2)
    _, _, lib = model("parab-flat")
    assert lib.value("tau_plus", 1.3) == pytest.approx(math.pi)
    assert lib.value("tau_minus", 1.3) == pytest.approx(-math.pi)
    _, _, lib = model("pwl-b")
    assert lib.value("tau_plus", 0.5) == pytest.approx(math.log(3.0), abs=1e-7)


@pytest.mark.parametrize("name", FAMILIES)
def test_check_h1_matches_closed_forms(name):
    system, seed, lib = model(name)
    for u in seed.grid(20):
        rep = check_h1(system, seed, u)
        assert rep.passed, rep.message
        assert rep.tau_plus == pytest.approx(lib.value("tau_plus", u), abs=1e-8)
        assert rep.tau_minus == pytest.approx(lib.value("tau_minus", u), abs=1e-8)
        lie = rep.transversality
        assert lie[0] > 0 and lie[1] > 0 and lie[2] < 0 and lie[3] < 0


def test_check_h1_pwl_a_reference_point():
    system, seed, _ = model("pwl-a")
    rep = check_h1(system, seed, 1.0)
    assert rep.passed
    assert rep.tau_plus == pytest.approx(math.pi / 2, abs=1e-9)
    assert rep.tau_minus == pytest.approx(-math.pi / 2, abs=1e-9)
    assert rep.closure_gap <= 1e-9


def test_check_h1_quadratic_reference_point():
    system, seed, _ = model("pwl-quadratic")
    u = 2.5
    rep = check_h1(system, seed, u)
    assert rep.passed
    assert rep.tau_plus == pytest.approx(math.atan(2 * (u**3 + u) / (u**4 + u**2 + 1)), abs=1e-8)


def test_check_h1_fails_outside_pwl_b_strip():
    system, seed, _ = model("pwl-b")
    rep = check_h1(system, seed.with_box([(0.5, 2.0)]), 1.5)
    assert not rep.passed and rep.message


def test_perturbation_basis_units():
    system, _, _ = model("pwl-a")
    basis = system.perturbation_basis()
    assert len(basis) == len(system.perturbation_coefficients)
    coeffs = np.zeros(len(basis))
    coeffs[3] = 1.0
    direct = system.with_coefficients(coeffs)
    p = (0.3, -0.2, 0.1)
    plus, minus = basis[3]
    np.testing.assert_allclose([e(*p) for e in plus], direct.x1("+", np.array(p)))
    np.testing.assert_allclose([e(*p) for e in minus], direct.x1("-", np.array(p)))
    with pytest.raises(ModelError):
        system.with_coefficients({"nope": 1.0})


def test_seed_grid_is_interior():
    _, seed, _ = model("parab-y")
    g = seed.grid(16)
    lo, hi = seed.v_box[0]
    assert g.shape == (16,) and lo < g.min() and g.max() < hi
    assert np.allclose(np.diff(g), (hi - lo) / 16)
    with pytest.raises(ValueError):
        SeedManifold(((0.0, 1.0), (0.0, 1.0)), (), "2d").grid(4)


@pytest.mark.parametrize("name", FAMILIES)
def test_model_json_round_trip(name, tmp_path):
    system, seed, _ = builtin_model(name, {} if name.startswith("parab") else {"alpha0p": 0.25})
    doc = model_to_dict(system, seed)
    jsonschema.validate(doc, MODEL_SCHEMA)
    path = tmp_path / "m.json"
    dump_model(system, seed, path)
    s2, seed2 = load_model(path)
    assert model_to_dict(s2, seed2) == doc
    p = seed_point(system, seed, seed.grid(3)[1])
    np.testing.assert_array_equal(s2.field("+", p, 0.01), system.field("+", p, 0.01))
    assert json.loads(dump_model(s2, seed2)) == doc


def test_malformed_documents(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 1, "m": 2,, }')
    with pytest.raises(ModelError, match="offset 16"):
        load_model(bad)
    system, seed, _ = model("pwl-a")
    doc = model_to_dict(system, seed)
    del doc["g"]
    with pytest.raises(ModelError):
        model_from_dict(doc)
    doc = model_to_dict(system, seed)
    doc["seed"]["v_map"] = []
    with pytest.raises(ModelError):
        model_from_dict(doc)
