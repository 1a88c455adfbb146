from __future__ import annotations

import math

import numpy as np
import pytest

from _support import cmap, model, scale_fn
from pwmel.builtins import builtin_model
from pwmel.expr import parse_expression
from pwmel.melnikov import melnikov, melnikov_scan
from pwmel.model import Tolerances
from pwmel.zeros import (
    InfeasibleTargetError,
    ZeroTolerances,
    chebyshev_points,
    ect_check,
    find_simple_zeros,
    realize_zero_count,
    wronskian,
)


def _u(*sources):
    return [parse_expression(s, ("u",)) for s in sources]


FA = _u("u", "(u^2 + 1)*atan(u)", "tanh(atan(u))")


@pytest.fixture(scope="module")
def pwl_a_two():
    system, seed, _ = model("pwl-a")
    return realize_zero_count(system, seed, (0.5, 1.5), scale=scale_fn("pwl-a"),
                              scan_nodes=80, cmap=cmap("pwl-a"))


def test_positive_melnikov_has_no_zeros():
    system, seed, _ = builtin_model("pwl-a", {"alpha0p": 1.0})
    zs = find_simple_zeros(melnikov_scan(system, seed, 40))
    assert list(zs) == [] and zs.diagnostic == ""


def test_identically_zero_melnikov_is_diagnosed():
    system, seed, _ = model("pwl-b")
    zs = find_simple_zeros(melnikov_scan(system, seed, 20))
    assert list(zs) == [] and "degenerate" in zs.diagnostic


def test_realized_pair_is_certified(pwl_a_two):
    certs = pwl_a_two.certificates
    assert len(certs) == 2 and all(c.certified for c in certs)
    np.testing.assert_allclose([c.u_star[0] for c in certs], [0.5, 1.5], atol=1e-6)
    for c in certs:
        assert c.residual <= 1e-9 * c.scale
        assert c.jac_det == c.jacobian[0, 0] and abs(c.jac_det) > 0
        assert c.beta_det_at_zero == pytest.approx(2 * math.sinh(2 * math.atan(c.u_star[0])), rel=1e-8)
    d = certs[0].as_dict()
    assert d["certified"] is True and len(d["u_star"]) == 1


def test_certified_count_equals_sign_changes(pwl_a_two):
    v = pwl_a_two.scan.values[:, 0]
    assert np.count_nonzero(np.sign(v[1:]) != np.sign(v[:-1])) == len(pwl_a_two.certificates)


def test_zero_stable_under_finer_integration(pwl_a_two):
    system, seed, _ = model("pwl-a")
    realized = system.with_coefficients(pwl_a_two.coefficients)
    fine = Tolerances().refined(4)
    for c in pwl_a_two.certificates:
        u = c.u_star[0]
        scan = melnikov_scan(realized, seed, [u - 0.01, u + 0.01], fine)
        (again,) = find_simple_zeros(scan, tols=fine)
        assert abs(again.u_star[0] - u) <= 1e-7


def test_triple_zero_is_flagged_degenerate():
    system, seed, _ = model("parab-flat")
    cm = cmap("parab-flat")
    profile = (cm.grid - 1.0) ** 3
    coeffs, *_ = np.linalg.lstsq(cm.matrix, profile, rcond=None)
    realized = system.with_coefficients(coeffs)
    assert melnikov(realized, seed, 1.5)[0] == pytest.approx(0.125, rel=1e-6)
    zs = find_simple_zeros(melnikov_scan(realized, seed, 15), ZeroTolerances(max_iter=8))
    assert len(zs) == 1
    assert abs(zs[0].u_star[0] - 1.0) < 1e-2
    assert not zs[0].nondegenerate and not zs[0].certified


def test_infeasible_targets():
    system, seed, _ = model("pwl-a")
    with pytest.raises(InfeasibleTargetError):
        realize_zero_count(system, seed, (0.01, 1.0), cmap=cmap("pwl-a"))
    # the pwl-a span is three-dimensional, so three zeros cannot be prescribed
    many = (0.5, 1.5, 2.9)
    with pytest.raises(InfeasibleTargetError):
        realize_zero_count(system, seed, many, fit_nodes=12)
    with pytest.raises(ValueError):
        realize_zero_count(system, seed, (0.7,), cmap=cmap("pwl-a"))


def test_wronskian_small_cases():
    for u in (0.05, 0.3, 1.7):
        assert wronskian(FA, u, 0) == u
    (f,) = _u("exp(u)*sin(u)")
    assert wronskian([f], 0.4, 0) == pytest.approx(math.exp(0.4) * math.sin(0.4), rel=1e-15)
    # W[1, u, u^2] = 2
    assert wronskian(_u("1", "u", "u^2"), 0.9, 2) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValueError):
        wronskian(FA, 0.3, 3)


def test_parab_y_w3_closed_form():
    _, _, lib = model("parab-y")
    fs = lib.wronskian_exprs()
    u = 0.1
    assert wronskian(fs, u, 3) == pytest.approx(-96 * u**5 / (1 - 4 * u * u) ** 2.5, rel=1e-6)


@pytest.mark.parametrize("name", ["pwl-a", "pwl-b", "pwl-quadratic", "parab-flat", "parab-y", "parab-x2"])
def test_wronskian_jet_vs_fd(name):
    _, _, lib = model(name)
    fs = lib.wronskian_exprs()
    k = len(fs) - 1
    for x in chebyshev_points(lib.wronskian_interval, 3):
        jet = wronskian(fs, x, k, method="jet")
        fd = wronskian(fs, x, k, method="fd")
        assert fd == pytest.approx(jet, rel=1e-5)


def test_ect_check_family_a():
    table = ect_check(FA, (0.02, 0.5), samples=200)
    assert table.is_ect and table.nonvanishing == (True, True, True)
    np.testing.assert_array_equal(table.values[0], table.samples)
    assert len(table.rows()) == 200


def test_ect_check_detects_dependence():
    table = ect_check(_u("u", "u", "u^2"), (0.1, 1.0), samples=30)
    assert table.nonvanishing[0] and not table.nonvanishing[1]
    assert not table.is_ect
    table = ect_check(_u("sin(u)", "2*sin(u) + u"), (0.2, 1.0), samples=20)
    assert table.is_ect


def test_chebyshev_points_inside():
    xs = chebyshev_points((0.5, 2.0), 9)
    assert len(xs) == 9 and 0.5 < xs[0] < xs[-1] < 2.0 and np.all(np.diff(xs) > 0)
