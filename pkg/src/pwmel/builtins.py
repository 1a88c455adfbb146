"""Built-in example families and their closed-form oracles.

Every model is stored after the coordinate swap that turns the switching
surface into a graph ``z = g(x, y)``.

Piecewise linear families (``pwl-a``, ``pwl-b``, ``pwl-quadratic``) use the
unperturbed fields ``(-+z -+ 1, y, x + y)`` and a general affine perturbation
with 12 coefficients per side::

    x' = beta0 + beta2 x + beta1 y + beta3 z
    y' = alpha0 + alpha2 x + alpha1 y + alpha3 z
    z' = kappa0 + kappa2 x + kappa1 y + kappa3 z

with names such as ``alpha0p`` / ``alpha0m`` for the ``+`` / ``-`` sides.

The paraboloid families share ``X0 = (-z, lam (x^2 + z^2 - y), x)`` and perturb
by a general quadratic per side. Coefficients ``p{l}_{ijk}{p|m}`` multiply
``x^i y^j z^k`` in component ``l`` of the field written in the unswapped
coordinates ``(x, y, z) -> (x, z, y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

from .expr import Expression, evaluate, parse_expression
from .model import ModelError, PiecewiseSystem, SeedManifold

__all__ = ["BUILTIN_NAMES", "ClosedFormLibrary", "builtin_model", "pwl_coefficient_names", "paraboloid_coefficient_names"]

BUILTIN_NAMES = ("pwl-a", "pwl-b", "pwl-quadratic", "parab-flat", "parab-y", "parab-x2")

_SIDES = (("p", "+"), ("m", "-"))


def pwl_coefficient_names() -> list[str]:
    return [f"{g}{i}{s}" for g in ("alpha", "beta", "kappa") for i in range(4) for s, _ in _SIDES]


def _pwl_x1(s: str) -> tuple[str, str, str]:
    def comp(g):
        return f"{g}0{s} + {g}2{s}*x + {g}1{s}*y + {g}3{s}*z"

    return comp("beta"), comp("alpha"), comp("kappa")


_MONOMIALS = [(i, j, k) for i in range(3) for j in range(3) for k in range(3) if i + j + k <= 2]


def paraboloid_coefficient_names() -> list[str]:
    return [f"p{l}_{i}{j}{k}{s}" for s, _ in _SIDES for l in (1, 2, 3) for (i, j, k) in _MONOMIALS]


def _parab_x1(s: str) -> tuple[str, str, str]:
    # original (x, y, z) is new (x, z, y); new components are (P1, P3, P2)
    def poly(l):
        terms = []
        for i, j, k in _MONOMIALS:
            mono = "*".join(["x"] * i + ["z"] * j + ["y"] * k)
            name = f"p{l}_{i}{j}{k}{s}"
            terms.append(f"{name}*{mono}" if mono else name)
        return " + ".join(terms)

    return poly(1), poly(3), poly(2)


# ---------------------------------------------------------------------- closed forms


@dataclass(frozen=True)
class ClosedFormLibrary:
    """Analytic oracles for one built-in model.

    Scalar entries are expression strings in ``u`` (structural parameters such
    as ``c`` or ``lam`` are bound at parse time). ``scale`` is the factor that
    maps the Melnikov function into ``span(basis)``. ``flow_plus`` /
    ``flow_minus`` are strings in ``(t, x, y, z)``.
    """

    name: str
    tau_plus: str
    tau_minus: str
    beta: str
    basis: tuple[str, ...]
    scale: str
    zero_count: int
    wronskian_family: tuple[str, ...]
    wronskian_interval: tuple[float, float]
    flow_plus: tuple[str, ...] | None = None
    flow_minus: tuple[str, ...] | None = None
    params: Mapping[str, float] = field(default_factory=dict)
    l_maps: Callable[[Mapping[str, float]], tuple[float, ...]] | None = None
    l_weights: tuple[float, ...] | None = None

    @cached_property
    def _exprs(self) -> dict[str, Expression]:
        p = dict(self.params)
        out = {k: parse_expression(getattr(self, k), ("u",), p) for k in ("tau_plus", "tau_minus", "beta", "scale")}
        for i, s in enumerate(self.basis):
            out[f"f{i}"] = parse_expression(s, ("u",), p)
        return out

    def basis_exprs(self) -> list[Expression]:
        return [self._exprs[f"f{i}"] for i in range(len(self.basis))]

    def wronskian_exprs(self) -> list[Expression]:
        return [parse_expression(s, ("u",), dict(self.params)) for s in self.wronskian_family]

    def value(self, key: str, u: float) -> float:
        return evaluate(self._exprs[key], [float(u)])

    def values(self, key: str, us) -> np.ndarray:
        return np.array([self.value(key, u) for u in np.atleast_1d(us)])

    def basis_matrix(self, us) -> np.ndarray:
        us = np.atleast_1d(us)
        return np.array([[self.value(f"f{i}", u) for i in range(len(self.basis))] for u in us])

    def flow(self, side: str, t: float, p) -> np.ndarray:
        src = self.flow_plus if side == "+" else self.flow_minus
        if src is None:
            raise ModelError(f"{self.name}: no analytic flow recorded")
        pt = [float(t), *map(float, p)]
        return np.array([evaluate(parse_expression(s, ("t", "x", "y", "z"), dict(self.params)), pt) for s in src])

    def melnikov(self, coeffs: Mapping[str, float], u: float) -> float:
        """Closed-form Melnikov value from the printed L-maps (piecewise linear a/b only)."""
        if self.l_maps is None:
            raise ModelError(f"{self.name}: no printed coefficient maps")
        L = self.l_maps(coeffs)
        f = [self.value(f"f{i}", u) for i in range(len(self.basis))]
        return sum(w * li * fi for w, li, fi in zip(self.l_weights, L, f)) / self.value("scale", u)


def _lmaps_a(c):
    A = lambda i, s: c.get(f"alpha{i}{s}", 0.0)
    B = lambda i, s: c.get(f"beta{i}{s}", 0.0)
    K = lambda i, s: c.get(f"kappa{i}{s}", 0.0)
    L0 = (-A(0, "m") + A(0, "p") - A(3, "m") - A(3, "p") + B(2, "m") + B(2, "p")
          + 2 * K(0, "m") - 2 * K(0, "p") + K(3, "m") + K(3, "p"))
    L1 = A(2, "m") + A(2, "p") - A(3, "m") - A(3, "p") + 2 * (B(2, "m") + B(2, "p")) + 2 * (K(3, "m") + K(3, "p"))
    L2 = 2 * A(0, "m") - 2 * A(0, "p") + A(2, "m") + A(2, "p") + A(3, "m") + A(3, "p")
    return L0, L1, L2


def _lmaps_b(c):
    A = lambda i, s: c.get(f"alpha{i}{s}", 0.0)
    B = lambda i, s: c.get(f"beta{i}{s}", 0.0)
    K = lambda i, s: c.get(f"kappa{i}{s}", 0.0)
    L0 = (-4 * A(0, "m") + 4 * A(0, "p") - A(2, "m") - A(2, "p") + 3 * A(3, "m") + 3 * A(3, "p")
          - 4 * (B(2, "m") + B(2, "p")) + 8 * K(0, "m") - 8 * K(0, "p") - 4 * K(3, "m") - 4 * K(3, "p"))
    L1 = (4 * A(0, "m") - 4 * A(0, "p") + A(2, "m") + A(2, "p") - 3 * A(3, "m") - 3 * A(3, "p")
          + 4 * (B(2, "m") + B(2, "p")) + 4 * (K(3, "m") + K(3, "p")))
    L2 = A(2, "m") + A(2, "p") + A(3, "m") + A(3, "p")
    return L0, L1, L2


_FLOW_A = {
    "+": ("x*cos(t) - y*exp(t)/2 + y*(sin(t) + cos(t))/2 - z*sin(t) - sin(t)",
          "y*exp(t)",
          "x*sin(t) + y*exp(t)/2 - y*(cos(t) - sin(t))/2 + z*cos(t) + cos(t) - 1"),
    "-": ("x*cos(t) - y*exp(t)/2 + y*(sin(t) + cos(t))/2 - z*sin(t) + sin(t)",
          "y*exp(t)",
          "x*sin(t) + y*exp(t)/2 - y*(cos(t) - sin(t))/2 + z*cos(t) - cos(t) + 1"),
}
_FLOW_B = {
    "+": ("t*y*exp(t)/2 + x*cosh(t) - y*exp(t)/4 + y*exp(-t)/4 + z*sinh(t) - sinh(t)",
          "y*exp(t)",
          "t*y*exp(t)/2 + x*sinh(t) + y*exp(t)/4 - y*exp(-t)/4 + z*cosh(t) - cosh(t) + 1"),
    "-": ("t*y*exp(t)/2 + x*cosh(t) - y*exp(t)/4 + y*exp(-t)/4 + z*sinh(t) + sinh(t)",
          "y*exp(t)",
          "t*y*exp(t)/2 + x*sinh(t) + y*exp(t)/4 - y*exp(-t)/4 + z*cosh(t) + cosh(t) - 1"),
}
_FLOW_PARAB = (
    "x*cos(t) - z*sin(t)",
    "(x^2 + z^2) + (y - x^2 - z^2)*exp(-lam*t)",
    "x*sin(t) + z*cos(t)",
)

_TAU_Q_PLUS = "atan(2*(u^3 + u)/(u^4 + u^2 + 1))"
_TAU_Q_MINUS = "atan(2*u*(u^2 - 1)/(u^4 - 3*u^2 + 1)) - 2*pi"


def _quadratic_basis() -> tuple[str, ...]:
    t1, t2 = f"({_TAU_Q_PLUS})", f"({_TAU_Q_MINUS})"
    e1, e2 = f"exp({t1})", f"exp({t2})"
    a0 = f"({e2}*({e1}*(2*(c - 1)*u + 1) - 1) - 2*(c - 1)*u - {e1} + 1)"
    de = f"({e1} - {e2})"
    return (
        a0,
        f"u*{de}",
        f"u^2*{a0}",
        f"u^3*{de}",
        f"{t2}*(2*u^6 + u^4 - u^2 + 3)*{de} - 2*pi*(u^2 - 3)*({e2}*({e1}*(2*(c - 1)*u + 1) - 1) - 2*c*u - {e1} + 2*u + 1)",
        f"u^5*{de}",
        f"{t1}*(2*u^2 - 1)*(u^4 + 3*u^2 + 1)*{de}",
        f"pi*(2*u*(2*(c - 1)*u + 1)^2*exp({t1} + {t2}) - 2*u*(1 - 2*(c - 1)*u)^2)",
    )


_ATANH = "(log((1 + u)/(1 - u))/2)"
_PARAB_Y_T = "acos(-sqrt(1 - 4*u^2))"
_PARAB_X2_T = "atan(2*u/(u^2 - 1))"


def _library(name: str, params: Mapping[str, float]) -> ClosedFormLibrary:
    if name == "pwl-a":
        return ClosedFormLibrary(
            name, "2*atan(u)", "-2*atan(u)", "2*sinh(2*atan(u))",
            basis=("u", "(u^2 + 1)*atan(u)", "tanh(atan(u))"), scale="2*u", zero_count=2,
            wronskian_family=("u", "(u^2 + 1)*atan(u)", "tanh(atan(u))"), wronskian_interval=(0.02, 0.5),
            flow_plus=_FLOW_A["+"], flow_minus=_FLOW_A["-"], params=params,
            l_maps=_lmaps_a, l_weights=(2.0, -1.0, 1.0),
        )
    if name == "pwl-b":
        return ClosedFormLibrary(
            name, "log((1 + u)/(1 - u))", "log((1 - u)/(1 + u))", "-4*u/(u^2 - 1)",
            basis=("u", f"(u^2 - 1)*{_ATANH}", f"u*(u^2 - 1)*{_ATANH}^2"), scale="8*u", zero_count=2,
            wronskian_family=("u", f"(u^2 - 1)*{_ATANH}", f"u*(u^2 - 1)*{_ATANH}^2"), wronskian_interval=(0.02, 0.5),
            flow_plus=_FLOW_B["+"], flow_minus=_FLOW_B["-"], params=params,
            l_maps=_lmaps_b, l_weights=(2.0, -2.0, 4.0),
        )
    if name == "pwl-quadratic":
        basis = _quadratic_basis()
        return ClosedFormLibrary(
            name, _TAU_Q_PLUS, _TAU_Q_MINUS, f"exp({_TAU_Q_PLUS}) - exp({_TAU_Q_MINUS})",
            basis=basis,
            scale=f"4*pi*u*(4*u^4 + 4*u^2 - 3)*(exp({_TAU_Q_PLUS}) - exp({_TAU_Q_MINUS}))",
            zero_count=7, wronskian_family=basis, wronskian_interval=(2.05, 2.3),
            flow_plus=_FLOW_A["+"], flow_minus=_FLOW_A["-"], params=params,
        )
    if name == "parab-flat":
        basis = ("1", "u", "u^2", "u^3", "u^4")
        return ClosedFormLibrary(
            name, "pi", "-pi", "exp(-pi*lam) - exp(pi*lam)",
            basis=basis, scale="exp(-pi*lam) - exp(pi*lam)", zero_count=4,
            wronskian_family=basis, wronskian_interval=(0.5, 2.0),
            flow_plus=_FLOW_PARAB, flow_minus=_FLOW_PARAB, params=params,
        )
    if name == "parab-y":
        s, t = "sqrt(1 - 4*u^2)", f"({_PARAB_Y_T})"
        basis = ("u", "u^2", "u^3", f"u*{s}", f"u^2*{t}", f"{s} - 1", f"({s} - 1)*{t}")
        return ClosedFormLibrary(
            name, _PARAB_Y_T, f"{_PARAB_Y_T} - 2*pi", f"-(exp(2*pi*lam) - 1)*{s}*exp(-lam*{t})",
            basis=basis, scale="u", zero_count=6,
            wronskian_family=basis, wronskian_interval=(0.05, 0.24),
            flow_plus=_FLOW_PARAB, flow_minus=_FLOW_PARAB, params=params,
        )
    if name == "parab-x2":
        t = f"({_PARAB_X2_T})"
        basis = ("1", "u^2", "u^4", "u^6", "u^8", "u^3*(1 + u^2)^2", f"u^3*(1 + u^2)^2*{t}",
                 "u*(1 - 2*u^4 - u^6)", f"(u - 2*u^5 - u^7)*{t}")
        tau = f"pi + {t}"
        return ClosedFormLibrary(
            name, tau, f"{tau} - 2*pi", f"-(exp(2*pi*lam) - 1)*exp(-lam*({tau}))",
            basis=basis, scale="2*u^2 + 1", zero_count=8,
            wronskian_family=("1", "u^2", "u^4", "u^6", "u^8"), wronskian_interval=(0.05, 0.95),
            flow_plus=_FLOW_PARAB, flow_minus=_FLOW_PARAB, params=params,
        )
    raise ModelError(f"unknown built-in model {name!r}; choose from {', '.join(BUILTIN_NAMES)}")


# ---------------------------------------------------------------------- systems

_STRUCTURAL = {
    "pwl-a": {},
    "pwl-b": {},
    "pwl-quadratic": {"c": 0.0, "d": 0.0},
    "parab-flat": {"lam": 1.0},
    "parab-y": {"lam": 1.0},
    "parab-x2": {"lam": 1.0},
}

_SEEDS = {
    "pwl-a": ((0.05, 3.0), "0"),
    "pwl-b": ((0.05, 0.95), "0"),
    "pwl-quadratic": ((2.05, 4.0), "0"),
    "parab-flat": ((0.5, 2.0), "u^2"),
    "parab-y": ((0.05, 0.24), "(1 - sqrt(1 - 4*u^2))/2"),
    "parab-x2": ((0.05, 0.95), "u^2 + u^4"),
}

_G = {
    "pwl-a": "0",
    "pwl-b": "0",
    "pwl-quadratic": "x^2 + c*x*y + d*y^2",
    "parab-flat": "0",
    "parab-y": "y",
    "parab-x2": "x^2",
}


def builtin_model(name: str, params: Mapping[str, float] | None = None
                  ) -> tuple[PiecewiseSystem, SeedManifold, ClosedFormLibrary]:
    """System, seed manifold and closed-form oracles for a named example.

    Structural parameters (``c``, ``d`` for the quadratic switching surface,
    ``lam`` for the paraboloid drift) and perturbation coefficients default
    to the values in ``_STRUCTURAL`` and zero respectively.
    """
    if name not in BUILTIN_NAMES:
        raise ModelError(f"unknown built-in model {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    params = dict(params or {})
    pwl = name.startswith("pwl")
    coeff_names = pwl_coefficient_names() if pwl else paraboloid_coefficient_names()
    allowed = {**_STRUCTURAL[name], **{k: 0.0 for k in coeff_names}}
    unknown = set(params) - set(allowed)
    if unknown:
        raise ModelError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    bound = {**allowed, **{k: float(v) for k, v in params.items()}}

    if pwl:
        sg = "" if name == "pwl-b" else "-"
        x0p = (f"{sg}z - 1", "y", "x + y")
        x0m = (f"{sg}z + 1", "y", "x + y")
        x1p, x1m = _pwl_x1("p"), _pwl_x1("m")
    else:
        x0p = x0m = ("-z", "lam*(x^2 + z^2 - y)", "x")
        x1p, x1m = _parab_x1("p"), _parab_x1("m")

    system = PiecewiseSystem(
        n=1, m=2, x0_plus=x0p, x0_minus=x0m, x1_plus=x1p, x1_minus=x1m, g=_G[name],
        params=bound, perturbation_coefficients=tuple(coeff_names), name=name,
    )
    box, vmap = _SEEDS[name]
    structural = {k: bound[k] for k in _STRUCTURAL[name]}
    seed = SeedManifold((box,), (vmap,), label=name, params=structural)
    return system, seed, _library(name, structural)
