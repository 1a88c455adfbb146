"""Two-zone piecewise-smooth systems, seed manifolds and the (H1) check.

All systems live in coordinates where the switching manifold is the graph
``z = g(x, y)``; ``h(x, y, z) = z - g(x, y)`` is positive on the ``+`` zone.
The state is ordered ``(x_1..x_n, y_1..y_{m-n}, z)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .expr import CompiledFields, Expression, evaluate, evaluate_jet, parse_expression

__all__ = [
    "H1Report",
    "ModelError",
    "PiecewiseSystem",
    "SeedManifold",
    "StatePoint",
    "Tolerances",
    "check_h1",
    "h1_from_events",
    "seed_point",
    "state_scale",
    "dump_model",
    "lie_derivative",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "state_variable_names",
    "switching_value",
]

SIDES = ("+", "-")


class ModelError(ValueError):
    """Malformed model definition or bindings."""


def state_variable_names(n: int, m: int) -> tuple[str, ...]:
    xs = ("x",) if n == 1 else tuple(f"x{i + 1}" for i in range(n))
    k = m - n
    ys = ("y",) if k == 1 else tuple(f"y{i + 1}" for i in range(k))
    return xs + ys + ("z",)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by the flow, Melnikov and validation layers."""

    rtol: float = 1e-11
    atol: float = 1e-13
    close: float = 1e-9
    transversal: float = 1e-6
    event: float = 1e-12
    beta: float = 1e-10
    t_max: float = 100.0
    max_steps: int = 200_000

    def __post_init__(self):
        for name in ("rtol", "atol", "close", "transversal", "event", "beta", "t_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive")

    def refined(self, factor: float) -> "Tolerances":
        """Copy with integrator tolerances divided by ``factor``."""
        return Tolerances(
            rtol=self.rtol / factor, atol=self.atol / factor, close=self.close,
            transversal=self.transversal, event=self.event, beta=self.beta,
            t_max=self.t_max, max_steps=self.max_steps * 2,
        )


@dataclass(frozen=True)
class StatePoint:
    x: tuple[float, ...]
    y: tuple[float, ...]
    z: float

    def __array__(self, dtype=None, copy=None):
        return np.array([*self.x, *self.y, self.z], dtype=dtype or float)

    @classmethod
    def from_array(cls, arr, n: int) -> "StatePoint":
        arr = np.asarray(arr, dtype=float)
        return cls(tuple(arr[:n]), tuple(arr[n:-1]), float(arr[-1]))


def _parse_all(sources: Sequence[str], variables, params) -> tuple[Expression, ...]:
    return tuple(parse_expression(s, variables, params) for s in sources)


@dataclass(frozen=True)
class PiecewiseSystem:
    """``X0± + eps X1± + eps^2 R±`` on the two sides of ``z = g(x, y)``.

    Field entries are expression strings over the state variables (``R``
    additionally sees ``eps``). ``params`` are substituted at parse time.
    ``perturbation_coefficients`` names the params in which ``X1±`` is
    linear; ``coefficient_map`` differentiates with respect to them.
    """

    n: int
    m: int
    x0_plus: tuple[str, ...]
    x0_minus: tuple[str, ...]
    x1_plus: tuple[str, ...]
    x1_minus: tuple[str, ...]
    g: str
    params: Mapping[str, float] = field(default_factory=dict)
    r_plus: tuple[str, ...] | None = None
    r_minus: tuple[str, ...] | None = None
    perturbation_coefficients: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.n < 1 or self.m < self.n:
            raise ModelError(f"need 1 <= n <= m, got n={self.n}, m={self.m}")
        for key in ("x0_plus", "x0_minus", "x1_plus", "x1_minus", "r_plus", "r_minus"):
            val = getattr(self, key)
            if val is None:
                continue
            object.__setattr__(self, key, tuple(val))
            if len(val) != self.m + 1:
                raise ModelError(f"{key} has {len(val)} entries, expected m+1={self.m + 1}")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "perturbation_coefficients", tuple(self.perturbation_coefficients))
        # parse eagerly so malformed models fail at construction
        _ = self.fields

    # ------------------------------------------------------------------ layout

    @property
    def dim(self) -> int:
        return self.m + 1

    @property
    def variables(self) -> tuple[str, ...]:
        return state_variable_names(self.n, self.m)

    @property
    def x_index(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def y_index(self) -> np.ndarray:
        return np.arange(self.n, self.m)

    # ------------------------------------------------------------------ parsed fields

    @cached_property
    def fields(self) -> dict[str, tuple[Expression, ...]]:
        v = self.variables
        p = self.params
        out = {
            "x0+": _parse_all(self.x0_plus, v, p),
            "x0-": _parse_all(self.x0_minus, v, p),
            "x1+": _parse_all(self.x1_plus, v, p),
            "x1-": _parse_all(self.x1_minus, v, p),
        }
        ve = v + ("eps",)
        zero = ("0",) * self.dim
        out["r+"] = _parse_all(self.r_plus or zero, ve, p)
        out["r-"] = _parse_all(self.r_minus or zero, ve, p)
        out["g"] = (parse_expression(self.g, v[:-1], p),)
        return out

    @cached_property
    def _compiled(self) -> dict[str, CompiledFields]:
        f = self.fields
        return {key: CompiledFields(exprs) for key, exprs in f.items()}

    @property
    def has_remainder(self) -> bool:
        return self.r_plus is not None or self.r_minus is not None

    def x0(self, side: str, p) -> np.ndarray:
        return self._compiled[f"x0{side}"].values(p)

    def x1(self, side: str, p) -> np.ndarray:
        return self._compiled[f"x1{side}"].values(p)

    def dx0(self, side: str, p) -> np.ndarray:
        return self._compiled[f"x0{side}"].jacobian(p)

    def field(self, side: str, p, eps: float = 0.0) -> np.ndarray:
        out = self.x0(side, p)
        if eps != 0.0:
            out = out + eps * self.x1(side, p)
            if self.has_remainder:
                out = out + eps * eps * self._compiled[f"r{side}"].values((*p, eps))
        return out

    def g_value(self, xy) -> float:
        return float(self._compiled["g"].values(xy)[0])

    def g_grad(self, xy) -> np.ndarray:
        return self._compiled["g"].jacobian(xy)[0]

    def h(self, p) -> float:
        return float(p[-1]) - self.g_value(p[:-1])

    def grad_h(self, p) -> np.ndarray:
        out = np.empty(self.dim)
        out[:-1] = -self.g_grad(p[:-1])
        out[-1] = 1.0
        return out

    # ------------------------------------------------------------------ variants

    def with_params(self, **updates: float) -> "PiecewiseSystem":
        unknown = set(updates) - set(self.params)
        if unknown:
            raise ModelError(f"unknown parameter(s): {sorted(unknown)}")
        return _replace(self, params={**self.params, **updates})

    def unperturbed(self) -> "PiecewiseSystem":
        zero = ("0",) * self.dim
        return _replace(self, x1_plus=zero, x1_minus=zero, r_plus=None, r_minus=None,
                        perturbation_coefficients=())

    def perturbation_basis(self) -> list[tuple[tuple[Expression, ...], tuple[Expression, ...]]]:
        """``X1±`` for each unit coefficient vector (others set to zero)."""
        names = self.perturbation_coefficients
        if not names:
            raise ModelError("system declares no perturbation coefficients")
        v = self.variables
        base = {**self.params, **{k: 0.0 for k in names}}
        zero_plus = _parse_all(self.x1_plus, v, base)
        zero_minus = _parse_all(self.x1_minus, v, base)
        probe = [0.37 + 0.11 * i for i in range(self.dim)]
        if any(abs(evaluate(e, probe)) > 0 for e in zero_plus + zero_minus):
            raise ModelError("X1 must vanish when all perturbation coefficients are zero")
        out = []
        for name in names:
            bind = {**base, name: 1.0}
            out.append((_parse_all(self.x1_plus, v, bind), _parse_all(self.x1_minus, v, bind)))
        return out

    def coefficient_vector(self) -> np.ndarray:
        return np.array([self.params[k] for k in self.perturbation_coefficients], dtype=float)

    def with_coefficients(self, coeffs: Mapping[str, float] | Sequence[float]) -> "PiecewiseSystem":
        if not isinstance(coeffs, Mapping):
            coeffs = dict(zip(self.perturbation_coefficients, map(float, coeffs)))
        unknown = set(coeffs) - set(self.perturbation_coefficients)
        if unknown:
            raise ModelError(f"unknown perturbation coefficient(s): {sorted(unknown)}")
        return _replace(self, params={**self.params, **{k: float(v) for k, v in coeffs.items()}})


def _replace(system: PiecewiseSystem, **changes) -> PiecewiseSystem:
    data = dict(
        n=system.n, m=system.m, x0_plus=system.x0_plus, x0_minus=system.x0_minus,
        x1_plus=system.x1_plus, x1_minus=system.x1_minus, g=system.g, params=system.params,
        r_plus=system.r_plus, r_minus=system.r_minus,
        perturbation_coefficients=system.perturbation_coefficients, name=system.name,
    )
    data.update(changes)
    return PiecewiseSystem(**data)


@dataclass(frozen=True)
class SeedManifold:
    """Box of orbit parameters ``u`` and the map ``v(u)`` selecting ``y``."""

    v_box: tuple[tuple[float, float], ...]
    v_map: tuple[str, ...]
    label: str = ""
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.v_box)
        if not box or any(not hi > lo for lo, hi in box):
            raise ModelError(f"seed box must have positive volume, got {box}")
        object.__setattr__(self, "v_box", box)
        object.__setattr__(self, "v_map", tuple(self.v_map))
        object.__setattr__(self, "params", dict(self.params))
        _ = self.exprs

    @property
    def n(self) -> int:
        return len(self.v_box)

    @cached_property
    def u_names(self) -> tuple[str, ...]:
        return ("u",) if self.n == 1 else tuple(f"u{i + 1}" for i in range(self.n))

    @cached_property
    def exprs(self) -> tuple[Expression, ...]:
        return tuple(parse_expression(s, self.u_names, self.params) for s in self.v_map)

    def v(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.array([evaluate(e, u) for e in self.exprs])

    def dv(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if not self.exprs:
            return np.zeros((0, self.n))
        return np.array([evaluate_jet(e, u).partials for e in self.exprs])

    def with_box(self, box) -> "SeedManifold":
        return SeedManifold(tuple(box), self.v_map, self.label, self.params)

    def contains(self, u) -> bool:
        u = np.atleast_1d(u)
        return all(lo < ui < hi for ui, (lo, hi) in zip(u, self.v_box))

    def grid(self, nodes: int) -> np.ndarray:
        """Evenly spaced nodes strictly inside the box (n = 1 only)."""
        if self.n != 1:
            raise ValueError("grid() is only defined for one-dimensional seed boxes")
        lo, hi = self.v_box[0]
        return lo + (hi - lo) * (np.arange(nodes) + 0.5) / nodes


def seed_point(system: PiecewiseSystem, seed: SeedManifold, u) -> np.ndarray:
    """The point ``(u, v(u), g(u, v(u)))`` on the switching manifold."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if len(u) != system.n or seed.n != system.n:
        raise ModelError(f"u must have {system.n} components")
    xy = np.concatenate([u, seed.v(u)])
    return np.concatenate([xy, [system.g_value(xy)]])


def state_scale(p) -> float:
    """``max(1, |p|_inf)``: absolute tolerances are stated relative to this."""
    return max(1.0, float(np.max(np.abs(p))))


def switching_value(system: PiecewiseSystem, p) -> float:
    """``h(p) = z - g(x, y)``."""
    return system.h(np.asarray(p, dtype=float))


def lie_derivative(system: PiecewiseSystem, side: str, p) -> float:
    """``∇h(p) · X0^side(p)``."""
    p = np.asarray(p, dtype=float)
    return float(system.grad_h(p) @ system.x0(side, p))


# ---------------------------------------------------------------------- (H1)


@dataclass(frozen=True)
class H1Report:
    u: tuple[float, ...]
    tau_plus: float
    tau_minus: float
    closure_gap: float
    min_abs_h_interior: tuple[float, float]
    transversality: tuple[float, float, float, float]
    passed: bool
    message: str = ""

    def as_row(self) -> dict:
        return {
            **{f"u{i}": ui for i, ui in enumerate(self.u)},
            "tau_plus": self.tau_plus,
            "tau_minus": self.tau_minus,
            "closure_gap": self.closure_gap,
            "margin_plus": self.min_abs_h_interior[0],
            "margin_minus": self.min_abs_h_interior[1],
            "lie_plus_start": self.transversality[0],
            "lie_minus_start": self.transversality[1],
            "lie_plus_end": self.transversality[2],
            "lie_minus_end": self.transversality[3],
            "passed": int(self.passed),
        }


def check_h1(system: PiecewiseSystem, seed: SeedManifold, u, tols: Tolerances | None = None) -> H1Report:
    """Integrate both sides from the seed point and test (H1)(a)-(e)."""
    from .flow import FlowError, find_return

    tols = tols or Tolerances()
    u = tuple(float(x) for x in np.atleast_1d(np.asarray(u, dtype=float)))
    nan = float("nan")
    try:
        p0 = seed_point(system, seed, u)
    except ArithmeticError as exc:
        return H1Report(u, nan, nan, nan, (nan, nan), (nan,) * 4, False, f"seed outside domain: {exc}")
    try:
        ev_plus = find_return(system, "+", p0, "forward", tols=tols)
        ev_minus = find_return(system, "-", p0, "backward", tols=tols)
    except (FlowError, ArithmeticError) as exc:
        start = (lie_derivative(system, "+", p0), lie_derivative(system, "-", p0))
        return H1Report(u, nan, nan, nan, (nan, nan), (*start, nan, nan), False, str(exc))
    return h1_from_events(system, u, p0, ev_plus, ev_minus, tols)


def h1_from_events(system: PiecewiseSystem, u, p0, ev_plus, ev_minus, tols: Tolerances) -> H1Report:
    """(H1) report from already located forward/backward returns."""
    u = tuple(float(x) for x in np.atleast_1d(u))
    start = (lie_derivative(system, "+", p0), lie_derivative(system, "-", p0))
    gap = float(np.linalg.norm(ev_plus.point - ev_minus.point))
    end = 0.5 * (ev_plus.point + ev_minus.point)
    close = tols.close * state_scale(end)
    lie = (*start, lie_derivative(system, "+", end), lie_derivative(system, "-", end))
    margins = (ev_plus.interior_margin, ev_minus.interior_margin)
    ok = (
        gap <= close
        and margins[0] > 0
        and margins[1] > 0
        and lie[0] > 0 and lie[1] > 0
        and lie[2] < 0 and lie[3] < 0
        and ev_plus.tau > 0 > ev_minus.tau
    )
    msg = "" if ok else _h1_message(gap, close, margins, lie)
    return H1Report(u, float(ev_plus.tau), float(ev_minus.tau), gap, margins, lie, bool(ok), msg)


def _h1_message(gap, close, margins, lie) -> str:
    parts = []
    if not gap <= close:
        parts.append(f"closure gap {gap:.3e} > {close:.1e}")
    if not (margins[0] > 0 and margins[1] > 0):
        parts.append(f"interior sign margins {margins}")
    if not (lie[0] > 0 and lie[1] > 0):
        parts.append("departure not transversal into the + zone")
    if not (lie[2] < 0 and lie[3] < 0):
        parts.append("arrival not transversal")
    return "; ".join(parts)


# ---------------------------------------------------------------------- JSON


def model_to_dict(system: PiecewiseSystem, seed: SeedManifold) -> dict:
    out = {
        "name": system.name,
        "n": system.n,
        "m": system.m,
        "x0_plus": list(system.x0_plus),
        "x0_minus": list(system.x0_minus),
        "x1_plus": list(system.x1_plus),
        "x1_minus": list(system.x1_minus),
        "g": system.g,
        "params": dict(system.params),
        "perturbation_coefficients": list(system.perturbation_coefficients),
        "seed": {"v_box": [list(b) for b in seed.v_box], "v_map": list(seed.v_map), "label": seed.label},
    }
    if system.r_plus is not None:
        out["r_plus"] = list(system.r_plus)
    if system.r_minus is not None:
        out["r_minus"] = list(system.r_minus)
    return out


MODEL_SCHEMA = {
    "type": "object",
    "required": ["n", "m", "x0_plus", "x0_minus", "x1_plus", "x1_minus", "g", "seed"],
    "properties": {
        "name": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "x0_plus": {"type": "array", "items": {"type": "string"}},
        "x0_minus": {"type": "array", "items": {"type": "string"}},
        "x1_plus": {"type": "array", "items": {"type": "string"}},
        "x1_minus": {"type": "array", "items": {"type": "string"}},
        "r_plus": {"type": "array", "items": {"type": "string"}},
        "r_minus": {"type": "array", "items": {"type": "string"}},
        "g": {"type": "string"},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "perturbation_coefficients": {"type": "array", "items": {"type": "string"}},
        "seed": {
            "type": "object",
            "required": ["v_box", "v_map"],
            "properties": {
                "v_box": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
                "v_map": {"type": "array", "items": {"type": "string"}},
                "label": {"type": "string"},
            },
        },
    },
}


def model_from_dict(data: Mapping) -> tuple[PiecewiseSystem, SeedManifold]:
    import jsonschema

    try:
        jsonschema.validate(data, MODEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ModelError(f"invalid model document: {exc.message}") from exc
    params = {k: float(v) for k, v in data.get("params", {}).items()}
    system = PiecewiseSystem(
        n=data["n"], m=data["m"],
        x0_plus=data["x0_plus"], x0_minus=data["x0_minus"],
        x1_plus=data["x1_plus"], x1_minus=data["x1_minus"],
        g=data["g"], params=params,
        r_plus=data.get("r_plus"), r_minus=data.get("r_minus"),
        perturbation_coefficients=tuple(data.get("perturbation_coefficients", ())),
        name=data.get("name", ""),
    )
    s = data["seed"]
    if len(s["v_map"]) != system.m - system.n:
        raise ModelError(f"seed v_map needs m-n={system.m - system.n} entries")
    seed = SeedManifold(tuple(map(tuple, s["v_box"])), tuple(s["v_map"]), s.get("label", ""), params)
    return system, seed


def dump_model(system: PiecewiseSystem, seed: SeedManifold, path: str | Path | None = None) -> str:
    text = json.dumps(model_to_dict(system, seed), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def load_model(path: str | Path) -> tuple[PiecewiseSystem, SeedManifold]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: malformed JSON at offset {exc.pos}: {exc.msg}") from exc
    return model_from_dict(data)
