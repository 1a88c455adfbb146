"""Event-located integration of one smooth zone and its variational equations.

The integrator is a Dormand-Prince 5(4) pair with FSAL, a PI step controller
and the standard quartic dense output. Backward time is handled by integrating
the reversed field in the variable ``s = -t``, so there is a single code path.

Variational quantities are obtained by augmenting the state with a matrix
``M = [W | w]`` solving ``M' = DX0(phi) M + [0 | F(phi)]`` where ``F`` stacks any
number of forcing fields. ``W`` is the fundamental matrix and each forcing
column gives one ``omega``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .expr import CompiledFields, DomainError
from .model import PiecewiseSystem, Tolerances

__all__ = [
    "FlowError",
    "GrazingError",
    "NoReturnError",
    "ReturnEvent",
    "StepSizeError",
    "TrajectorySegment",
    "VariationalReturn",
    "dt_deps",
    "dt_dy",
    "find_return",
    "fundamental_matrix",
    "integrate_side",
    "omega",
    "variational_return",
    "y_sensitivity",
]


class FlowError(RuntimeError):
    """Integration could not be completed."""


class StepSizeError(FlowError):
    pass


class NoReturnError(FlowError):
    pass


class GrazingError(FlowError):
    pass


ESCAPE_RADIUS = 1e8

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# quartic continuous extension: y(s0 + th h) = y0 + h * K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _rk_step(rhs, y, f, h):
    """One DP5(4) step. Returns (y_new, f_new, error_vector, stages)."""
    K = np.empty((7, y.size))
    K[0] = f
    for i in range(1, 7):
        a = _A[i]
        dy = K[0] * a[0]
        for j in range(1, i):
            if a[j]:
                dy = dy + K[j] * a[j]
        yi = y + h * dy
        if i == 6:
            y_new = yi
        K[i] = rhs(yi)
    err = h * (_E @ K)
    return y_new, K[6], err, K


@dataclass
class _Step:
    s0: float
    h: float
    y0: np.ndarray
    y1: np.ndarray
    Q: np.ndarray  # (dim, 4)

    def __call__(self, s: float) -> np.ndarray:
        th = (s - self.s0) / self.h
        return self.y0 + self.h * (self.Q @ np.array([th, th * th, th ** 3, th ** 4]))


def _error_norm(err, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return math.sqrt(float(np.mean((err / scale) ** 2)))


def _initial_step(rhs, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = rhs(y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def _steps(rhs, y0: np.ndarray, s_max: float, tols: Tolerances, watch: int | None = None) -> Iterator[_Step]:
    """Accepted steps from s=0 up to s_max (the last one is clipped).

    Only the first ``watch`` components (the base state) are checked against
    the escape radius.
    """
    rtol, atol = tols.rtol, tols.atol
    y = np.array(y0, dtype=float)
    f = rhs(y)
    s = 0.0
    h = min(_initial_step(rhs, y, f, rtol, atol), s_max)
    err_old = 1e-4
    rejected = False
    for _ in range(tols.max_steps):
        if s >= s_max:
            return
        h_min = 16 * np.spacing(max(abs(s), 1.0))
        if h < h_min:
            raise StepSizeError(f"step size underflow at s={s:.6g}")
        last = s + h >= s_max
        if last:
            h = s_max - s
        try:
            y_new, f_new, err, K = _rk_step(rhs, y, f, h)
        except (DomainError, OverflowError, ZeroDivisionError, ValueError):
            y_new = None
        if y_new is None or not np.all(np.isfinite(y_new)):
            h *= 0.25
            rejected = True
            continue
        e = _error_norm(err, y, y_new, rtol, atol)
        if e <= 1.0:
            if np.max(np.abs(y_new[:watch])) > ESCAPE_RADIUS:
                raise FlowError(f"state escaped radius {ESCAPE_RADIUS:g} at s={s + h:.6g}")
            step = _Step(s, h, y, y_new, K.T @ _P)
            s = s_max if last else s + h
            y, f = y_new, f_new
            yield step
            fac = 10.0 if e == 0 else 0.9 * e ** -0.17 * err_old ** 0.04
            fac = min(fac, 1.0) if rejected else min(max(fac, 0.2), 10.0)
            err_old = max(e, 1e-4)
            rejected = False
            h *= fac
        else:
            h *= max(0.2, 0.9 * e ** -0.2)
            rejected = True
    raise StepSizeError(f"exceeded max_steps={tols.max_steps}")


# ---------------------------------------------------------------------- segments


@dataclass(frozen=True)
class TrajectorySegment:
    """Solution on one side; ``times`` increase even for backward integration."""

    side: str
    eps: float
    direction: int
    times: np.ndarray
    states: np.ndarray
    _steps: tuple = field(repr=False, default=())

    @property
    def t_final(self) -> float:
        return self.direction * (self._steps[-1].s0 + self._steps[-1].h) if self._steps else 0.0

    def __call__(self, t: float) -> np.ndarray:
        """Dense-output state at time ``t`` inside the segment."""
        s = self.direction * t
        if not self._steps:
            if abs(s) > 0:
                raise ValueError("segment has zero length")
            return self.states[0].copy()
        ends = [st.s0 + st.h for st in self._steps]
        k = int(np.searchsorted(ends, s))
        if s < -1e-14 or k >= len(self._steps) and s > ends[-1] * (1 + 1e-14):
            raise ValueError(f"t={t} outside segment")
        return self._steps[min(k, len(self._steps) - 1)](s)[: self.states.shape[1]]


def _segment(side, eps, direction, p0, steps, dim, s_end=None) -> TrajectorySegment:
    s = [0.0] + [st.s0 + st.h for st in steps]
    ys = [np.asarray(p0, dtype=float)[:dim]] + [st.y1[:dim] for st in steps]
    if s_end is not None and steps:
        s[-1] = s_end
    t = direction * np.array(s)
    states = np.array(ys)
    if direction < 0:
        t, states = t[::-1], states[::-1]
    return TrajectorySegment(side, eps, direction, t, states, tuple(steps))


# ---------------------------------------------------------------------- right-hand sides


def _base_rhs(system: PiecewiseSystem, side: str, eps: float, direction: int) -> Callable:
    c0 = system._compiled[f"x0{side}"]
    if eps == 0.0:
        if direction > 0:
            return c0.values
        return lambda y: -c0.values(y)
    c1 = system._compiled[f"x1{side}"]
    cr = system._compiled[f"r{side}"] if system.has_remainder else None
    sgn = float(direction)

    def rhs(y):
        out = c0.values(y) + eps * c1.values(y)
        if cr is not None:
            out = out + eps * eps * cr.values((*y, eps))
        return sgn * out

    return rhs


def forcing_fields(system: PiecewiseSystem, side: str, basis: bool = False) -> CompiledFields:
    """Compiled forcing ``X1`` (one column) or all unit-coefficient columns."""
    if not basis:
        return system._compiled[f"x1{side}"]
    key = f"_basis{side}"
    cache = system.__dict__.setdefault("_forcing_cache", {})
    if key not in cache:
        idx = 0 if side == "+" else 1
        exprs = [e for pair in system.perturbation_basis() for e in pair[idx]]
        cache[key] = CompiledFields(exprs, system.variables)
    return cache[key]


def _augmented_rhs(system, side, direction, forcing: CompiledFields | None, with_w: bool, integral: bool = False):
    """RHS for (p, M) with M = [W | w]; ``integral`` switches w to int W^{-1} F."""
    c0 = system._compiled[f"x0{side}"]
    d = system.dim
    kw = d if with_w else 0
    K = 0 if forcing is None else forcing.size // d
    ncol = kw + K
    sgn = float(direction)

    def rhs(y):
        p = y[:d]
        out = np.empty_like(y)
        out[:d] = c0.values(p)
        M = y[d:].reshape(d, ncol)
        J = c0.jacobian(p)
        dM = J @ M if not integral else np.zeros_like(M)
        if K:
            F = forcing.values(p).reshape(K, d).T
            if integral:
                W = M[:, :kw]
                dM[:, :kw] = J @ W
                dM[:, kw:] = np.linalg.solve(W, F)
            else:
                dM[:, kw:] += F
        out[d:] = dM.ravel()
        return sgn * out

    return rhs, ncol


def _augmented_start(p0, d, with_w, K):
    ncol = (d if with_w else 0) + K
    M = np.zeros((d, ncol))
    if with_w:
        M[:, :d] = np.eye(d)
    return np.concatenate([np.asarray(p0, dtype=float), M.ravel()])


# ---------------------------------------------------------------------- public integration


def _direction(t_end: float) -> int:
    return 1 if t_end >= 0 else -1


def integrate_side(system: PiecewiseSystem, side: str, p0, t_end: float, eps: float = 0.0,
                   tols: Tolerances | None = None) -> TrajectorySegment:
    """Integrate ``X0 + eps X1 + eps^2 R`` of one side from ``p0`` to ``t_end``."""
    tols = tols or Tolerances()
    p0 = np.asarray(p0, dtype=float)
    direction = _direction(t_end)
    if t_end == 0:
        return TrajectorySegment(side, eps, 1, np.array([0.0]), p0[None, :].copy())
    rhs = _base_rhs(system, side, eps, direction)
    steps = list(_steps(rhs, p0, abs(t_end), tols))
    return _segment(side, eps, direction, p0, steps, system.dim)


def _integrate_augmented(system, side, p0, t, forcing, with_w, tols, integral=False):
    d = system.dim
    p0 = np.asarray(p0, dtype=float)
    direction = _direction(t)
    rhs, ncol = _augmented_rhs(system, side, direction, forcing, with_w, integral)
    y = _augmented_start(p0, d, with_w, ncol - (d if with_w else 0))
    if t == 0:
        return y[:d], y[d:].reshape(d, ncol)
    *_, last = _steps(rhs, y, abs(t), tols, watch=d)
    return last.y1[:d], last.y1[d:].reshape(d, ncol)


def fundamental_matrix(system: PiecewiseSystem, side: str, p0, t: float,
                       tols: Tolerances | None = None) -> np.ndarray:
    """``D phi0^side(t, p0)`` from the matrix variational equation."""
    _, M = _integrate_augmented(system, side, p0, t, None, True, tols or Tolerances())
    return M


def omega(system: PiecewiseSystem, side: str, p0, t: float, tols: Tolerances | None = None,
          method: str = "ivp") -> np.ndarray:
    """``d phi/d eps`` at ``eps = 0``.

    ``method="ivp"`` integrates ``w' = DX0 w + X1``; ``method="integral"``
    evaluates ``W(t) * int_0^t W(s)^{-1} X1(phi0(s)) ds`` instead.
    """
    tols = tols or Tolerances()
    forcing = forcing_fields(system, side)
    if method == "ivp":
        _, M = _integrate_augmented(system, side, p0, t, forcing, False, tols)
        return M[:, 0]
    if method == "integral":
        _, M = _integrate_augmented(system, side, p0, t, forcing, True, tols, integral=True)
        d = system.dim
        return M[:, :d] @ M[:, d]
    raise ValueError(f"unknown method {method!r}")


def y_sensitivity(system: PiecewiseSystem, side: str, p0, t: float,
                  tols: Tolerances | None = None) -> np.ndarray:
    """``d phi/dy + d phi/dz * dg/dy`` at ``p0 = (x, y, g(x, y))``."""
    W = fundamental_matrix(system, side, p0, t, tols)
    return _y_columns(system, W, np.asarray(p0, dtype=float))


def _y_columns(system: PiecewiseSystem, W: np.ndarray, p0: np.ndarray) -> np.ndarray:
    yi = system.y_index
    dg = system.g_grad(p0[:-1])[yi]
    return W[:, yi] + np.outer(W[:, -1], dg)


# ---------------------------------------------------------------------- returns


@dataclass(frozen=True)
class ReturnEvent:
    tau: float
    point: np.ndarray
    transversal_speed: float
    interior_margin: float = float("nan")
    segment: TrajectorySegment | None = field(default=None, repr=False)


@dataclass(frozen=True)
class VariationalReturn:
    event: ReturnEvent
    W: np.ndarray | None
    w: np.ndarray | None  # (dim, K) forcing responses at the return


def _lie(system, side, eps, p):
    return float(system.grad_h(p) @ system.field(side, p, eps))


def _locate(rhs, step: _Step, s_lo, s_hi, hfun, dh_ds, sigma, tol_event, dim):
    """Bracketed root of h along one step; refined by direct RK steps from the step start."""
    a, b = s_lo, s_hi
    width = 1e-3 * step.h
    while b - a > width:
        mid = 0.5 * (a + b)
        if sigma * hfun(step(mid)[:dim]) > 0:
            a = mid
        else:
            b = mid
    s = 0.5 * (a + b)
    for _ in range(20):
        y = step(s)
        ds = -hfun(y[:dim]) / dh_ds(y[:dim])
        s = min(max(s + ds, a - width), b + width)
        if abs(ds) < 1e-15 * max(1.0, abs(s)):
            break
    f0 = rhs(step.y0)
    y = step.y1
    for _ in range(20):
        y, *_ = _rk_step(rhs, step.y0, f0, s - step.s0)
        hv = hfun(y[:dim])
        ds = -hv / dh_ds(y[:dim])
        if abs(hv) <= tol_event and abs(ds) < 1e-13 * max(1.0, abs(s)):
            break
        s += ds
    return s, y


def _find_return(system, side, p0, direction, eps, tols, rhs, y0, t_max=None):
    d = system.dim
    p0 = np.asarray(p0, dtype=float)
    dirn = 1 if direction in ("forward", 1, "+") else -1
    if direction not in ("forward", "backward", 1, -1):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    speed0 = _lie(system, side, eps, p0)
    if abs(speed0) < tols.transversal:
        raise GrazingError(f"tangential start: |Xh(p0)| = {abs(speed0):.3e}")
    sigma = math.copysign(1.0, speed0) * dirn
    window = 10 * (tols.atol + tols.rtol * float(np.max(np.abs(p0)))) / abs(speed0)
    hfun = system.h
    sgn = float(dirn)

    def dh_ds(p):
        return sgn * _lie(system, side, eps, p)

    steps = []
    margin = math.inf
    t_max = t_max if t_max is not None else tols.t_max
    for step in _steps(rhs, y0, t_max, tols, watch=d):
        s_end = step.s0 + step.h
        samples = [step.s0 + q * step.h for q in (0.25, 0.5, 0.75)] + [s_end]
        prev = step.s0
        hit = None
        for sq in samples:
            if sq <= window:
                prev = sq
                continue
            yq = step.y1 if sq == s_end else step(sq)
            val = sigma * hfun(yq[:d])
            if val <= 0:
                hit = (max(prev, window, step.s0), sq)
                break
            margin = min(margin, val)
            prev = sq
        if hit is None:
            steps.append(step)
            continue
        s_star, y_star = _locate(rhs, step, *hit, hfun, dh_ds, sigma, tols.event, d)
        point = y_star[:d]
        speed = _lie(system, side, eps, point)
        if abs(speed) < tols.transversal:
            raise GrazingError(f"grazing return at t={dirn * s_star:.6g}: |Xh| = {abs(speed):.3e}")
        final = _Step(step.s0, s_star - step.s0, step.y0, y_star, step.Q)
        steps.append(final)
        seg = _segment(side, eps, dirn, p0, steps, d, s_end=s_star)
        ev = ReturnEvent(dirn * s_star, point.copy(), speed, margin, seg)
        return ev, y_star
    raise NoReturnError(f"no return to the switching manifold within t_max={t_max:g}")


def find_return(system: PiecewiseSystem, side: str, p0, direction: str = "forward", eps: float = 0.0,
                t_max: float | None = None, tols: Tolerances | None = None) -> ReturnEvent:
    """First return to ``h = 0`` from ``p0`` on ``side``."""
    tols = tols or Tolerances()
    dirn = 1 if direction == "forward" else -1
    rhs = _base_rhs(system, side, eps, dirn)
    ev, _ = _find_return(system, side, p0, direction, eps, tols, rhs, np.asarray(p0, dtype=float), t_max)
    return ev


def variational_return(system: PiecewiseSystem, side: str, p0, direction: str,
                       forcing: CompiledFields | None = None, tols: Tolerances | None = None,
                       with_w: bool = True) -> VariationalReturn:
    """First return at ``eps = 0`` with ``W`` and forcing responses carried along."""
    tols = tols or Tolerances()
    d = system.dim
    dirn = 1 if direction == "forward" else -1
    rhs, ncol = _augmented_rhs(system, side, dirn, forcing, with_w)
    kw = d if with_w else 0
    y0 = _augmented_start(p0, d, with_w, ncol - kw)
    ev, y = _find_return(system, side, p0, direction, 0.0, tols, rhs, y0)
    M = y[d:].reshape(d, ncol)
    return VariationalReturn(ev, M[:, :kw] if with_w else None, M[:, kw:] if ncol > kw else None)


def _return_derivative_data(system, side, x, y, tols):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    xy = np.concatenate([x, y])
    p0 = np.concatenate([xy, [system.g_value(xy)]])
    direction = "forward" if side == "+" else "backward"
    vr = variational_return(system, side, p0, direction, forcing_fields(system, side), tols)
    q = vr.event.point
    speed = _lie(system, side, 0.0, q)
    if abs(speed) < tols.transversal:
        raise GrazingError(f"grazing denominator |X0h| = {abs(speed):.3e}")
    return p0, vr, system.grad_h(q), speed


def dt_deps(system: PiecewiseSystem, side: str, x, y, tols: Tolerances | None = None) -> float:
    """``d t^side / d eps`` at ``eps = 0``: ``-grad h . omega / X0h`` at the return."""
    tols = tols or Tolerances()
    _, vr, gh, speed = _return_derivative_data(system, side, x, y, tols)
    return float(-gh @ vr.w[:, 0] / speed)


def dt_dy(system: PiecewiseSystem, side: str, x, y, tols: Tolerances | None = None) -> np.ndarray:
    """``d t^side / d y`` at ``eps = 0``: ``-grad h . Y / X0h`` at the return."""
    tols = tols or Tolerances()
    p0, vr, gh, speed = _return_derivative_data(system, side, x, y, tols)
    return -(gh @ _y_columns(system, vr.W, p0)) / speed
