"""Direct validation of Melnikov predictions through the perturbed displacement map.

``displacement`` measures how far the forward (+) and backward (-) returns
of a point of the switching manifold land from each other. Its zeros at
``eps != 0`` are crossing periodic orbits of the perturbed system; they are
found by Newton's method with a finite-difference Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowError, TrajectorySegment, find_return, integrate_side
from .model import PiecewiseSystem, SeedManifold, StatePoint, Tolerances, seed_point

__all__ = [
    "ConvergenceTable",
    "DEFAULT_EPS",
    "PeriodicOrbit",
    "ValidationError",
    "closure_gap",
    "convergence_study",
    "displacement",
    "refine_periodic_orbit",
]

DEFAULT_EPS = (1e-2, 5e-3, 2.5e-3, 1.25e-3)


class ValidationError(RuntimeError):
    """Newton failed to produce a crossing periodic orbit."""


def _returns(system: PiecewiseSystem, x, y, eps: float, tols: Tolerances):
    p0 = np.concatenate([np.atleast_1d(x), np.atleast_1d(y)]).astype(float)
    p0 = np.append(p0, system.g_value(p0))
    ev_p = find_return(system, "+", p0, "forward", eps, tols=tols)
    ev_m = find_return(system, "-", p0, "backward", eps, tols=tols)
    return p0, ev_p, ev_m


def _delta(system, ev_p, ev_m) -> np.ndarray:
    d = ev_p.point - ev_m.point
    d[-1] = system.h(ev_p.point) - system.h(ev_m.point)
    return d


def displacement(system: PiecewiseSystem, x, y, eps: float, tols: Tolerances | None = None) -> np.ndarray:
    """``phi+(t+) - phi-(t-)`` for the seed ``(x, y, g(x, y))``.

    The last entry is written in the ``h = z - g(x, y)`` coordinate, so it is
    the difference of two on-manifold values and vanishes up to the event
    tolerance.
    """
    tols = tols or Tolerances()
    _, ev_p, ev_m = _returns(system, x, y, eps, tols)
    return _delta(system, ev_p, ev_m)


@dataclass(frozen=True)
class PeriodicOrbit:
    """A crossing periodic orbit of the perturbed system.

    ``initial`` lies on the switching manifold; the ``+`` arc runs forward
    for ``t_plus`` and the ``-`` arc backward for ``|t_minus|``, both ending at
    the same far crossing point up to ``closure_residual``.
    """

    eps: float
    initial: StatePoint
    t_plus: float
    t_minus: float
    closure_residual: float
    iterations: int
    segments: tuple[TrajectorySegment, TrajectorySegment] = field(repr=False, compare=False)

    @property
    def u(self) -> np.ndarray:
        return np.asarray(self.initial.x)

    @property
    def period(self) -> float:
        return self.t_plus - self.t_minus


def _residual(system, z, eps, tols):
    n = system.n
    _, ev_p, ev_m = _returns(system, z[:n], z[n:], eps, tols)
    d = _delta(system, ev_p, ev_m)
    return d[:-1], (ev_p, ev_m), float(abs(d[-1]))


def _fd_jacobian(system, z, eps, tols, f0, step):
    J = np.empty((len(f0), len(z)))
    for j in range(len(z)):
        e = np.zeros(len(z))
        e[j] = step
        fp = _residual(system, z + e, eps, tols)[0]
        fm = _residual(system, z - e, eps, tols)[0]
        J[:, j] = (fp - fm) / (2 * step)
    return J


def refine_periodic_orbit(system: PiecewiseSystem, seed: SeedManifold, u0, eps: float,
                          tols: Tolerances | None = None, residual: float = 1e-10,
                          max_iter: int = 30, fd_step: float = 1e-7, max_halvings: int = 20,
                          eps_max: float = 1e-2, polish: bool = True) -> PeriodicOrbit:
    """Newton on ``(x, y) -> (Pi1, Pi2) displacement`` started at ``(u0, v(u0))``.

    Steps that lose a return, or that do not reduce the residual, are halved
    up to ``max_halvings`` times. With ``polish`` one extra step is taken
    after the residual test passes and kept if it helps.
    """
    tols = tols or Tolerances()
    if abs(eps) > eps_max:
        raise ValueError(f"|eps| = {abs(eps)} exceeds eps_max = {eps_max}")
    n = system.n
    p0 = seed_point(system, seed, np.atleast_1d(np.asarray(u0, dtype=float)))
    z = p0[:-1].copy()
    try:
        f, evs, h_gap = _residual(system, z, eps, tols)
    except FlowError as exc:
        raise ValidationError(f"no crossing orbit through the start point: {exc}") from exc
    it = 0
    while np.max(np.abs(f)) > residual:
        if it >= max_iter:
            raise ValidationError(f"Newton did not converge in {max_iter} iterations (|F| = {np.max(np.abs(f)):.3e})")
        it += 1
        J = _fd_jacobian(system, z, eps, tols, f, fd_step)
        try:
            dz = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("singular Newton Jacobian") from exc
        lam = 1.0
        for _ in range(max_halvings + 1):
            try:
                trial = _residual(system, z + lam * dz, eps, tols)
            except FlowError:
                lam *= 0.5
                continue
            if np.max(np.abs(trial[0])) < np.max(np.abs(f)):
                break
            lam *= 0.5
        else:
            raise ValidationError(f"step halved {max_halvings} times without progress (loss of crossing?)")
        z = z + lam * dz
        f, evs, h_gap = trial
    if it and polish:
        # one more step pushes the residual to the noise floor; expanding flows
        # amplify whatever is left when the orbit is integrated around
        try:
            dz = np.linalg.solve(_fd_jacobian(system, z, eps, tols, f, fd_step), -f)
            trial = _residual(system, z + dz, eps, tols)
            if np.max(np.abs(trial[0])) < np.max(np.abs(f)):
                z = z + dz
                f, evs, h_gap = trial
        except (FlowError, np.linalg.LinAlgError):
            pass
    ev_p, ev_m = evs
    start = np.append(z, system.g_value(z))
    gap = float(max(np.max(np.abs(f)), h_gap))
    return PeriodicOrbit(
        float(eps), StatePoint.from_array(start, n), ev_p.tau, ev_m.tau, gap, it,
        (ev_p.segment, ev_m.segment),
    )


def closure_gap(system: PiecewiseSystem, orbit: PeriodicOrbit, tols: Tolerances | None = None) -> float:
    """Sup-norm mismatch after integrating once around the orbit from its initial point."""
    tols = tols or Tolerances()
    p0 = np.asarray(orbit.initial, dtype=float)
    far = integrate_side(system, "+", p0, orbit.t_plus, orbit.eps, tols).states[-1]
    back = integrate_side(system, "-", far, -orbit.t_minus, orbit.eps, tols).states[-1]
    return float(np.max(np.abs(back - p0)))


@dataclass(frozen=True)
class ConvergenceTable:
    """Refined orbits along a one-sided eps sweep, with distances to the seed ``u_star``."""

    u_star: np.ndarray
    eps: np.ndarray
    u_eps: np.ndarray
    distance: np.ndarray
    iterations: np.ndarray
    closure: np.ndarray
    orbits: tuple[PeriodicOrbit, ...] = field(repr=False, compare=False)

    @property
    def ratios(self) -> np.ndarray:
        return self.distance[1:] / self.distance[:-1]

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.distance) < 0))

    def rows(self) -> list[dict]:
        out = []
        for k in range(len(self.eps)):
            row = {"eps": float(self.eps[k])}
            for i, ui in enumerate(np.atleast_1d(self.u_eps[k])):
                row["u" if self.u_eps.shape[1] == 1 else f"u{i + 1}"] = float(ui)
            row["distance"] = float(self.distance[k])
            row["iterations"] = int(self.iterations[k])
            row["closure"] = float(self.closure[k])
            out.append(row)
        return out


def convergence_study(system: PiecewiseSystem, seed: SeedManifold, u_star, eps_list=DEFAULT_EPS,
                      tols: Tolerances | None = None) -> ConvergenceTable:
    """Refine at each ``eps`` (ordered by decreasing magnitude) starting from ``u_star``."""
    tols = tols or Tolerances()
    eps = np.asarray(sorted(eps_list, key=abs, reverse=True), dtype=float)
    nz = eps[eps != 0]
    if len(nz) and not (np.all(nz > 0) or np.all(nz < 0)):
        raise ValueError("eps values must all share one sign")
    u_star = np.atleast_1d(np.asarray(u_star, dtype=float))
    orbits = [refine_periodic_orbit(system, seed, u_star, e, tols) for e in eps]
    u_eps = np.array([o.u for o in orbits]).reshape(len(eps), -1)
    dist = np.max(np.abs(u_eps - u_star), axis=1)
    closure = np.array([closure_gap(system, o, tols) for o in orbits])
    return ConvergenceTable(u_star, eps, u_eps, dist, np.array([o.iterations for o in orbits]), closure, tuple(orbits))
