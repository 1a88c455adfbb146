"""Projectors, crossing data, the first-order Melnikov function and its coefficient map.

The Melnikov function is linear in the first-order perturbation, so every
routine here works with a block of ``K`` forcing columns at once: either the
system's own ``X1`` (``K = 1``) or one column per perturbation coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowError, GrazingError, forcing_fields, variational_return
from .model import (
    H1Report,
    PiecewiseSystem,
    SeedManifold,
    Tolerances,
    h1_from_events,
    seed_point,
)

__all__ = [
    "CoefficientMap",
    "CrossingData",
    "MelnikovError",
    "MelnikovScan",
    "SingularBetaError",
    "coefficient_map",
    "crossing_data",
    "ls_reduction",
    "melnikov",
    "melnikov_scan",
    "projector",
]


class MelnikovError(RuntimeError):
    """The Melnikov function is undefined at this parameter value."""


class SingularBetaError(MelnikovError):
    pass


def projector(system: PiecewiseSystem, side: str, p, tol_transversal: float = 1e-6) -> np.ndarray:
    """``Id - X0 grad(h)^T / (X0 h)`` at ``p``."""
    p = np.asarray(p, dtype=float)
    X = system.x0(side, p)
    gh = system.grad_h(p)
    lie = float(gh @ X)
    if abs(lie) < tol_transversal:
        raise GrazingError(f"projector undefined: |X0h| = {abs(lie):.3e}")
    return np.eye(system.dim) - np.outer(X, gh) / lie


def ls_reduction(gamma, delta, g1) -> np.ndarray:
    """Block elimination ``pi1 g1 - gamma delta^{-1} pi2 g1``.

    ``gamma`` is ``n x (m-n)``, ``delta`` is ``(m-n) x (m-n)`` and ``g1`` has
    ``m`` rows (extra trailing columns are reduced independently).
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    g1 = np.asarray(g1, dtype=float)
    n = gamma.shape[0]
    if gamma.shape[1] == 0:
        return g1[:n].copy()
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    if delta.shape != (gamma.shape[1], gamma.shape[1]):
        raise ValueError(f"delta must be {gamma.shape[1]}x{gamma.shape[1]}")
    try:
        sol = np.linalg.solve(delta, g1[n:])
    except np.linalg.LinAlgError as exc:
        raise SingularBetaError("singular lower-right block") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularBetaError("singular lower-right block")
    return g1[:n] - gamma @ sol


@dataclass(frozen=True)
class CrossingData:
    """Per-``u`` quantities at the common far crossing point.

    ``alpha`` has one column per forcing field (squeezed to a vector when
    there is a single one).
    """

    u: np.ndarray
    tau_plus: float
    tau_minus: float
    endpoint: np.ndarray
    omega_plus: np.ndarray
    omega_minus: np.ndarray
    y_plus: np.ndarray
    y_minus: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pi2_beta_det: float
    h1: H1Report
    projector_plus: np.ndarray
    projector_minus: np.ndarray


def _crossing(system, seed, u, forcing, tols: Tolerances) -> CrossingData:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p0 = seed_point(system, seed, u)
    try:
        vp = variational_return(system, "+", p0, "forward", forcing[0], tols)
        vm = variational_return(system, "-", p0, "backward", forcing[1], tols)
    except (FlowError, ArithmeticError) as exc:
        raise MelnikovError(f"u={u}: (H1) failed: {exc}") from exc
    rep = h1_from_events(system, u, p0, vp.event, vm.event, tols)
    if not rep.passed:
        raise MelnikovError(f"u={u}: (H1) failed: {rep.message}")
    q = 0.5 * (vp.event.point + vm.event.point)
    Pp = projector(system, "+", q, tols.transversal)
    Pm = projector(system, "-", q, tols.transversal)
    yi = system.y_index
    dg = system.g_grad(p0[:-1])[yi]
    Yp = vp.W[:, yi] + np.outer(vp.W[:, -1], dg)
    Ym = vm.W[:, yi] + np.outer(vm.W[:, -1], dg)
    alpha = Pp @ vp.w - Pm @ vm.w
    beta = Pp @ Yp - Pm @ Ym
    det = float(np.linalg.det(beta[yi])) if len(yi) else 1.0
    return CrossingData(u, vp.event.tau, vm.event.tau, q, vp.w, vm.w, Yp, Ym, alpha, beta, det, rep, Pp, Pm)


def _own_forcing(system):
    return forcing_fields(system, "+"), forcing_fields(system, "-")


def _basis_forcing(system):
    return forcing_fields(system, "+", basis=True), forcing_fields(system, "-", basis=True)


def crossing_data(system: PiecewiseSystem, seed: SeedManifold, u, tols: Tolerances | None = None) -> CrossingData:
    """``alpha``, ``beta`` and their ingredients for the system's own ``X1``."""
    cd = _crossing(system, seed, u, _own_forcing(system), tols or Tolerances())
    return CrossingData(
        cd.u, cd.tau_plus, cd.tau_minus, cd.endpoint, cd.omega_plus[:, 0], cd.omega_minus[:, 0],
        cd.y_plus, cd.y_minus, cd.alpha[:, 0], cd.beta, cd.pi2_beta_det, cd.h1,
        cd.projector_plus, cd.projector_minus,
    )


def _reduce(system: PiecewiseSystem, cd: CrossingData, tol_beta: float):
    """Melnikov values and the magnitude of the two subtracted terms."""
    xi, yi = system.x_index, system.y_index
    alpha = cd.alpha if cd.alpha.ndim == 2 else cd.alpha[:, None]
    if len(yi) == 0:
        first = alpha[xi]
        return first, np.abs(first)
    beta = cd.beta
    smax = np.linalg.svd(beta, compute_uv=False)[0]
    smin = np.linalg.svd(beta[yi], compute_uv=False)[-1]
    if not (smin > 0 and smin >= tol_beta * smax):
        raise SingularBetaError(
            f"u={cd.u}: Pi2 beta is singular (sigma_min={smin:.3e}, sigma_max(beta)={smax:.3e})"
        )
    first = alpha[xi]
    second = beta[xi] @ np.linalg.solve(beta[yi], alpha[yi])
    return first - second, np.abs(first) + np.abs(second)


def melnikov(system: PiecewiseSystem, seed: SeedManifold, u, tols: Tolerances | None = None) -> np.ndarray:
    """``Pi1 (Id - beta (Pi2 beta)^{-1} Pi2) alpha`` at ``u``."""
    tols = tols or Tolerances()
    cd = crossing_data(system, seed, u, tols)
    return _reduce(system, cd, tols.beta)[0][:, 0]


# ---------------------------------------------------------------------- scans


@dataclass(frozen=True)
class MelnikovScan:
    """Melnikov values on a grid.

    ``magnitude`` holds ``|Pi1 alpha| + |Pi1 beta (Pi2 beta)^{-1} Pi2 alpha|``
    per node: the size of the terms whose difference is the Melnikov value,
    which sets the floating-point noise floor of each value.
    """

    grid: np.ndarray
    values: np.ndarray
    pi2_beta_det: np.ndarray
    h1_pass: np.ndarray
    magnitude: np.ndarray
    box: tuple[tuple[float, float], ...]
    messages: tuple[str, ...] = ()
    system: PiecewiseSystem | None = field(default=None, repr=False, compare=False)
    seed: SeedManifold | None = field(default=None, repr=False, compare=False)
    tols: Tolerances | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def rows(self) -> list[dict]:
        out = []
        for k, u in enumerate(np.atleast_2d(self.grid.T).T):
            row = {("u" if len(u) == 1 else f"u{i + 1}"): float(ui) for i, ui in enumerate(u)}
            for i in range(self.n):
                row["M" if self.n == 1 else f"M{i + 1}"] = float(self.values[k, i])
            row["pi2_beta_det"] = float(self.pi2_beta_det[k])
            row["h1_pass"] = int(self.h1_pass[k])
            out.append(row)
        return out


def _as_grid(seed: SeedManifold, grid) -> np.ndarray:
    if grid is None:
        grid = 400
    if np.isscalar(grid):
        return seed.grid(int(grid))
    return np.asarray(grid, dtype=float)


def melnikov_scan(system: PiecewiseSystem, seed: SeedManifold, grid=None,
                  tols: Tolerances | None = None) -> MelnikovScan:
    """Evaluate the Melnikov function on ``grid`` (node count or explicit array).

    Nodes where (H1) fails or ``Pi2 beta`` is singular are kept with NaN values
    and ``h1_pass = False`` / the determinant recorded.
    """
    tols = tols or Tolerances()
    us = _as_grid(seed, grid)
    n = system.n
    vals = np.full((len(us), n), np.nan)
    mags = np.full((len(us), n), np.nan)
    dets = np.full(len(us), np.nan)
    ok = np.zeros(len(us), dtype=bool)
    msgs = []
    fpair = _own_forcing(system)
    for k, u in enumerate(us):
        try:
            cd = _crossing(system, seed, u, fpair, tols)
        except MelnikovError as exc:
            msgs.append(str(exc))
            continue
        dets[k] = cd.pi2_beta_det
        ok[k] = True
        try:
            v, mg = _reduce(system, cd, tols.beta)
        except SingularBetaError as exc:
            msgs.append(str(exc))
            continue
        vals[k], mags[k] = v[:, 0], mg[:, 0]
    return MelnikovScan(us, vals, dets, ok, mags, seed.v_box, tuple(msgs), system, seed, tols)


# ---------------------------------------------------------------------- coefficient map


@dataclass(frozen=True)
class CoefficientMap:
    """Linear map from perturbation coefficients to Melnikov values on a grid.

    ``matrix[k*n + i, j]`` is component ``i`` of the Melnikov function at node
    ``k`` for the unit coefficient vector ``e_j``. ``first`` and ``second``
    are the two subtracted terms (``matrix = first - second``).
    """

    names: tuple[str, ...]
    grid: np.ndarray
    first: np.ndarray
    second: np.ndarray
    pi2_beta_det: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.first - self.second

    def __call__(self, coeffs) -> np.ndarray:
        return self.matrix @ np.asarray(coeffs, dtype=float)

    def magnitude(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float)
        return np.abs(self.first @ c) + np.abs(self.second @ c)


def coefficient_map(system: PiecewiseSystem, seed: SeedManifold, grid,
                    tols: Tolerances | None = None) -> CoefficientMap:
    """Columns for every perturbation coefficient, from one batched integration per node and side."""
    tols = tols or Tolerances()
    us = _as_grid(seed, grid)
    fpair = _basis_forcing(system)
    xi = system.x_index
    firsts, seconds, dets = [], [], []
    for u in us:
        cd = _crossing(system, seed, u, fpair, tols)
        v, _ = _reduce(system, cd, tols.beta)  # raises on singular Pi2 beta
        first = cd.alpha[xi]
        second = first - v
        firsts.append(first)
        seconds.append(second)
        dets.append(cd.pi2_beta_det)
    return CoefficientMap(system.perturbation_coefficients, us, np.vstack(firsts), np.vstack(seconds), np.array(dets))

