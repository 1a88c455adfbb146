"""Simple zeros of the Melnikov function, Wronskians and zero-count realization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np

from .expr import Expression, evaluate_mp, taylor_derivatives
from .melnikov import (
    CoefficientMap,
    MelnikovError,
    MelnikovScan,
    coefficient_map,
    crossing_data,
    melnikov_scan,
    _reduce,
)
from .model import PiecewiseSystem, SeedManifold, Tolerances

__all__ = [
    "InfeasibleTargetError",
    "Realization",
    "WronskianTable",
    "ZeroCertificate",
    "ZeroList",
    "ZeroTolerances",
    "ect_check",
    "find_simple_zeros",
    "realize_zero_count",
    "wronskian",
]


class InfeasibleTargetError(ValueError):
    """The requested zero configuration is not realizable in the Melnikov span."""


@dataclass(frozen=True)
class ZeroTolerances:
    residual: float = 1e-9  # relative to the scan's term magnitude
    nd: float = 1e-6  # relative to the median slope on the grid
    fd_step: float = 1e-6  # relative to the box width
    merge: float = 1e-8
    max_iter: int = 40


@dataclass(frozen=True)
class ZeroCertificate:
    u_star: np.ndarray
    residual: float
    jacobian: np.ndarray
    jac_det: float
    nondegenerate: bool
    beta_det_at_zero: float
    scale: float
    iterations: int
    converged: bool

    @property
    def certified(self) -> bool:
        return self.converged and self.nondegenerate and self.residual <= 1e-9 * self.scale

    def as_dict(self) -> dict:
        return {
            "u_star": [float(x) for x in self.u_star],
            "residual": float(self.residual),
            "jacobian": np.asarray(self.jacobian).tolist(),
            "jac_det": float(self.jac_det),
            "nondegenerate": bool(self.nondegenerate),
            "beta_det_at_zero": float(self.beta_det_at_zero),
            "scale": float(self.scale),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "certified": bool(self.certified),
        }


class ZeroList(list):
    """List of certificates with an optional diagnostic message."""

    diagnostic: str = ""


def _evaluator(scan: MelnikovScan, tols: Tolerances):
    system, seed = scan.system, scan.seed
    if system is None:
        raise ValueError("scan does not carry its system; build it with melnikov_scan")

    def value(u):
        cd = crossing_data(system, seed, u, tols)
        v, mg = _reduce(system, cd, tols.beta)
        return v[:, 0], cd.pi2_beta_det

    return value


def find_simple_zeros(scan: MelnikovScan, ztols: ZeroTolerances | None = None,
                      tols: Tolerances | None = None, seeds=None) -> ZeroList:
    """Locate and certify zeros of the Melnikov function sampled in ``scan``.

    For ``n = 1`` every sign change between adjacent valid nodes is refined
    by Newton's method with a central finite-difference derivative,
    safeguarded by the bracket. For ``n > 1`` Newton starts from ``seeds``.
    """
    ztols = ztols or ZeroTolerances()
    tols = tols or scan.tols or Tolerances()
    value = _evaluator(scan, tols)
    out = ZeroList()
    good = np.all(np.isfinite(scan.values), axis=1)
    if not np.any(good):
        out.diagnostic = "no valid scan nodes"
        return out
    scale = float(np.nanmax(scan.magnitude[good]))
    if not scale > 0 or np.nanmax(np.abs(scan.values[good])) <= 1e-12 * max(scale, 1e-300):
        out.diagnostic = "Melnikov function vanishes identically on the grid (degenerate everywhere)"
        return out
    widths = np.array([hi - lo for lo, hi in scan.box])
    step = ztols.fd_step * widths
    if scan.n == 1:
        g = scan.grid.reshape(-1)
        v = scan.values[:, 0]
        idx = np.flatnonzero(good)
        slopes = np.abs(np.diff(v[idx]) / np.diff(g[idx]))
        tol_nd = ztols.nd * float(np.median(slopes)) if len(slopes) else 0.0
        for a, b in zip(idx[:-1], idx[1:]):
            if v[a] == 0.0 or np.sign(v[a]) != np.sign(v[b]):
                cert = _refine_1d(value, g[a], g[b], v[a], v[b], step[0], scale, tol_nd, ztols)
                if cert is not None and not cert.converged and cert.nondegenerate:
                    cert = _polish_1d(scan, cert, tols, step[0], scale, tol_nd, ztols) or cert
                if cert is not None:
                    out.append(cert)
    else:
        if seeds is None:
            raise ValueError("n > 1 needs explicit Newton seeds")
        tol_nd = ztols.nd
        for s in seeds:
            cert = _newton_nd(value, np.asarray(s, dtype=float), step, scale, tol_nd, ztols)
            if cert is not None:
                out.append(cert)
    merged = ZeroList()
    for c in sorted(out, key=lambda c: tuple(c.u_star)):
        if merged and np.max(np.abs(merged[-1].u_star - c.u_star)) <= ztols.merge:
            continue
        merged.append(c)
    return merged


def _polish_1d(scan, cert, tols, h, scale, tol_nd, ztols):
    """Repeat the refinement with tighter integration when noise blocks the residual test."""
    u = float(cert.u_star[0])
    for factor in (10.0, 100.0):
        value = _evaluator(scan, tols.refined(factor))
        half = 100 * h
        try:
            fa, fb = value(u - half)[0][0], value(u + half)[0][0]
        except MelnikovError:
            return None
        if np.sign(fa) == np.sign(fb):
            return None
        better = _refine_1d(value, u - half, u + half, fa, fb, h, scale, tol_nd, ztols)
        if better is None:
            return None
        if better.converged:
            return better
        u = float(better.u_star[0])
    return None


def _fd_derivative(value, u, h):
    return (value(u + h)[0][0] - value(u - h)[0][0]) / (2 * h)


def _refine_1d(value, a, b, fa, fb, h, scale, tol_nd, ztols: ZeroTolerances):
    """Newton with a central-difference slope, kept inside the sign bracket.

    Iterates until the step stalls below ``xtol`` (a tiny fraction of the
    box width), i.e. down to the evaluation noise floor, and only then
    applies the residual test.
    """
    xtol = 1e-4 * h
    u = a if fa == 0.0 else a - fa * (b - a) / (fb - fa)
    it = 0
    while fa != 0.0 and it < ztols.max_iter:
        it += 1
        try:
            fu = value(u)[0][0]
        except MelnikovError:
            return None
        if fu == 0.0:
            break
        if np.sign(fu) == np.sign(fa):
            a, fa = u, fu
        else:
            b, fb = u, fu
        try:
            d = _fd_derivative(value, u, h)
        except MelnikovError:
            d = 0.0
        cand = u - fu / d if d != 0 and np.isfinite(d) else None
        if cand is None or not (a <= cand <= b):
            cand = a - fa * (b - a) / (fb - fa)
            if not (a < cand < b) or it % 4 == 0:
                cand = 0.5 * (a + b)
        done = abs(cand - u) <= xtol or b - a <= xtol
        u = cand
        if done:
            break
    try:
        fu, bdet = value(u)
        d = _fd_derivative(value, u, h)
    except MelnikovError:
        return None
    res = float(abs(fu[0]))
    return ZeroCertificate(
        np.array([u]), res, np.array([[d]]), float(d), bool(abs(d) >= tol_nd), float(bdet), scale, it,
        bool(res <= ztols.residual * scale and it < ztols.max_iter),
    )


def _newton_nd(value, u, h, scale, tol_nd, ztols: ZeroTolerances):
    n = len(u)
    it = 0
    for it in range(1, ztols.max_iter + 1):
        try:
            f, bdet = value(u)
        except MelnikovError:
            return None
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h[j]
            J[:, j] = (value(u + e)[0] - value(u - e)[0]) / (2 * h[j])
        if np.linalg.norm(f) <= ztols.residual * scale * 1e-3:
            break
        try:
            du = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            return None
        u = u + du
        if np.linalg.norm(du) <= 1e-15 * max(1.0, np.linalg.norm(u)):
            break
    f, bdet = value(u)
    det = float(np.linalg.det(J))
    res = float(np.linalg.norm(f))
    return ZeroCertificate(u, res, J, det, bool(abs(det) >= tol_nd), float(bdet), scale, it,
                           bool(res <= ztols.residual * scale))


# ---------------------------------------------------------------------- Wronskians


def _jet_rows(functions: Sequence[Expression], x: float, k: int) -> np.ndarray:
    return np.array([taylor_derivatives(f, x, k) for f in functions]).T


def _fd_rows_mp(functions: Sequence, x: float, k: int, h: float = 1e-3, dps: int = 60):
    """Derivatives by Richardson-extrapolated central differences, as an mpmath matrix."""
    calls = [f if callable(f) and not isinstance(f, Expression) else _mp_caller(f) for f in functions]
    with mpmath.workdps(dps):
        xm = mpmath.mpf(x)
        out = mpmath.matrix(k + 1, len(calls))
        for j, f in enumerate(calls):
            out[0, j] = f(xm)
            for r in range(1, k + 1):
                out[r, j] = _richardson(f, xm, r, mpmath.mpf(h))
    return out


def _fd_rows(functions: Sequence, x: float, k: int, h: float = 1e-3, dps: int = 60) -> np.ndarray:
    rows = _fd_rows_mp(functions, x, k, h, dps)
    return np.array([[float(rows[i, j]) for j in range(rows.cols)] for i in range(rows.rows)])


def _mp_det(a) -> "mpmath.mpf":
    # partial-pivot elimination; mpmath.det trips over exactly singular input
    a = [[a[i, j] for j in range(a.cols)] for i in range(a.rows)]
    n, det = len(a), mpmath.mpf(1)
    for c in range(n):
        p = max(range(c, n), key=lambda i: abs(a[i][c]))
        if a[p][c] == 0:
            return mpmath.mpf(0)
        if p != c:
            a[c], a[p] = a[p], a[c]
            det = -det
        det *= a[c][c]
        for i in range(c + 1, n):
            f = a[i][c] / a[c][c]
            for j in range(c, n):
                a[i][j] -= f * a[c][j]
    return det


def _mp_prefix_dets(rows, dps: int = 60) -> list:
    with mpmath.workdps(dps):
        return [_mp_det(rows[: k + 1, : k + 1]) for k in range(rows.rows)]


def _mp_caller(expr: Expression):
    return lambda x: evaluate_mp(expr, [x])


def _central(f, x, r, h):
    # r-th central difference over a stencil of spacing h
    total = mpmath.mpf(0)
    for i in range(r + 1):
        total += (-1) ** i * mpmath.binomial(r, i) * f(x + (r / mpmath.mpf(2) - i) * h)
    return total / h ** r


def _richardson(f, x, r, h, levels: int = 6):
    table = [_central(f, x, r, h / 2 ** i) for i in range(levels)]
    for lev in range(1, levels):
        fac = mpmath.mpf(4) ** lev
        table = [(fac * table[i + 1] - table[i]) / (fac - 1) for i in range(len(table) - 1)]
    return table[0]


def wronskian(functions: Sequence, x: float, k: int, method: str = "jet") -> float:
    """``W[f_0, ..., f_k](x)``: determinant of derivatives of orders 0..k.

    ``method="jet"`` uses exact Taylor jets (expressions only);
    ``method="fd"`` uses Richardson-extrapolated central differences and also
    accepts plain callables of one ``mpmath`` argument.
    """
    fs = list(functions)[: k + 1]
    if len(fs) != k + 1:
        raise ValueError(f"need at least {k + 1} functions for W_{k}")
    if method == "jet":
        rows = _jet_rows(fs, x, k)
    elif method == "fd":
        return float(_mp_prefix_dets(_fd_rows_mp(fs, x, k))[k])
    else:
        raise ValueError(f"unknown method {method!r}")
    if k == 0:
        return float(rows[0, 0])
    return float(np.linalg.det(rows))


@dataclass(frozen=True)
class WronskianTable:
    functions: tuple[str, ...]
    samples: np.ndarray
    values: np.ndarray  # (K, samples)
    nonvanishing: tuple[bool, ...]
    interval: tuple[float, float]

    @property
    def is_ect(self) -> bool:
        return all(self.nonvanishing)

    def rows(self) -> list[dict]:
        return [
            {"x": float(x), **{f"W{k}": float(self.values[k, j]) for k in range(self.values.shape[0])}}
            for j, x in enumerate(self.samples)
        ]


def chebyshev_points(interval: tuple[float, float], samples: int) -> np.ndarray:
    lo, hi = interval
    j = np.arange(samples)
    return np.sort(0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * (2 * j + 1) / (2 * samples)))


def ect_check(functions: Sequence[Expression], interval: tuple[float, float], samples: int = 200,
              tol: float = 1e-10) -> WronskianTable:
    """Sampled ECT test: each prefix Wronskian keeps one sign at all Chebyshev samples.

    Determinants come from double-precision Taylor jets. When one is within
    ``tol`` of the Hadamard bound of its derivative matrix the double result
    cannot be trusted, and the prefix Wronskians at that sample are
    recomputed from 60-digit derivatives, where the same relative test uses
    ``1e-25``.
    """
    fs = list(functions)
    xs = chebyshev_points(interval, samples)
    K = len(fs)
    vals = np.empty((K, samples))
    nonzero = np.ones((K, samples), dtype=bool)
    for j, x in enumerate(xs):
        rows = _jet_rows(fs, float(x), K - 1)
        doubtful = False
        bounds = []
        for k in range(K):
            sub = rows[: k + 1, : k + 1]
            w = float(np.linalg.det(sub)) if k else float(sub[0, 0])
            vals[k, j] = w
            bounds.append(float(np.prod(np.linalg.norm(sub, axis=0))))
            nonzero[k, j] = abs(w) > tol * bounds[k] and np.isfinite(w)
            doubtful |= not nonzero[k, j]
        if doubtful:
            dets = _mp_prefix_dets(_fd_rows_mp(fs, float(x), K - 1))
            for k in range(K):
                vals[k, j] = float(dets[k])
                nonzero[k, j] = abs(dets[k]) > 1e-25 * bounds[k]
    flags = []
    for k in range(K):
        sgn = np.sign(vals[k])
        flags.append(bool(np.all(nonzero[k]) and np.all(sgn == sgn[0])))
    names = tuple(str(f) for f in fs)
    return WronskianTable(names, xs, vals, tuple(flags), (float(interval[0]), float(interval[1])))


# ---------------------------------------------------------------------- realization


@dataclass(frozen=True)
class Realization:
    coefficients: dict
    certificates: ZeroList
    targets: np.ndarray
    rank: int
    fit_residual: float
    scan: MelnikovScan = field(repr=False)


def _numerical_rank(s: np.ndarray, rank_tol: float) -> int:
    return int(np.sum(s > rank_tol * s[0]))


def realize_zero_count(system: PiecewiseSystem, seed: SeedManifold, targets: Sequence[float],
                       scale: Callable[[float], float] | None = None, fit_nodes: int = 40,
                       scan_nodes: int = 400, tols: Tolerances | None = None,
                       ztols: ZeroTolerances | None = None, rank_tol: float = 1e-12,
                       cmap: CoefficientMap | None = None) -> Realization:
    """Perturbation coefficients whose Melnikov function changes sign exactly at ``targets``.

    The coefficient map is sampled on ``fit_nodes`` nodes plus the targets and
    multiplied by ``scale(u)`` (a nonvanishing factor; 1 when omitted). Within
    its numerical range the function vanishing at the targets is a null
    vector of the target rows; when several exist, the one needing the
    smallest coefficient vector is used. The resulting coefficients are
    rescanned from scratch and every sign change is certified. A
    precomputed ``cmap`` whose grid contains the targets may be passed to
    skip the sampling step.
    """
    tols = tols or Tolerances()
    if seed.n != 1:
        raise ValueError("realize_zero_count supports one-dimensional seed boxes")
    lo, hi = seed.v_box[0]
    targets = np.sort(np.asarray(targets, dtype=float))
    if np.any(targets <= lo) or np.any(targets >= hi):
        raise InfeasibleTargetError(f"targets must lie strictly inside ({lo}, {hi})")
    if cmap is None:
        grid = np.union1d(seed.grid(fit_nodes), targets)
        cm = coefficient_map(system, seed, grid, tols)
    else:
        cm, grid = cmap, np.asarray(cmap.grid, dtype=float).reshape(-1)
        missing = [t for t in targets if not np.any(np.abs(grid - t) <= 1e-14 * max(1.0, abs(t)))]
        if missing:
            raise ValueError(f"precomputed coefficient map lacks target nodes {missing}")
    fac = np.array([scale(u) for u in grid]) if scale is not None else np.ones(len(grid))
    if not (np.all(fac > 0) or np.all(fac < 0)):
        raise InfeasibleTargetError("scale factor changes sign inside the box")
    S = fac[:, None] * cm.matrix
    U, s, Vt = np.linalg.svd(S, full_matrices=False)
    r = _numerical_rank(s, rank_tol)
    if len(targets) >= r:
        raise InfeasibleTargetError(
            f"{len(targets)} targets need a span of dimension > {len(targets)}; numerical rank is {r}"
        )
    rows = np.searchsorted(grid, targets)
    A = U[rows, :r]
    _, _, vat = np.linalg.svd(A)
    null = vat[len(targets):].T
    # among the admissible profiles take the one with the smallest coefficients
    _, _, wt = np.linalg.svd(null / s[:r, None])
    a = null @ wt[-1]
    # deterministic sign: positive at the left end of the box
    if (U[:, :r] @ a)[0] < 0:
        a = -a
    coeffs = Vt[:r].T @ (a / s[:r])
    profile = cm.matrix @ coeffs
    coeffs = coeffs / np.max(np.abs(profile))
    fit_res = float(np.max(np.abs((fac * (cm.matrix @ coeffs))[rows]))) if len(targets) else 0.0
    realized = system.with_coefficients(coeffs)
    scan = melnikov_scan(realized, seed, scan_nodes, tols)
    certs = find_simple_zeros(scan, ztols, tols)
    named = dict(zip(system.perturbation_coefficients, map(float, coeffs)))
    return Realization(named, certs, targets, r, fit_res, scan)
