"""Refine perturbed periodic orbits near a realized Melnikov zero and show O(eps) convergence.

    python3 scripts/convergence_sweep.py pwl-quadratic --target 3.0
"""
from __future__ import annotations

import argparse

from pwmel.builtins import BUILTIN_NAMES, builtin_model
from pwmel.validate import DEFAULT_EPS, convergence_study
from pwmel.zeros import realize_zero_count


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("family", choices=BUILTIN_NAMES)
    ap.add_argument("--target", type=float, required=True, help="u value for the single realized zero")
    ap.add_argument("--eps", type=float, nargs="+", default=list(DEFAULT_EPS))
    args = ap.parse_args()

    system, seed, lib = builtin_model(args.family)
    real = realize_zero_count(system, seed, [args.target], scale=lambda u: lib.value("scale", u), scan_nodes=100)
    certified = [c for c in real.certificates if c.certified]
    if not certified:
        raise SystemExit("no certified zero near the target")
    u_star = min(certified, key=lambda c: abs(c.u_star[0] - args.target)).u_star
    table = convergence_study(system.with_coefficients(real.coefficients), seed, u_star, args.eps)

    print(f"u* = {u_star[0]:.10f}")
    print(f"{'eps':>10s} {'u_eps':>14s} {'|u_eps-u*|':>12s} {'ratio':>7s} {'closure':>10s}")
    ratios = [float("nan"), *table.ratios]
    for row, r in zip(table.rows(), ratios):
        print(f"{row['eps']:10.3e} {row['u']:14.10f} {row['distance']:12.4e} {r:7.3f} {row['closure']:10.2e}")


if __name__ == "__main__":
    main()
