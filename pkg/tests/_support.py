"""Shared, cached fixtures for the test modules (one session, one core)."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from pwmel.builtins import BUILTIN_NAMES, builtin_model
from pwmel.melnikov import coefficient_map

FAMILIES = BUILTIN_NAMES

ZERO_TARGETS = {
    "pwl-a": (0.5, 1.5),
    "pwl-b": (0.3, 0.7),
    "pwl-quadratic": (2.2, 2.45, 2.75, 3.05, 3.35, 3.6, 3.85),
    "parab-flat": (0.7, 1.0, 1.35, 1.75),
    "parab-y": (0.07, 0.10, 0.13, 0.16, 0.19, 0.22),
    "parab-x2": (0.12, 0.2, 0.3, 0.4, 0.5, 0.6, 0.72, 0.85),
}

# single well-conditioned zero per family for eps sweeps
SWEEP_TARGET = {
    "pwl-a": 0.3,
    "pwl-b": 0.5,
    "pwl-quadratic": 3.0,
    "parab-flat": 1.2,
    "parab-y": 0.15,
    "parab-x2": 0.5,
}

FIT_NODES = 40


@lru_cache(maxsize=None)
def model(name: str, **params):
    return builtin_model(name, params or None)


@lru_cache(maxsize=None)
def cmap(name: str):
    """Coefficient map on the 40-node fit grid plus every target used in the suite."""
    system, seed, _ = model(name)
    grid = np.union1d(seed.grid(FIT_NODES), [*ZERO_TARGETS[name], SWEEP_TARGET[name]])
    return coefficient_map(system, seed, grid)


def fit_rows(name: str) -> np.ndarray:
    """Row indices of ``cmap(name)`` that belong to the plain 40-node grid."""
    _, seed, _ = model(name)
    return np.searchsorted(cmap(name).grid, seed.grid(FIT_NODES))


def random_coefficients(system, rng, scale: float = 1.0) -> dict[str, float]:
    return {k: float(scale * rng.standard_normal()) for k in system.perturbation_coefficients}


def scale_fn(name: str):
    lib = model(name)[2]
    return lambda u: lib.value("scale", u)
