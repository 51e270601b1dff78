"""Shared fixtures: a generic degree-2 moduli point, grids and random smooth fields."""

from __future__ import annotations

import numpy as np
import pytest

from adiabatic_lumps.elliptic import ModuliPoint
from adiabatic_lumps.torus import LatticeSpec

# zeros a1, a2 and free pole b1 of the default configuration; b2 follows from the sum rule
DEFAULT_A = [0.05 + 0.1j, 0.55 + 0.6j]
DEFAULT_B = [0.6 + 0.15j]

# two more generic admissible points, one of them on an oblique lattice
OTHER_POINTS = [
    dict(lam=0.8 + 0.3j, a=[0.1 + 0.0j, 0.3 + 0.4j], b=[0.7j], omega2=1j),
    dict(lam=1.2 - 0.2j, a=[0.2 + 0.15j, 0.7 + 0.35j], b=[0.45 + 0.7j], omega2=0.3 + 1.1j),
]


def moduli_point(grid_n: int = 64, lam=1.0, a=None, b=None, omega1=1.0, omega2=1j) -> ModuliPoint:
    lat = LatticeSpec(omega1, omega2, grid_n)
    return ModuliPoint.from_complex(lam, DEFAULT_A if a is None else a,
                                    DEFAULT_B if b is None else b, lat)


def smooth_field(rng, lattice: LatticeSpec, modes: int = 3, components: int | None = 3) -> np.ndarray:
    """Random trigonometric polynomial with wave numbers |m|, |l| <= ``modes``."""
    s, t = np.meshgrid(np.arange(lattice.grid_n) / lattice.grid_n,
                       np.arange(lattice.grid_n) / lattice.grid_n, indexing="ij")
    shape = (components,) if components else ()
    out = np.zeros(shape + s.shape)
    for m in range(-modes, modes + 1):
        for l in range(0, modes + 1):
            c = rng.normal(size=shape + (2,)) / (1 + m * m + l * l)
            phase = 2 * np.pi * (m * s + l * t)
            out += c[..., 0, None, None] * np.cos(phase) + c[..., 1, None, None] * np.sin(phase)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def q64() -> ModuliPoint:
    return moduli_point(64)


@pytest.fixture(scope="session")
def q16() -> ModuliPoint:
    return moduli_point(16)


@pytest.fixture(scope="session")
def q1_default() -> np.ndarray:
    return np.array([0.0, 0.0, 0.5, 0.3, -0.4, 0.2, 0.1, -0.3])
