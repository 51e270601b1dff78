"""Flat two-torus C/Lambda, grid fields and spectral calculus.

Fields are plain numpy arrays.  A scalar field has shape ``(N, N)`` and a
vector (R^3-valued) field has shape ``(3, N, N)``; leading batch axes are
allowed everywhere.  Grid index ``[j, k]`` is the point
``z = (j/N) omega1 + (k/N) omega2``.

Transform normalization: ``numpy.fft`` defaults (unnormalized forward,
``1/N^2`` inverse).  With that convention, for real fields on the grid

    integrate(f * g) = cell_area * sum(f * g) = (area / N**4) * sum(F * conj(G))

which is what ``tests/test_torus.py`` checks as the Parseval identity.

First derivatives annihilate the Nyquist row and column, which keeps them
real and antisymmetric and removes the sign ambiguity of the Nyquist wave
vector on oblique lattices.  The Laplacian keeps the Nyquist modes, with
``|k|^2`` averaged over the two aliased wave vectors so that it stays real
and symmetric.  Dropping them from the Laplacian as well would give the
Nyquist modes zero stiffness, and operators such as ``-Lap - g`` would pick
up spurious negative eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

__all__ = [
    "LatticeSpec",
    "deriv",
    "gradient",
    "laplacian",
    "integrate",
    "l2_inner",
    "sobolev_norm",
    "ck_norm",
    "dot",
    "dealias",
]


@dataclass(frozen=True)
class LatticeSpec:
    """The torus ``C / (Z omega1 + Z omega2)`` sampled on an N x N grid.

    Parameters
    ----------
    omega1 : complex
        First period; must be real and positive.
    omega2 : complex
        Second period; ``Im(omega2 / omega1) > 0``.
    grid_n : int
        Grid points per lattice direction (even, at least 8).
    """

    omega1: complex = 1.0
    omega2: complex = 1j
    grid_n: int = 64

    def __post_init__(self):
        w1 = complex(self.omega1)
        w2 = complex(self.omega2)
        object.__setattr__(self, "omega1", w1)
        object.__setattr__(self, "omega2", w2)
        if abs(w1.imag) > 1e-14 * abs(w1) or w1.real <= 0:
            raise ValueError(f"omega1 must be real and positive, got {w1}")
        if (w2 / w1).imag <= 0:
            raise ValueError("Im(omega2/omega1) must be positive")
        if int(self.grid_n) != self.grid_n or self.grid_n < 8 or self.grid_n % 2:
            raise ValueError(f"grid_n must be an even integer >= 8, got {self.grid_n}")
        object.__setattr__(self, "grid_n", int(self.grid_n))

    def __reduce__(self):
        return (LatticeSpec, (self.omega1, self.omega2, self.grid_n))

    def with_grid(self, grid_n: int) -> "LatticeSpec":
        return LatticeSpec(self.omega1, self.omega2, grid_n)

    def same_torus(self, other: "LatticeSpec") -> bool:
        return self.omega1 == other.omega1 and self.omega2 == other.omega2

    @property
    def periods(self) -> tuple[complex, complex]:
        return self.omega1, self.omega2

    @property
    def area(self) -> float:
        return float((self.omega1.conjugate() * self.omega2).imag)

    @property
    def cell_area(self) -> float:
        return self.area / self.grid_n**2

    @property
    def h_min(self) -> float:
        """Minimum spacing between distinct grid points."""
        n = self.grid_n
        d1, d2 = self.omega1 / n, self.omega2 / n
        return min(abs(d1), abs(d2), abs(d1 + d2), abs(d1 - d2))

    @cached_property
    def points(self) -> np.ndarray:
        s = np.arange(self.grid_n) / self.grid_n
        return s[:, None] * self.omega1 + s[None, :] * self.omega2

    @property
    def x(self) -> np.ndarray:
        return self.points.real

    @property
    def y(self) -> np.ndarray:
        return self.points.imag

    @cached_property
    def _basis(self) -> np.ndarray:
        # (x, y) = A @ (s, t)
        w1, w2 = self.omega1, self.omega2
        return np.array([[w1.real, w2.real], [w1.imag, w2.imag]])

    def to_lattice_coords(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``z = s omega1 + t omega2`` for real ``(s, t)``."""
        z = np.asarray(z, dtype=complex)
        inv = np.linalg.inv(self._basis)
        s = inv[0, 0] * z.real + inv[0, 1] * z.imag
        t = inv[1, 0] * z.real + inv[1, 1] * z.imag
        return s, t

    def reduce(self, z) -> np.ndarray:
        """Representative of ``z`` mod the lattice in the centred cell."""
        s, t = self.to_lattice_coords(z)
        return np.asarray(z) - np.round(s) * self.omega1 - np.round(t) * self.omega2

    def torus_distance(self, z1, z2) -> np.ndarray:
        """Distance between ``z1`` and ``z2`` on the torus."""
        d = self.reduce(np.asarray(z1, dtype=complex) - np.asarray(z2, dtype=complex))
        best = np.abs(d)
        for m, n in product((-1, 0, 1), repeat=2):
            if m or n:
                best = np.minimum(best, np.abs(d + m * self.omega1 + n * self.omega2))
        return best

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Dual-lattice wave vectors ``(kx, ky)`` on the rfft2 layout.

        Nyquist entries are zero (see module docstring).
        """
        n = self.grid_n
        m = np.fft.fftfreq(n, 1.0 / n)
        l = np.fft.rfftfreq(n, 1.0 / n)
        mm, ll = np.meshgrid(m, l, indexing="ij")
        # exp(2 pi i (m s + l t)) with (s, t) = A^{-1} (x, y)  =>  k = 2 pi A^{-T} (m, l)
        inv_t = np.linalg.inv(self._basis).T
        kx = 2 * np.pi * (inv_t[0, 0] * mm + inv_t[0, 1] * ll)
        ky = 2 * np.pi * (inv_t[1, 0] * mm + inv_t[1, 1] * ll)
        nyquist = (np.abs(mm) == n // 2) | (ll == n // 2)
        kx[nyquist] = 0.0
        ky[nyquist] = 0.0
        return kx, ky

    @cached_property
    def k_squared(self) -> np.ndarray:
        """Symbol of ``-Laplacian`` on the rfft2 layout, Nyquist modes included."""
        n = self.grid_n
        m = np.fft.fftfreq(n, 1.0 / n)
        l = np.fft.rfftfreq(n, 1.0 / n)
        inv_t = np.linalg.inv(self._basis).T

        def ksq(mm, ll):
            kx = 2 * np.pi * (inv_t[0, 0] * mm + inv_t[0, 1] * ll)
            ky = 2 * np.pi * (inv_t[1, 0] * mm + inv_t[1, 1] * ll)
            return kx**2 + ky**2

        mm, ll = np.meshgrid(m, l, indexing="ij")
        # Nyquist indices stand for both +n/2 and -n/2
        alt_m = np.where(np.abs(mm) == n // 2, -mm, mm)
        alt_l = np.where(ll == n // 2, -ll, ll)
        return 0.25 * (ksq(mm, ll) + ksq(alt_m, ll) + ksq(mm, alt_l) + ksq(alt_m, alt_l))


def _check(f: np.ndarray, lattice: LatticeSpec) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    n = lattice.grid_n
    if f.shape[-2:] != (n, n):
        raise ValueError(f"field of shape {f.shape} does not live on a {n}x{n} grid")
    return f


def _spectral(f: np.ndarray, lattice: LatticeSpec, multiplier: np.ndarray) -> np.ndarray:
    f = _check(f, lattice)
    n = lattice.grid_n
    return np.fft.irfft2(multiplier * np.fft.rfft2(f), s=(n, n))


def deriv(f, lattice: LatticeSpec, direction: str) -> np.ndarray:
    """Exact x- or y-derivative of the trigonometric interpolant of ``f``."""
    kx, ky = lattice.wavevectors
    if direction == "x":
        return _spectral(f, lattice, 1j * kx)
    if direction == "y":
        return _spectral(f, lattice, 1j * ky)
    raise ValueError(f"direction must be 'x' or 'y', got {direction!r}")


def gradient(f, lattice: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Both first derivatives from a single forward transform."""
    f = _check(f, lattice)
    n = lattice.grid_n
    kx, ky = lattice.wavevectors
    fh = np.fft.rfft2(f)
    return (np.fft.irfft2(1j * kx * fh, s=(n, n)),
            np.fft.irfft2(1j * ky * fh, s=(n, n)))


def laplacian(f, lattice: LatticeSpec) -> np.ndarray:
    """``f_xx + f_yy`` as a Fourier multiplier (analysts' sign convention)."""
    return _spectral(f, lattice, -lattice.k_squared)


def dealias(f, lattice: LatticeSpec) -> np.ndarray:
    """Zero all modes outside the 2/3 box in lattice-index space."""
    n = lattice.grid_n
    m = np.abs(np.fft.fftfreq(n, 1.0 / n))
    l = np.fft.rfftfreq(n, 1.0 / n)
    keep = (m[:, None] <= n // 3) & (l[None, :] <= n // 3)
    return _spectral(f, lattice, keep.astype(float))


def integrate(f, lattice: LatticeSpec) -> np.ndarray | float:
    """Trapezoid rule over the torus, summing the last two axes."""
    f = _check(f, lattice)
    total = lattice.cell_area * f.sum(axis=(-2, -1))
    return float(total) if np.ndim(total) == 0 else total


def dot(Y, Z) -> np.ndarray:
    """Pointwise R^3 dot product of two vector fields (component axis -3)."""
    return np.einsum("...ijk,...ijk->...jk", Y, Z)


def l2_inner(Y, Z, lattice: LatticeSpec) -> float:
    """L^2 inner product of two vector (or two scalar) fields."""
    Y = _check(Y, lattice)
    Z = _check(Z, lattice)
    if Y.shape != Z.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {Z.shape}")
    return float(lattice.cell_area * np.sum(Y * Z))


def sobolev_norm(Y, lattice: LatticeSpec, k: int) -> float:
    """H^k norm: square root of the sum over multi-indices |alpha| <= k of ||D_alpha Y||^2.

    Multi-indices are ordered words in {x, y}, so each order-j word
    contributes and the Fourier weight is ``sum_{j<=k} |k|^(2j)``.
    """
    if k not in (0, 1, 2, 3):
        raise ValueError(f"Sobolev order must be in 0..3, got {k}")
    Y = _check(Y, lattice)
    n = lattice.grid_n
    k2 = lattice.k_squared
    weight = sum(k2**j for j in range(k + 1))
    # rfft layout: interior columns stand for a conjugate pair
    mult = np.full(k2.shape[-1], 2.0)
    mult[0] = 1.0
    mult[-1] = 1.0
    power = np.abs(np.fft.rfft2(Y)) ** 2 * weight * mult
    total = lattice.area / n**4 * power.sum()
    return float(np.sqrt(total))


def ck_norm(Y, lattice: LatticeSpec, k: int = 0) -> float:
    """Grid sup norm of ``|Y|`` (k=0) or of ``Y, Y_x, Y_y`` (k=1)."""
    if k not in (0, 1):
        raise ValueError(f"C^k norm implemented for k in (0, 1), got {k}")
    Y = _check(Y, lattice)
    vector = Y.ndim >= 3 and Y.shape[-3] == 3

    def mag(F):
        return np.sqrt((F**2).sum(axis=-3)) if vector else np.abs(F)

    out = mag(Y).max()
    if k == 1:
        Yx, Yy = gradient(Y, lattice)
        out = max(out, mag(Yx).max(), mag(Yy).max())
    return float(out)
