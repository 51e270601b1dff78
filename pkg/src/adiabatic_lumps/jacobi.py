"""Jacobi operators of a harmonic map and their discrete spectra.

For a harmonic map ``psi`` with energy density ``g = |psi_x|^2 + |psi_y|^2``:

* ``J Y = -Lap Y - g Y + A Y`` with ``A Y = -2 (psi_x . Y_x + psi_y . Y_y) psi``
  is the second variation of the Dirichlet energy.  It is symmetric on
  tangent sections (``psi . Y = 0``) but not on all R^3-valued sections.
* ``A^dagger Z = 2 div((psi . Z) grad psi)`` is the L^2 adjoint of ``A``,
  written in divergence form so that the discrete adjoint relation holds to
  rounding error.
* ``L = J + A^dagger + 4 g (psi . Y) psi`` is symmetric on all sections,
  equals ``J`` on tangent sections and sends ``alpha psi`` to
  ``-(Lap alpha) psi``.  Its kernel is ``ker J`` plus the line spanned by ``psi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .elliptic import ModuliPoint, eval_map
from .torus import LatticeSpec, _check, dot, gradient, integrate, laplacian, sobolev_norm

__all__ = [
    "OperatorContext",
    "apply_J",
    "apply_A",
    "apply_Adagger",
    "apply_L",
    "apply_B",
    "project_tangent",
    "tangent_frame",
    "q1_form",
    "q2_form",
    "assemble_dense",
    "tangent_restriction",
    "symmetry_defect",
    "SpectrumReport",
    "kernel_dimension",
    "coercivity_estimate",
    "MAX_DENSE_GRID",
]

MAX_DENSE_GRID = 32


@dataclass(frozen=True, eq=False)
class OperatorContext:
    """Precomputed data of a harmonic map on a grid.

    Use :meth:`from_moduli` or :meth:`from_field`; both check that ``psi`` is
    unit length and, unless ``harmonic_tol`` is None, that its tension
    ``Lap psi + g psi`` is below ``harmonic_tol`` in sup norm.
    """

    psi: np.ndarray
    psi_x: np.ndarray
    psi_y: np.ndarray
    laplacian_psi: np.ndarray
    lattice: LatticeSpec
    harmonic_residual: float = field(default=0.0)

    @classmethod
    def from_field(cls, psi: np.ndarray, lattice: LatticeSpec,
                   harmonic_tol: float | None = 1e-5) -> "OperatorContext":
        psi = _check(psi, lattice)
        if psi.shape != (3, lattice.grid_n, lattice.grid_n):
            raise ValueError(f"psi must have shape (3, N, N), got {psi.shape}")
        defect = np.abs(np.sqrt((psi**2).sum(axis=0)) - 1).max()
        if defect > 1e-10:
            raise ValueError(f"psi is not unit length (defect {defect:.2e})")
        px, py = gradient(psi, lattice)
        lap = laplacian(psi, lattice)
        g = (px**2 + py**2).sum(axis=0)
        resid = float(np.abs(lap + g * psi).max())
        if harmonic_tol is not None and resid > harmonic_tol:
            raise ValueError(
                f"psi is not harmonic on this grid (tension {resid:.2e} > {harmonic_tol:.1e})"
            )
        return cls(psi, px, py, lap, lattice, resid)

    @classmethod
    def from_moduli(cls, q: ModuliPoint, lattice: LatticeSpec | None = None,
                    harmonic_tol: float | None = 1e-5) -> "OperatorContext":
        lat = q.lattice if lattice is None else lattice
        return cls.from_field(eval_map(q, lat), lat, harmonic_tol)

    @cached_property
    def energy_density(self) -> np.ndarray:
        """``g = |psi_x|^2 + |psi_y|^2``."""
        return (self.psi_x**2 + self.psi_y**2).sum(axis=0)

    @property
    def size(self) -> int:
        return 3 * self.lattice.grid_n**2


def _fields(ctx: OperatorContext, Y) -> np.ndarray:
    Y = _check(Y, ctx.lattice)
    if Y.ndim < 3 or Y.shape[-3] != 3:
        raise ValueError(f"expected an R^3-valued field, got shape {Y.shape}")
    return Y


def _grad_pairing(ctx: OperatorContext, Y) -> np.ndarray:
    Yx, Yy = gradient(Y, ctx.lattice)
    return dot(ctx.psi_x, Yx) + dot(ctx.psi_y, Yy)


def apply_A(ctx: OperatorContext, V) -> np.ndarray:
    """``A V = -2 (psi_x . V_x + psi_y . V_y) psi``."""
    V = _fields(ctx, V)
    return -2 * _grad_pairing(ctx, V)[..., None, :, :] * ctx.psi


def apply_Adagger(ctx: OperatorContext, Z) -> np.ndarray:
    """L^2 adjoint of :func:`apply_A`: ``2 [ (s psi_x)_x + (s psi_y)_y ]`` with ``s = psi . Z``.

    Expanding the derivatives gives
    ``2 { s Lap psi + s_x psi_x + s_y psi_y }``.
    """
    Z = _fields(ctx, Z)
    s = dot(ctx.psi, Z)[..., None, :, :]
    fx, _ = gradient(s * ctx.psi_x, ctx.lattice)
    _, fy = gradient(s * ctx.psi_y, ctx.lattice)
    return 2 * (fx + fy)


def apply_J(ctx: OperatorContext, V) -> np.ndarray:
    """``-Lap V - g V - 2 (psi_x . V_x + psi_y . V_y) psi``."""
    V = _fields(ctx, V)
    return -laplacian(V, ctx.lattice) - ctx.energy_density * V + apply_A(ctx, V)


def _normal_term(ctx: OperatorContext, Y) -> np.ndarray:
    return 4 * ctx.energy_density * dot(ctx.psi, Y)[..., None, :, :] * ctx.psi


def apply_L(ctx: OperatorContext, Y) -> np.ndarray:
    """The symmetric Jacobi operator ``J + A^dagger + 4 g (psi . Y) psi``."""
    Y = _fields(ctx, Y)
    return apply_J(ctx, Y) + apply_Adagger(ctx, Y) + _normal_term(ctx, Y)


def apply_B(ctx: OperatorContext, Y) -> np.ndarray:
    """Lower-order part of :func:`apply_L`, so that ``L = -Lap + B``.

    ``B Y = -g Y - 2 (psi_x . Y_x + psi_y . Y_y) psi + A^dagger Y + 4 g (psi . Y) psi``.
    For harmonic ``psi`` this is
    ``-g Y - 2 (grad psi . grad Y) psi - 2 s Lap psi + 2 s_x psi_x + 2 s_y psi_y``.
    """
    Y = _fields(ctx, Y)
    return -ctx.energy_density * Y + apply_A(ctx, Y) + apply_Adagger(ctx, Y) + _normal_term(ctx, Y)


def project_tangent(ctx: OperatorContext, Y) -> np.ndarray:
    """Pointwise projection ``Y - (psi . Y) psi`` onto tangent sections."""
    Y = _fields(ctx, Y)
    return Y - dot(ctx.psi, Y)[..., None, :, :] * ctx.psi


def tangent_frame(psi: np.ndarray) -> np.ndarray:
    """Orthonormal frame ``(e1, e2)`` of the plane orthogonal to ``psi`` at each point.

    Returns an array of shape ``(2, 3, N, N)``.
    """
    # cross with the coordinate axis least aligned with psi
    axis = np.argmin(np.abs(psi), axis=0)
    c = np.zeros_like(psi)
    np.put_along_axis(c, axis[None], 1.0, axis=0)
    e1 = np.cross(c, psi, axis=0)
    e1 /= np.sqrt((e1**2).sum(axis=0))
    e2 = np.cross(psi, e1, axis=0)
    return np.stack([e1, e2])


def q1_form(ctx: OperatorContext, Y) -> float:
    """``Q1(Y) = int |grad Y|^2 - g |Y|^2 - 4 (grad psi . grad Y)(psi . Y) + 4 g (psi . Y)^2``.

    The gradient term is evaluated as ``<Y, -Lap Y>``.  In the continuum the
    two agree; on the grid this choice keeps the Nyquist modes, so that
    ``Q1(Y) = <Y, L Y>`` holds to rounding error for every grid field.
    """
    Y = _fields(ctx, Y)
    s = dot(ctx.psi, Y)
    g = ctx.energy_density
    dens = (-dot(Y, laplacian(Y, ctx.lattice)) - g * (Y**2).sum(axis=-3)
            - 4 * _grad_pairing(ctx, Y) * s + 4 * g * s**2)
    return integrate(dens, ctx.lattice)


def q2_form(ctx: OperatorContext, Y) -> float:
    """``Q2(Y) = Q1(L Y)``."""
    return q1_form(ctx, apply_L(ctx, Y))


def _check_dense(ctx: OperatorContext) -> None:
    if ctx.lattice.grid_n > MAX_DENSE_GRID:
        raise ValueError(
            f"dense assembly needs grid_n <= {MAX_DENSE_GRID}, got {ctx.lattice.grid_n}"
        )


_OPERATORS = {"J": apply_J, "L": apply_L, "A": apply_A, "Adagger": apply_Adagger, "B": apply_B}


def assemble_dense(ctx: OperatorContext, operator: str = "L", chunk: int = 512) -> np.ndarray:
    """Matrix of ``operator`` acting on fields flattened in C order.

    Column ``i`` is the image of the i-th unit field.  With uniform quadrature
    weights the weighted matrix ``W^{1/2} M W^{-1/2}`` coincides with ``M``.
    """
    _check_dense(ctx)
    try:
        op = _OPERATORS[operator]
    except KeyError:
        raise ValueError(f"unknown operator {operator!r}; choose from {sorted(_OPERATORS)}")
    n = ctx.lattice.grid_n
    size = ctx.size
    out = np.empty((size, size))
    for start in range(0, size, chunk):
        stop = min(start + chunk, size)
        basis = np.zeros((stop - start, size))
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        out[:, start:stop] = op(ctx, basis.reshape(-1, 3, n, n)).reshape(stop - start, size).T
    return out


def weighted(ctx: OperatorContext, matrix: np.ndarray) -> np.ndarray:
    """``W^{1/2} M W^{-1/2}`` for the diagonal quadrature weight ``W``."""
    w = np.full(matrix.shape[0], ctx.lattice.cell_area)
    r = np.sqrt(w)
    return r[:, None] * matrix / r[None, :]


def symmetry_defect(matrix: np.ndarray) -> float:
    """``max |M - M^T| / max |M|``."""
    scale = np.abs(matrix).max()
    return float(np.abs(matrix - matrix.T).max() / scale) if scale > 0 else 0.0


def tangent_restriction(ctx: OperatorContext, matrix: np.ndarray) -> np.ndarray:
    """``E^T M E`` for the orthonormal tangent frame ``E`` (size ``2 N^2``)."""
    n = ctx.lattice.grid_n
    frame = tangent_frame(ctx.psi)  # (2, 3, N, N)
    # E maps a (2, N, N) coefficient field to the (3, N, N) field sum_a c_a e_a
    E = np.zeros((3 * n * n, 2 * n * n))
    pts = np.arange(n * n)
    for a in range(2):
        for i in range(3):
            E[i * n * n + pts, a * n * n + pts] = frame[a, i].ravel()
    return E.T @ matrix @ E


@dataclass
class SpectrumReport:
    """Lowest eigenvalues of a discrete operator and its detected kernel."""

    operator: str
    grid_n: int
    eigenvalues: np.ndarray
    kernel_dim: int | None
    gap_ratio: float
    coercivity: float | None
    coercivity_h1: float | None = None
    symmetry_defect: float = 0.0
    status: str = "ok"

    def to_dict(self, count: int | None = None) -> dict:
        ev = self.eigenvalues if count is None else self.eigenvalues[:count]
        return {
            "operator": self.operator,
            "grid_n": self.grid_n,
            "eigenvalues": [float(x) for x in ev],
            "kernel_dim": self.kernel_dim,
            "gap_ratio": float(self.gap_ratio),
            "coercivity": None if self.coercivity is None else float(self.coercivity),
            "coercivity_h1": None if self.coercivity_h1 is None else float(self.coercivity_h1),
            "symmetry_defect": float(self.symmetry_defect),
            "status": self.status,
        }


def _detect_kernel(evals: np.ndarray, window: int, min_ratio: float) -> tuple[int | None, float]:
    mags = np.sort(np.abs(evals))[: window + 1]
    floor = 1e-10 * max(np.abs(evals).max(), 1e-300)
    ratios = (mags[1:] + floor) / (mags[:-1] + floor)
    k = int(np.argmax(ratios))
    ratio = float(ratios[k])
    return (k + 1 if ratio >= min_ratio else None), ratio


def _stiffness(ctx: OperatorContext) -> np.ndarray:
    """Dense matrix of ``I - Lap`` on vector fields (the H^1 Gram form)."""
    n = ctx.lattice.grid_n
    size = n * n
    eye = np.eye(size).reshape(size, n, n)
    lap = laplacian(eye, ctx.lattice).reshape(size, size).T
    block = np.eye(size) - lap
    return scipy.linalg.block_diag(block, block, block)


def kernel_dimension(ctx: OperatorContext, operator: str = "L", n: int = 2,
                     min_ratio: float = 10.0, h1: bool = False) -> SpectrumReport:
    """Spectrum of ``L`` on all sections or of ``J`` on tangent sections.

    Parameters
    ----------
    operator : {"L", "J"}
        ``"J"`` is restricted to tangent sections through an orthonormal frame.
    n : int
        Degree; the kernel search window is the lowest ``4n + 4`` eigenvalues.
    min_ratio : float
        Minimum ratio of consecutive eigenvalue magnitudes that counts as a gap.
    h1 : bool
        Also compute the H^1-relative coercivity constant (generalized
        eigenproblem against ``I - Lap``; only for ``"L"``).

    Returns
    -------
    SpectrumReport
        ``status`` is ``"indeterminate"`` and ``kernel_dim`` is None when no
        gap of at least ``min_ratio`` is found.
    """
    if operator not in ("L", "J"):
        raise ValueError("operator must be 'L' or 'J'")
    M = weighted(ctx, assemble_dense(ctx, operator))
    if operator == "J":
        M = tangent_restriction(ctx, M)
    defect = symmetry_defect(M)
    evals = scipy.linalg.eigvalsh(0.5 * (M + M.T))
    window = 4 * n + 4
    kdim, ratio = _detect_kernel(evals, window, min_ratio)
    order = np.argsort(np.abs(evals))
    ev = evals[order]
    # signed minimum over the non-kernel spectrum, so a negative eigenvalue is never hidden
    coercivity = None if kdim is None else float(ev[kdim:].min())
    report = SpectrumReport(operator, ctx.lattice.grid_n, ev[: 4 * n + 8], kdim, ratio,
                            coercivity,
                            symmetry_defect=defect,
                            status="ok" if kdim is not None else "indeterminate")
    if h1 and kdim is not None and operator == "L":
        S = _stiffness(ctx)
        gen = scipy.linalg.eigvalsh(0.5 * (M + M.T), S)
        report.coercivity_h1 = float(gen[np.argsort(np.abs(gen))][kdim:].min())
    return report


def coercivity_estimate(ctx: OperatorContext, n: int = 2, tangent: bool = False) -> float:
    """Smallest eigenvalue of ``L`` beyond its numerical kernel.

    With ``tangent=True`` the operator is restricted to tangent sections
    first (where it agrees with ``J``).  Raises ``RuntimeError`` when the
    kernel cannot be separated from the rest of the spectrum.
    """
    rep = kernel_dimension(ctx, "J" if tangent else "L", n)
    if rep.kernel_dim is None:
        raise RuntimeError(f"indeterminate kernel (gap ratio {rep.gap_ratio:.2f})")
    return rep.coercivity


def sobolev_rayleigh(ctx: OperatorContext, Y, k: int = 1) -> float:
    """``Q1(Y) / ||Y||_k^2``, a Rayleigh quotient of ``L`` in the H^k norm."""
    return q1_form(ctx, Y) / sobolev_norm(Y, ctx.lattice, k) ** 2
