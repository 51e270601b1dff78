"""Splitting a wave map into a moduli-space path and a small correction.

A field near the moduli space is written ``phi = psi(q) + eps^2 Y`` with

* ``<Y, psi_mu(q)> = 0`` for every ``mu`` (orthogonality), and
* ``chi = psi . Y + 1/2 eps^2 |Y|^2 = 0`` pointwise (``|phi| = 1``).

``q`` is a function of the slow time ``tau = eps t``; dots on ``q`` are
``tau``-derivatives, while ``Y_t`` is the fast-time derivative.  Along a
wave map the pair ``(q, Y)`` satisfies

    Y_tt + L Y = k + eps j'
    M qddot = -G(qdot, qdot) + eps h

with ``k``, ``j'``, ``h`` and ``M`` as computed below and ``L``, ``G`` from
:mod:`adiabatic_lumps.jacobi` and :mod:`adiabatic_lumps.geometry`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import (
    InadmissibleError,
    ModuliPoint,
    admissible,
    directional_hessian,
    directional_third,
    eval_map,
    moduli_frame,
    moduli_hessian,
)
from .geometry import MetricData, metric_from_frame
from .jacobi import OperatorContext, apply_B, apply_L, q1_form, q2_form
from .torus import LatticeSpec, _check, dot, gradient, integrate, laplacian, sobolev_norm

__all__ = [
    "ProjectionError",
    "ModuliData",
    "ModulationDecomposition",
    "moduli_data",
    "project_to_moduli",
    "decompose",
    "chi",
    "compute_k",
    "compute_jprime",
    "compute_h",
    "compute_M_matrix",
    "alpha_a",
    "modulation_qddot",
    "energies_E1_E2",
    "error_functional",
    "coupled_residual",
    "CoupledResidual",
]


class ProjectionError(RuntimeError):
    """Newton iteration for the moduli projection failed."""


@dataclass(frozen=True, eq=False)
class ModuliData:
    """``psi``, its first and second moduli derivatives and the metric at ``q``."""

    q: ModuliPoint
    lattice: LatticeSpec
    psi: np.ndarray
    dpsi: np.ndarray
    hess: np.ndarray
    metric: MetricData

    def inner(self, Y, frames) -> np.ndarray:
        """``<Y, frames[...]>`` contracted over the field axes."""
        n = self.lattice.grid_n
        flat = frames.reshape(frames.shape[:-3] + (3 * n * n,))
        return self.lattice.cell_area * flat @ np.asarray(Y).reshape(-1)


def _lattice_for(phi: np.ndarray, q: ModuliPoint) -> LatticeSpec:
    return q.lattice.with_grid(phi.shape[-1])


def moduli_data(q: ModuliPoint, lattice: LatticeSpec | None = None) -> ModuliData:
    lat = q.lattice if lattice is None else lattice
    psi, dpsi = moduli_frame(q, lat)
    hess = moduli_hessian(q, lat)
    return ModuliData(q, lat, psi, dpsi, hess, metric_from_frame(dpsi, lat, q))


def project_to_moduli(phi: np.ndarray, q_guess: ModuliPoint, tol: float = 1e-12,
                      max_iter: int = 50, return_info: bool = False, polish: int = 1):
    """Solve ``F_mu(q) = <phi - psi(q), psi_mu(q)> = 0`` by Newton's method.

    The Jacobian is ``-gamma_{mu nu} + <phi - psi, psi_{mu nu}>``.  Iteration
    stops once ``|F| <= tol * ||phi||_0``, after ``polish`` further steps
    (taken only while they reduce ``|F|``).  Downstream quantities divide
    ``phi - psi(q)`` by ``eps^2`` and difference it in time, so the extra
    step pays for itself.

    Raises
    ------
    ProjectionError
        No convergence within ``max_iter`` iterations.
    InadmissibleError
        An iterate leaves the admissible region.
    """
    lat = _lattice_for(phi, q_guess)
    phi = _check(phi, lat)
    scale = np.sqrt(integrate((phi**2).sum(axis=0), lat))
    q = q_guess
    history = []
    best = None
    extra = 0
    for it in range(max_iter + 1):
        ok, diag = admissible(q)
        if not ok:
            raise InadmissibleError(f"projection left the admissible region: {diag}")
        psi, dpsi = moduli_frame(q, lat)
        r = phi - psi
        F = lat.cell_area * dpsi.reshape(q.dim, -1) @ r.reshape(-1)
        res = float(np.abs(F).max())
        history.append(res)
        if best is not None:
            if res >= best[1] or extra >= polish or res == 0.0:
                if res < best[1]:
                    best = (q, res)
                info = {"iterations": it, "residuals": history}
                return (best[0], info) if return_info else best[0]
            best = (q, res)
            extra += 1
        elif res <= tol * scale:
            if polish == 0 or res == 0.0:
                return (q, {"iterations": it, "residuals": history}) if return_info else q
            best = (q, res)
        if it == max_iter:
            if best is not None:
                return (best[0], {"iterations": it, "residuals": history}) if return_info else best[0]
            break
        hess = moduli_hessian(q, lat)
        gamma = lat.cell_area * dpsi.reshape(q.dim, -1) @ dpsi.reshape(q.dim, -1).T
        jac = -gamma + lat.cell_area * np.einsum("mnp,p->mn", hess.reshape(q.dim, q.dim, -1),
                                                 r.reshape(-1))
        q = q.with_q(q.q - np.linalg.solve(jac, F))
    raise ProjectionError(f"no convergence after {max_iter} iterations, |F| = {history[-1]:.2e}")


@dataclass(frozen=True, eq=False)
class ModulationDecomposition:
    """``phi = psi(q) + eps^2 Y`` together with the velocities ``qdot``, ``Y_t``."""

    q: ModuliPoint
    qdot: np.ndarray
    Y: np.ndarray
    Y_t: np.ndarray
    eps: float
    residuals: dict = field(default_factory=dict)
    data: ModuliData | None = None
    t: float = 0.0

    @property
    def lattice(self) -> LatticeSpec:
        return self.data.lattice

    @property
    def tau(self) -> float:
        return self.eps * self.t


def decompose(phi: np.ndarray, phi_t: np.ndarray, eps: float, q_guess: ModuliPoint,
              t: float = 0.0, tol: float = 1e-12) -> ModulationDecomposition:
    """Project ``phi`` to the moduli space and split off ``Y`` and ``Y_t``.

    ``qdot`` solves the time derivative of the orthogonality condition,
    ``eps (gamma_{nu mu} - eps^2 <Y, psi_{nu mu}>) qdot^mu = <phi_t, psi_nu>``,
    and then ``Y_t = (phi_t - eps qdot^mu psi_mu) / eps^2``.
    """
    if not eps > 0:
        raise ValueError("decompose needs eps > 0")
    q = project_to_moduli(phi, q_guess, tol=tol)
    lat = _lattice_for(phi, q)
    md = moduli_data(q, lat)
    Y = (phi - md.psi) / eps**2
    hY = md.inner(Y, md.hess)
    system = eps * (md.metric.gamma - eps**2 * hY)
    rhs = md.inner(phi_t, md.dpsi)
    try:
        qdot = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise ProjectionError(f"velocity system is singular: {exc}") from exc
    Y_t = (phi_t - eps * np.tensordot(qdot, md.dpsi, axes=1)) / eps**2
    dec = ModulationDecomposition(q, qdot, Y, Y_t, float(eps), {}, md, t)
    dec.residuals["ortho"] = md.inner(Y, md.dpsi)
    dec.residuals["ortho_max"] = float(np.abs(dec.residuals["ortho"]).max())
    dec.residuals["chi_c0"] = float(np.abs(chi(dec)).max())
    return dec


def chi(dec: ModulationDecomposition) -> np.ndarray:
    """Pointwise constraint ``psi . Y + 1/2 eps^2 |Y|^2`` (zero iff ``|psi + eps^2 Y| = 1``)."""
    return dot(dec.data.psi, dec.Y) + 0.5 * dec.eps**2 * dot(dec.Y, dec.Y)


def _psi_tau(md: ModuliData, qdot) -> np.ndarray:
    return np.tensordot(np.asarray(qdot, dtype=float), md.dpsi, axes=1)


def compute_k(q: ModuliPoint, qdot, qddot, lattice: LatticeSpec | None = None,
              data: ModuliData | None = None) -> np.ndarray:
    """``k = -(psi_tautau + |psi_tau|^2 psi)`` along the moduli path."""
    ok, diag = admissible(q)
    if not ok:
        raise InadmissibleError(f"inadmissible moduli point: {diag}")
    lat = q.lattice if lattice is None else lattice
    if data is not None:
        psi, dpsi = data.psi, data.dpsi
    else:
        psi, dpsi = moduli_frame(q, lat)
    qdot = np.asarray(qdot, dtype=float)
    psi_tau = np.tensordot(qdot, dpsi, axes=1)
    psi_tautau = np.tensordot(np.asarray(qddot, dtype=float), dpsi, axes=1)
    if np.any(qdot):
        psi_tautau = psi_tautau + np.tensordot(qdot, directional_hessian(q, qdot, lat), axes=1)
    return -(psi_tautau + dot(psi_tau, psi_tau) * psi)


def compute_jprime(eps: float, psi: np.ndarray, psi_tau: np.ndarray, Y, Y_t,
                   lattice: LatticeSpec) -> np.ndarray:
    """Nonlinear forcing ``j' = j + jhat`` of the correction equation.

    ``j = -[2 (psi_tau . Y_t) psi + eps {(|Y_t|^2 - |grad Y|^2) psi
    + (|psi_tau|^2 - 2 grad psi . grad Y) Y} + 2 eps^2 (psi_tau . Y_t) Y
    + eps^3 (|Y_t|^2 - |grad Y|^2) Y]``

    ``jhat = eps {|Y|^2 Lap psi - 2 (Y . Y_x) psi_x - 2 (Y . Y_y) psi_y}``,
    which is ``(L - J) Y / eps`` for ``Y`` obeying the pointwise constraint.
    """
    Y = _check(Y, lattice)
    Y_t = _check(Y_t, lattice)
    px, py = gradient(psi, lattice)
    Yx, Yy = gradient(Y, lattice)
    lap_psi = laplacian(psi, lattice)
    pt_yt = dot(psi_tau, Y_t)
    kin = dot(Y_t, Y_t) - dot(Yx, Yx) - dot(Yy, Yy)
    cross = dot(px, Yx) + dot(py, Yy)
    j = -(2 * pt_yt * psi
          + eps * (kin * psi + (dot(psi_tau, psi_tau) - 2 * cross) * Y)
          + 2 * eps**2 * pt_yt * Y
          + eps**3 * kin * Y)
    jhat = eps * (dot(Y, Y) * lap_psi - 2 * dot(Y, Yx) * px - 2 * dot(Y, Yy) * py)
    return j + jhat


def compute_h(eps: float, q: ModuliPoint, qdot, Y, Y_t, data: ModuliData | None = None) -> np.ndarray:
    """``h^mu = gamma^{mu a} [<j', psi_a> + 2 <Y_t, psi_{a nu}> qdot^nu + eps <Y, psi_{a nu lam}> qdot^nu qdot^lam]``."""
    md = moduli_data(q, q.lattice.with_grid(np.shape(Y)[-1])) if data is None else data
    lat = md.lattice
    qdot = np.asarray(qdot, dtype=float)
    jp = compute_jprime(eps, md.psi, _psi_tau(md, qdot), Y, Y_t, lat)
    lower = md.inner(jp, md.dpsi)
    if np.any(qdot):
        hq = np.tensordot(md.hess, qdot, axes=([1], [0]))  # psi_{a nu} qdot^nu
        lower = lower + 2 * md.inner(Y_t, hq)
        if eps:
            lower = lower + eps * md.inner(Y, directional_third(q, qdot, lat))
    return md.metric.gamma_inv @ lower


def alpha_a(data: ModuliData) -> float:
    """``max_{mu, nu} || gamma^{mu lam} psi_{lam nu} ||_0``."""
    mixed = np.einsum("ml,lnp->mnp", data.metric.gamma_inv,
                      data.hess.reshape(data.q.dim, data.q.dim, -1))
    return float(np.sqrt(data.lattice.cell_area * (mixed**2).sum(axis=-1)).max())


def compute_M_matrix(eps: float, q: ModuliPoint, Y, data: ModuliData | None = None,
                     return_info: bool = False):
    """``M^mu_nu = delta^mu_nu - eps^2 gamma^{mu lam} <Y, psi_{lam nu}>``.

    With ``return_info`` a dict with the condition number and ``alpha_a`` is
    also returned.  Raises ``numpy.linalg.LinAlgError`` if ``M`` is singular.
    """
    md = moduli_data(q, q.lattice.with_grid(np.shape(Y)[-1])) if data is None else data
    M = np.eye(q.dim) - eps**2 * md.metric.gamma_inv @ md.inner(Y, md.hess)
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(f"M is singular (condition number {cond:.2e})")
    if return_info:
        return M, {"cond": cond, "alpha_a": alpha_a(md)}
    return M


def modulation_qddot(dec: ModulationDecomposition) -> np.ndarray:
    """``qddot`` from ``M qddot = -G(qdot, qdot) + eps h`` at a decomposed state."""
    md = dec.data
    M = compute_M_matrix(dec.eps, dec.q, dec.Y, md)
    qdot = dec.qdot
    if np.any(qdot):
        pvv = np.tensordot(qdot, directional_hessian(dec.q, qdot, md.lattice), axes=1)
        geo = md.metric.gamma_inv @ md.inner(pvv, md.dpsi)
    else:
        geo = np.zeros_like(qdot)
    h = compute_h(dec.eps, dec.q, qdot, dec.Y, dec.Y_t, md)
    return np.linalg.solve(M, -geo + dec.eps * h)


def _context(psi: np.ndarray, lattice: LatticeSpec) -> OperatorContext:
    return OperatorContext.from_field(psi, lattice, harmonic_tol=None)


def energies_E1_E2(dec: ModulationDecomposition, dtau: float = 1e-4) -> tuple[float, float]:
    """``E1 = 1/2 ||Y_t||^2 + 1/2 Q1(Y)`` and ``E2 = 1/2 ||(L Y)_t||^2 + 1/2 Q2(Y)``.

    ``(L Y)_t = L Y_t + eps (d_tau B) Y``, with ``d_tau B`` a centred
    difference of the lower-order part of ``L`` along ``q +- dtau qdot``.
    """
    lat = dec.lattice
    ctx = _context(dec.data.psi, lat)
    Y, Y_t = dec.Y, dec.Y_t
    E1 = 0.5 * integrate(dot(Y_t, Y_t), lat) + 0.5 * q1_form(ctx, Y)
    LYt = apply_L(ctx, Y_t)
    if np.any(dec.qdot) and dec.eps:
        plus = dec.q.with_q(dec.q.q + dtau * dec.qdot)
        minus = dec.q.with_q(dec.q.q - dtau * dec.qdot)
        dB = (apply_B(_context(eval_map(plus, lat), lat), Y)
              - apply_B(_context(eval_map(minus, lat), lat), Y)) / (2 * dtau)
        LYt = LYt + dec.eps * dB
    E2 = 0.5 * integrate(dot(LYt, LYt), lat) + 0.5 * q2_form(ctx, Y)
    return float(E1), float(E2)


def error_functional(eps: float, q: np.ndarray, qdot: np.ndarray, qddot: np.ndarray,
                     q_star: np.ndarray, qdot_star: np.ndarray, qddot_star: np.ndarray,
                     Y_h3: np.ndarray, Yt_h2: np.ndarray) -> np.ndarray:
    """Running maximum ``M(s)`` of the total error along sampled trajectories.

    With ``q = q_* + eps^2 qt`` and primes denoting fast-time derivatives,
    ``qt' = (qdot - qdot_*) / eps`` and ``qt'' = qddot - qddot_*``; the
    summand is ``eps^2 |qt|^2 + |qt'|^2 + |qt''|^2 + ||Y||_3^2 + ||Y_t||_2^2``.

    Parameters
    ----------
    q, qdot, qddot : arrays of shape (samples, 4n)
        Decomposed moduli path and its slow-time derivatives.
    q_star, qdot_star, qddot_star : arrays of shape (samples, 4n)
        Reference geodesic at the same slow times.
    Y_h3, Yt_h2 : arrays of shape (samples,)
        ``||Y||_3`` and ``||Y_t||_2`` at each sample.
    """
    q, q_star = np.atleast_2d(q), np.atleast_2d(q_star)
    if q.shape != q_star.shape:
        raise ValueError("trajectory and geodesic are sampled differently")
    if not np.allclose(q[0], q_star[0], atol=1e-8) or not np.allclose(
            np.atleast_2d(qdot)[0], np.atleast_2d(qdot_star)[0], atol=1e-6):
        raise ValueError("trajectory and geodesic have different initial data")
    qt = (q - q_star) / eps**2
    qt1 = (np.atleast_2d(qdot) - qdot_star) / eps
    qt2 = np.atleast_2d(qddot) - qddot_star
    terms = (eps**2 * (qt**2).sum(axis=1) + (qt1**2).sum(axis=1) + (qt2**2).sum(axis=1)
             + np.asarray(Y_h3) ** 2 + np.asarray(Yt_h2) ** 2)
    return np.maximum.accumulate(terms)


@dataclass
class CoupledResidual:
    """Residuals of the two coupled equations at the middle sample."""

    field_residual: float
    moduli_residual: float
    t: float
    field_moduli_part: float = 0.0


def coupled_residual(decs: list[ModulationDecomposition], dt: float) -> list[CoupledResidual]:
    """Finite-difference residuals of the coupled system.

    For every interior sample of ``decs`` (equally spaced by ``dt`` in fast
    time), ``Y_tt`` is a second difference of ``Y`` and ``qddot`` a centred
    difference of ``qdot`` in slow time.  Reports
    ``||Y_tt + L Y - k - eps j'||_0`` and
    ``|qddot + G(qdot, qdot) - eps h - eps^2 gamma^{-1} <Y, psi_..> qddot|``,
    plus ``max_mu |<field residual, psi_mu>|`` as ``field_moduli_part``.

    When ``eps == 0`` the samples are taken to be spaced by ``dt`` in slow
    time, which turns the moduli residual into a plain geodesic-equation
    check.  (The field residual then reduces to ``||k||``, which is not zero
    along a moving geodesic; only its moduli part vanishes.)
    """
    if len(decs) < 3:
        raise ValueError("coupled_residual needs at least 3 samples")
    out = []
    for i in range(1, len(decs) - 1):
        prev, cur, nxt = decs[i - 1], decs[i], decs[i + 1]
        eps = cur.eps
        md = cur.data
        lat = md.lattice
        Y_tt = (nxt.Y - 2 * cur.Y + prev.Y) / dt**2
        qddot = (nxt.qdot - prev.qdot) / (2 * (eps * dt if eps else dt))
        ctx = _context(md.psi, lat)
        k = compute_k(cur.q, cur.qdot, qddot, lat, data=md)
        jp = compute_jprime(eps, md.psi, _psi_tau(md, cur.qdot), cur.Y, cur.Y_t, lat)
        r_field = Y_tt + apply_L(ctx, cur.Y) - k - eps * jp
        field_res = float(np.sqrt(integrate(dot(r_field, r_field), lat)))
        if np.any(cur.qdot):
            pvv = np.tensordot(cur.qdot, directional_hessian(cur.q, cur.qdot, lat), axes=1)
            geo = md.metric.gamma_inv @ md.inner(pvv, md.dpsi)
        else:
            geo = np.zeros_like(cur.qdot)
        h = compute_h(eps, cur.q, cur.qdot, cur.Y, cur.Y_t, md)
        coupling = eps**2 * md.metric.gamma_inv @ md.inner(cur.Y, md.hess) @ qddot
        r_mod = qddot + geo - eps * h - coupling
        field_mod = float(np.abs(md.inner(r_field, md.dpsi)).max())
        out.append(CoupledResidual(field_res, float(np.abs(r_mod).max()), cur.t, field_mod))
    return out


def sobolev_pair(dec: ModulationDecomposition) -> tuple[float, float]:
    """``(||Y||_3, ||Y_t||_2)``."""
    return sobolev_norm(dec.Y, dec.lattice, 3), sobolev_norm(dec.Y_t, dec.lattice, 2)
