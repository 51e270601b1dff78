"""Wave maps from R x T^2 into the unit sphere.

The field is stored extrinsically as a unit vector ``phi`` with velocity
``phi_t`` tangent to the sphere.  The equation
``phi_tt - Lap phi + (|phi_t|^2 - |grad phi|^2) phi = 0`` is the motion of a
particle on the product of spheres under the potential ``E = 1/2 <phi, -Lap phi>``,
and it is integrated with the constrained velocity Verlet scheme (RATTLE):

1. ``w = v + dt/2 Lap phi``
2. ``phi' = s phi + dt w`` with the scalar field ``s`` fixed by ``|phi'| = 1``
3. ``v' = P(phi') [w + (s - 1)/dt phi + dt/2 Lap phi']``

where ``P(phi')`` removes the component along ``phi'``.  The map is
symplectic and time reversible and second-order accurate, so the total
energy has no secular drift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import InadmissibleError, ModuliPoint, admissible, moduli_frame
from .torus import LatticeSpec, _check, dot, gradient, integrate, laplacian

__all__ = [
    "WaveState",
    "WaveTrajectory",
    "BlowUpError",
    "CFLError",
    "initial_data",
    "step",
    "evolve",
    "energies",
    "degree",
    "degree_raw",
    "DEFAULT_CFL",
]

DEFAULT_CFL = 0.25


class BlowUpError(FloatingPointError):
    """Non-finite values appeared in the field."""


class CFLError(ValueError):
    """Time step exceeds ``cfl * h_min``."""


@dataclass(frozen=True, eq=False)
class WaveState:
    phi: np.ndarray
    phi_t: np.ndarray
    lattice: LatticeSpec
    t: float = 0.0
    eps: float = 0.0

    def __post_init__(self):
        _check(self.phi, self.lattice)
        _check(self.phi_t, self.lattice)
        if self.phi.shape != self.phi_t.shape or self.phi.shape[0] != 3:
            raise ValueError("phi and phi_t must both have shape (3, N, N)")

    @property
    def unit_norm_defect(self) -> float:
        return float(np.abs(np.sqrt((self.phi**2).sum(axis=0)) - 1).max())

    @property
    def tangency_defect(self) -> float:
        return float(np.abs(dot(self.phi, self.phi_t)).max())


def initial_data(q0: ModuliPoint, q1, eps: float, lattice: LatticeSpec | None = None) -> WaveState:
    """``phi = psi(q0)``, ``phi_t = eps q1^mu psi_mu(q0)``."""
    ok, diag = admissible(q0)
    if not ok:
        raise InadmissibleError(f"inadmissible moduli point: {diag}")
    lat = q0.lattice if lattice is None else lattice
    q1 = np.asarray(q1, dtype=float)
    if q1.shape != (q0.dim,):
        raise ValueError(f"q1 must have length {q0.dim}")
    psi, dpsi = moduli_frame(q0, lat)
    phi_t = eps * np.tensordot(q1, dpsi, axes=1)
    return WaveState(psi, phi_t, lat, 0.0, float(eps))


def _check_cfl(lattice: LatticeSpec, dt: float, cfl: float) -> None:
    if not dt > 0:
        raise CFLError(f"time step must be positive, got {dt}")
    if dt > cfl * lattice.h_min * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.3e} exceeds cfl * h_min = {cfl * lattice.h_min:.3e}")


def _rattle(phi, v, lap, dt, lattice):
    w = v + 0.5 * dt * lap
    pw = dot(phi, w)
    disc = (dt * pw) ** 2 + 1 - dt**2 * dot(w, w)
    if np.any(~(disc > 0)):
        raise BlowUpError("constraint solve failed (time step too large or field not finite)")
    s = -dt * pw + np.sqrt(disc)
    phi_new = s * phi + dt * w
    lap_new = laplacian(phi_new, lattice)
    v_new = w + (s - 1) / dt * phi + 0.5 * dt * lap_new
    v_new = v_new - dot(phi_new, v_new) * phi_new
    if not (np.all(np.isfinite(phi_new)) and np.all(np.isfinite(v_new))):
        raise BlowUpError("non-finite field values")
    return phi_new, v_new, lap_new


def step(s: WaveState, dt: float, cfl: float = DEFAULT_CFL) -> WaveState:
    """Advance one RATTLE step of size ``dt``."""
    _check_cfl(s.lattice, dt, cfl)
    lap = laplacian(s.phi, s.lattice)
    phi, v, _ = _rattle(s.phi, s.phi_t, lap, dt, s.lattice)
    return WaveState(phi, v, s.lattice, s.t + dt, s.eps)


def energies(s: WaveState) -> tuple[float, float, float]:
    """Kinetic ``T = 1/2 int |phi_t|^2``, potential ``E = 1/2 int |grad phi|^2`` and their sum.

    ``E`` is evaluated as ``1/2 <phi, -Lap phi>``, the potential whose
    gradient drives the time stepper.
    """
    T = 0.5 * integrate((s.phi_t**2).sum(axis=0), s.lattice)
    E = -0.5 * integrate((s.phi * laplacian(s.phi, s.lattice)).sum(axis=0), s.lattice)
    return T, E, T + E


def degree_raw(phi: np.ndarray, lattice: LatticeSpec) -> float:
    """Oriented pullback area ``-(1/4 pi) int phi . (phi_x x phi_y)``.

    The sign is chosen so that holomorphic maps in the chart used by
    :mod:`adiabatic_lumps.elliptic` have positive degree.
    """
    px, py = gradient(phi, lattice)
    return -integrate(dot(phi, np.cross(px, py, axis=0)), lattice) / (4 * math.pi)


def degree(phi: np.ndarray, lattice: LatticeSpec) -> tuple[int | None, float, float]:
    """``(degree, raw, distance)``; degree is None if ``raw`` is more than 0.1 from an integer."""
    raw = degree_raw(phi, lattice)
    k = round(raw)
    dist = abs(raw - k)
    return (int(k) if dist <= 0.1 else None), raw, dist


MONITOR_COLUMNS = ("t", "T", "E", "total", "degree_raw", "unitnorm_defect")


@dataclass
class WaveTrajectory:
    """Samples and monitors of a wave-map run.

    ``status`` is ``ok`` or ``blowup``; ``monitors`` has one row per sample
    with the columns of :data:`MONITOR_COLUMNS` plus ``tangency_defect``.
    """

    times: np.ndarray
    monitors: np.ndarray
    states: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def total_energy(self) -> np.ndarray:
        return self.monitors[:, 3]

    @property
    def energy_drift(self) -> float:
        tot = self.total_energy
        return float(np.abs(tot - tot[0]).max() / abs(tot[0]))

    @property
    def degrees(self) -> np.ndarray:
        return np.rint(self.monitors[:, 4]).astype(int)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MONITOR_COLUMNS)
            for row in self.monitors:
                w.writerow([repr(float(x)) for x in row[: len(MONITOR_COLUMNS)]])


def _monitor_row(s: WaveState) -> list[float]:
    T, E, tot = energies(s)
    return [s.t, T, E, tot, degree_raw(s.phi, s.lattice), s.unit_norm_defect, s.tangency_defect]


def evolve(s0: WaveState, t_end: float, dt: float, sample_every: int = 1,
           cfl: float = DEFAULT_CFL, store: bool = True, callback=None,
           spike: float = 0.1) -> WaveTrajectory:
    """Integrate from ``s0.t`` to ``t_end`` with fixed step ``dt``.

    Parameters
    ----------
    t_end : float
        Final time; ``t_end - s0.t`` must be a multiple of ``dt``.
    sample_every : int
        Record monitors (and states, if ``store``) every this many steps.
    callback : callable, optional
        Called with each sampled :class:`WaveState`.
    spike : float
        Relative jump in total energy that aborts the run as a blow-up.
    """
    _check_cfl(s0.lattice, dt, cfl)
    nsteps = int(round((t_end - s0.t) / dt))
    if nsteps < 0 or abs(nsteps * dt - (t_end - s0.t)) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("t_end - t0 must be a non-negative multiple of dt")
    lat = s0.lattice
    phi, v = s0.phi, s0.phi_t
    lap = laplacian(phi, lat)
    rows, states = [], []
    status, message = "ok", ""

    def sample(st):
        rows.append(_monitor_row(st))
        if store:
            states.append(st)
        if callback is not None:
            callback(st)

    sample(s0)
    e0 = rows[0][3]
    for k in range(1, nsteps + 1):
        try:
            phi, v, lap = _rattle(phi, v, lap, dt, lat)
        except BlowUpError as exc:
            status, message = "blowup", f"step {k}: {exc}"
            break
        if k % sample_every == 0 or k == nsteps:
            st = WaveState(phi, v, lat, s0.t + k * dt, s0.eps)
            sample(st)
            if abs(rows[-1][3] - e0) > spike * abs(e0):
                status, message = "blowup", f"energy spike at t = {st.t:.6g}"
                break
    return WaveTrajectory(np.array([r[0] for r in rows]), np.array(rows), states, status, message)
