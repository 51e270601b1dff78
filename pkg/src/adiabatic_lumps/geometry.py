"""L^2 metric, Christoffel symbols and geodesic flow on the moduli space."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .elliptic import (
    InadmissibleError,
    ModuliPoint,
    admissible,
    directional_hessian,
    moduli_frame,
    moduli_hessian,
)
from .torus import LatticeSpec

__all__ = [
    "MetricData",
    "SingularMetricError",
    "GeodesicState",
    "GeodesicTrajectory",
    "metric",
    "metric_from_frame",
    "christoffel",
    "levi_civita_fd",
    "geodesic_rhs",
    "geodesic_integrate",
    "DEFAULT_METRIC_GRID",
]

DEFAULT_METRIC_GRID = 64


class SingularMetricError(np.linalg.LinAlgError):
    """The L^2 metric is not positive definite (chart degeneracy)."""


@dataclass(frozen=True, eq=False)
class MetricData:
    gamma: np.ndarray
    gamma_inv: np.ndarray
    at: ModuliPoint
    min_eigenvalue: float


def _metric_grid(q: ModuliPoint, lattice: LatticeSpec | None) -> LatticeSpec:
    if lattice is not None:
        return lattice
    return q.lattice.with_grid(DEFAULT_METRIC_GRID)


def metric_from_frame(dpsi: np.ndarray, lattice: LatticeSpec, at: ModuliPoint) -> MetricData:
    """Gram matrix of the tangent frame ``dpsi`` (shape ``(4n, 3, N, N)``)."""
    flat = dpsi.reshape(dpsi.shape[0], -1)
    gamma = lattice.cell_area * flat @ flat.T
    gamma = 0.5 * (gamma + gamma.T)
    evals, evecs = np.linalg.eigh(gamma)
    if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
        raise SingularMetricError(f"metric is singular at q, eigenvalues {evals}")
    gamma_inv = (evecs / evals) @ evecs.T
    return MetricData(gamma, 0.5 * (gamma_inv + gamma_inv.T), at, float(evals[0]))


def metric(q: ModuliPoint, lattice: LatticeSpec | None = None) -> MetricData:
    """``gamma_{mu nu} = <psi_mu, psi_nu>`` by grid quadrature."""
    grid = _metric_grid(q, lattice)
    _, dpsi = moduli_frame(q, grid)
    return metric_from_frame(dpsi, grid, q)


def christoffel(q: ModuliPoint, lattice: LatticeSpec | None = None) -> np.ndarray:
    """``G[mu, lam, nu] = gamma^{mu alpha} <psi_alpha, psi_{lam nu}>``."""
    grid = _metric_grid(q, lattice)
    _, dpsi = moduli_frame(q, grid)
    md = metric_from_frame(dpsi, grid, q)
    hess = moduli_hessian(q, grid)
    dim = q.dim
    lower = grid.cell_area * np.einsum(
        "ap,lnp->aln", dpsi.reshape(dim, -1), hess.reshape(dim, dim, -1)
    )
    return np.einsum("ma,aln->mln", md.gamma_inv, lower)


def levi_civita_fd(q: ModuliPoint, lattice: LatticeSpec | None = None,
                   h: float = 1e-4) -> np.ndarray:
    """Levi-Civita symbols of :func:`metric`, differentiated by centred differences.

    ``1/2 gamma^{mu a} (d_lam gamma_{a nu} + d_nu gamma_{a lam} - d_a gamma_{lam nu})``
    with step ``h`` in each coordinate; an independent check of
    :func:`christoffel`.
    """
    grid = _metric_grid(q, lattice)
    dim = q.dim
    dg = np.empty((dim, dim, dim))  # dg[c, a, b] = d_c gamma_ab
    for c in range(dim):
        e = np.zeros(dim)
        e[c] = h
        dg[c] = (metric(q.with_q(q.q + e), grid).gamma - metric(q.with_q(q.q - e), grid).gamma) / (2 * h)
    lower = 0.5 * (np.einsum("lan->aln", dg) + np.einsum("nal->aln", dg) - dg)
    return np.einsum("ma,aln->mln", metric(q, grid).gamma_inv, lower)


@dataclass(frozen=True, eq=False)
class GeodesicState:
    q: ModuliPoint
    qdot: np.ndarray
    tau: float = 0.0


def _acceleration(q: ModuliPoint, v: np.ndarray, grid: LatticeSpec) -> tuple[np.ndarray, MetricData]:
    _, dpsi = moduli_frame(q, grid)
    md = metric_from_frame(dpsi, grid, q)
    if not np.any(v):
        return np.zeros_like(v), md
    # psi_{lam nu} v^lam v^nu from a centred difference of psi_mu along v
    hv = directional_hessian(q, v, grid)
    pvv = np.einsum("m,m...->...", v, hv)
    lower = grid.cell_area * dpsi.reshape(q.dim, -1) @ pvv.reshape(-1)
    return -md.gamma_inv @ lower, md


def geodesic_rhs(s: GeodesicState, lattice: LatticeSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(qdot, qddot)`` with ``qddot^mu = -G^mu_{nu lam} qdot^nu qdot^lam``."""
    ok, diag = admissible(s.q)
    if not ok:
        raise InadmissibleError(f"inadmissible moduli point: {diag}")
    v = np.asarray(s.qdot, dtype=float)
    acc, _ = _acceleration(s.q, v, _metric_grid(s.q, lattice))
    return v.copy(), acc


@dataclass
class GeodesicTrajectory:
    """Sampled RK4 geodesic; ``status`` is ``ok``, ``chart_exit`` or ``rejected``."""

    tau: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    speed: np.ndarray
    status: str = "ok"
    n: int = 2
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    qddot: np.ndarray | None = None

    @property
    def speed_drift(self) -> np.ndarray:
        return np.abs(self.speed - self.speed[0]) / max(self.speed[0], 1e-300)

    @property
    def max_speed_drift(self) -> float:
        return float(self.speed_drift.max()) if self.speed[0] > 0 else 0.0

    def point(self, i: int) -> ModuliPoint:
        return ModuliPoint(self.n, self.q[i], self.lattice)

    def write_csv(self, path) -> None:
        dim = self.q.shape[1]
        header = (["tau"] + [f"q_{i}" for i in range(dim)]
                  + [f"qdot_{i}" for i in range(dim)] + ["speed", "speed_drift"])
        drift = self.speed_drift if self.speed[0] > 0 else np.zeros_like(self.speed)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.tau)):
                w.writerow([repr(float(self.tau[i]))]
                           + [repr(float(x)) for x in self.q[i]]
                           + [repr(float(x)) for x in self.qdot[i]]
                           + [repr(float(self.speed[i])), repr(float(drift[i]))])


def geodesic_integrate(s0: GeodesicState, tau_end: float, dtau: float,
                       lattice: LatticeSpec | None = None, sample_every: int = 1,
                       max_drift: float = 1e-4) -> GeodesicTrajectory:
    """Classical fixed-step RK4 for the geodesic equation.

    The run stops early with status ``chart_exit`` when a stage leaves the
    admissible region, and is marked ``rejected`` when the relative speed
    drift exceeds ``max_drift``.
    """
    if dtau <= 0:
        raise ValueError("dtau must be positive")
    grid = _metric_grid(s0.q, lattice)
    q0 = s0.q
    ok, _ = admissible(q0)
    if not ok:
        raise ValueError("initial moduli point is not admissible")
    nsteps = int(round((tau_end - s0.tau) / dtau))
    if nsteps < 0 or abs(nsteps * dtau - (tau_end - s0.tau)) > 1e-9 * max(1.0, abs(tau_end)):
        raise ValueError("tau_end - tau0 must be a non-negative multiple of dtau")

    def f(x, v):
        p = q0.with_q(x)
        if not admissible(p)[0]:
            raise _ChartExit
        acc, md = _acceleration(p, v, grid)
        return acc, md

    x = q0.q.copy()
    v = np.asarray(s0.qdot, dtype=float).copy()
    taus, qs, vs, speeds, accs = [], [], [], [], []
    status = "ok"
    try:
        a, md = f(x, v)
    except _ChartExit:
        raise ValueError("initial moduli point is not admissible")

    def record(k, x, v, a, md):
        taus.append(s0.tau + k * dtau)
        qs.append(x.copy())
        vs.append(v.copy())
        accs.append(a.copy())
        speeds.append(float(v @ md.gamma @ v))

    record(0, x, v, a, md)
    speed0 = speeds[0]
    for k in range(1, nsteps + 1):
        try:
            k1x, k1v = v, a
            k2v, _ = f(x + 0.5 * dtau * k1x, v + 0.5 * dtau * k1v)
            k2x = v + 0.5 * dtau * k1v
            k3v, _ = f(x + 0.5 * dtau * k2x, v + 0.5 * dtau * k2v)
            k3x = v + 0.5 * dtau * k2v
            k4v, _ = f(x + dtau * k3x, v + dtau * k3v)
            k4x = v + dtau * k3v
            x = x + dtau / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            v = v + dtau / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
            a, md = f(x, v)
        except _ChartExit:
            status = "chart_exit"
            break
        if k % sample_every == 0 or k == nsteps:
            record(k, x, v, a, md)
            if speed0 > 0 and abs(speeds[-1] - speed0) / speed0 > max_drift:
                status = "rejected"
                break
    return GeodesicTrajectory(np.array(taus), np.array(qs), np.array(vs), np.array(speeds),
                              status, q0.n, q0.lattice, np.array(accs))


class _ChartExit(Exception):
    pass
