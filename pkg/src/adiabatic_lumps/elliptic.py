"""Weierstrass functions and the elliptic-function chart on the space of n-lumps.

A degree-n holomorphic map T^2 -> S^2 is written, in the stereographic chart
from p = (0, 0, 1), as

    w(z) = lam * prod_i sigma(z - a_i) / prod_j sigma(z - b_j),

with ``sum a_i = sum b_j``.  The real coordinates are
``q = (Re lam, Im lam, Re a_1, Im a_1, ..., Re b_{n-1}, Im b_{n-1})`` and
``b_n`` is always derived from the sum rule.

Maps are evaluated through the homogeneous pair ``N = lam prod sigma(z-a_i)``,
``D = prod sigma(z-b_j)``:

    psi = (2 Re(N conj D), 2 Im(N conj D), |N|^2 - |D|^2) / (|N|^2 + |D|^2),

so zeros and poles of ``w`` need no special handling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .torus import LatticeSpec

__all__ = [
    "ModuliPoint",
    "sigma",
    "sigma_prime",
    "zeta_w",
    "sigma_product",
    "stereographic",
    "inverse_stereographic",
    "admissible",
    "eval_map",
    "eval_map_at",
    "d_moduli",
    "moduli_frame",
    "d2_moduli",
    "moduli_hessian",
    "directional_hessian",
    "directional_third",
    "InadmissibleError",
    "H_Q",
]

# step for finite-difference second moduli derivatives
H_Q = 1e-5


class InadmissibleError(ValueError):
    """Moduli point outside the admissible chart region."""


# ---------------------------------------------------------------------------
# Weierstrass sigma and zeta via theta_1
# ---------------------------------------------------------------------------


def _reduced_basis(w1: complex, w2: complex) -> tuple[complex, complex]:
    """Lagrange-Gauss reduction: |Re(w2/w1)| <= 1/2, |w2| >= |w1|, Im(w2/w1) > 0."""
    for _ in range(100):
        if abs(w2) < abs(w1):
            w1, w2 = w2, -w1
        m = round((w2 / w1).real)
        if m == 0:
            break
        w2 = w2 - m * w1
    if (w2 / w1).imag < 0:
        w2 = -w2
    return w1, w2


class _Theta:
    """Theta-function data for sigma on a fixed lattice (reduced basis)."""

    def __init__(self, omega1: complex, omega2: complex):
        w1, w2 = _reduced_basis(complex(omega1), complex(omega2))
        self.w1, self.w2 = w1, w2
        tau = w2 / w1
        self.nome = np.exp(1j * np.pi * tau)
        # truncation: |q|^{(n+1/2)^2} e^{(2n+1)|Im v|} <= exp(-pi Im tau (n^2 - 1/4))
        nterms = int(np.ceil(np.sqrt(40.0 / (np.pi * tau.imag) + 0.25))) + 2
        nn = np.arange(nterms)
        self.odd = 2 * nn + 1
        self.coef = 2 * (-1.0) ** nn * self.nome ** ((nn + 0.5) ** 2)
        theta1p0 = np.sum(self.coef * self.odd)
        theta1ppp0 = -np.sum(self.coef * self.odd**3)
        half = w1 / 2
        # eta1 = zeta(w1/2)
        self.eta1 = -(np.pi**2) * theta1ppp0 / (12 * half * theta1p0)
        # Legendre relation eta1 w2 - eta2 w1 = 2 pi i, full-period quasi-periods
        self.big_eta1 = 2 * self.eta1
        self.big_eta2 = (self.big_eta1 * w2 - 2j * np.pi) / w1
        self.prefactor = (w1 / np.pi) / theta1p0
        inv = np.linalg.inv(np.array([[w1.real, w2.real], [w1.imag, w2.imag]]))
        self._inv = inv

    def _split(self, z):
        z = np.asarray(z, dtype=complex)
        s = self._inv[0, 0] * z.real + self._inv[0, 1] * z.imag
        t = self._inv[1, 0] * z.real + self._inv[1, 1] * z.imag
        m, n = np.round(s), np.round(t)
        w = m * self.w1 + n * self.w2
        return z - w, m, n, w

    def _theta(self, v):
        # e^{i(2k+1)v} by recurrence; |Im v| is bounded after reduction
        e1 = np.exp(1j * v)
        e2 = e1 * e1
        f1 = 1.0 / e1
        f2 = f1 * f1
        p, m = e1, f1
        th = np.zeros_like(e1)
        thp = np.zeros_like(e1)
        for c, k in zip(self.coef, self.odd):
            th += c * (p - m)
            thp += (c * k) * (p + m)
            p = p * e2
            m = m * f2
        return th / 2j, thp / 2

    def sigma_parts(self, z, derivative: bool):
        z0, m, n, w = self._split(z)
        v = np.pi * z0 / self.w1
        th, thp = self._theta(v)
        c = self.eta1 / self.w1  # exp(eta1 z^2 / (2 * half)) with half = w1/2
        g = np.exp(c * z0**2)
        s0 = self.prefactor * g * th
        sign = np.where((m + n + m * n) % 2 == 0, 1.0, -1.0)
        eta_w = m * self.big_eta1 + n * self.big_eta2
        shift = sign * np.exp(eta_w * (z0 + w / 2))
        if not derivative:
            return shift * s0, None
        # d/dz0 [g th(v)] = g (2 c z0 th + (pi/w1) th')
        ds0 = self.prefactor * g * (2 * c * z0 * th + (np.pi / self.w1) * thp)
        # sigma(z0 + w) = shift(z0) sigma(z0), d shift / d z0 = eta_w shift
        return shift * s0, shift * (ds0 + eta_w * s0)

    def zeta(self, z):
        z0, m, n, w = self._split(z)
        v = np.pi * z0 / self.w1
        th, thp = self._theta(v)
        c = self.eta1 / self.w1
        return 2 * c * z0 + (np.pi / self.w1) * thp / th + m * self.big_eta1 + n * self.big_eta2


@lru_cache(maxsize=32)
def _theta_for(omega1: complex, omega2: complex) -> _Theta:
    return _Theta(omega1, omega2)


def _theta_of(lattice: LatticeSpec) -> _Theta:
    return _theta_for(lattice.omega1, lattice.omega2)


def sigma(z, lattice: LatticeSpec):
    """Weierstrass sigma function of the period lattice of ``lattice``."""
    out, _ = _theta_of(lattice).sigma_parts(z, derivative=False)
    return out[()] if np.ndim(out) == 0 else out


def sigma_prime(z, lattice: LatticeSpec):
    """Return ``(sigma(z), sigma'(z))``."""
    s, ds = _theta_of(lattice).sigma_parts(z, derivative=True)
    if np.ndim(s) == 0:
        return s[()], ds[()]
    return s, ds


def zeta_w(z, lattice: LatticeSpec):
    """Weierstrass zeta function ``sigma'/sigma``; raises at lattice points."""
    z = np.asarray(z, dtype=complex)
    scale = min(abs(lattice.omega1), abs(lattice.omega2))
    if np.any(np.abs(lattice.reduce(z)) < 1e-10 * scale):
        raise ZeroDivisionError("zeta_w has a pole at every lattice point")
    out = _theta_of(lattice).zeta(z)
    return out[()] if np.ndim(out) == 0 else out


def sigma_product(z, lattice: LatticeSpec, radius: float = 60.0):
    """Reference value of sigma from the Weierstrass product over ``|w| <= radius``.

    Slow and only accurate to roughly ``|z|^3 / radius``; meant as an
    independent check of :func:`sigma`.
    """
    z = np.asarray(z, dtype=complex)
    w1, w2 = lattice.omega1, lattice.omega2
    m = int(np.ceil(radius / min(abs(w1), abs(w2)) * 2)) + 2
    i, j = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    w = (i * w1 + j * w2).ravel()
    w = w[(np.abs(w) <= radius) & (w != 0)]
    u = z[..., None] / w
    log_terms = np.log1p(-u) + u + 0.5 * u**2
    out = z * np.exp(log_terms.sum(axis=-1))
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# stereographic chart
# ---------------------------------------------------------------------------


def stereographic(x) -> complex | np.ndarray:
    """Projection from p = (0, 0, 1): ``(x1 + i x2) / (1 - x3)``."""
    x = np.asarray(x, dtype=float)
    den = 1.0 - x[..., 2]
    if np.any(den <= 0):
        raise ValueError("stereographic projection is undefined at the pole (0, 0, 1)")
    out = (x[..., 0] + 1j * x[..., 1]) / den
    return out[()] if np.ndim(out) == 0 else out


def inverse_stereographic(w) -> np.ndarray:
    """``(2 Re w, 2 Im w, |w|^2 - 1) / (1 + |w|^2)``, last axis of length 3."""
    w = np.asarray(w, dtype=complex)
    r2 = np.abs(w) ** 2
    return np.stack([2 * w.real, 2 * w.imag, r2 - 1], axis=-1) / (1 + r2)[..., None]


# ---------------------------------------------------------------------------
# moduli points
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModuliPoint:
    """A point of the chart ``q -> psi(q)`` on the degree-n moduli space.

    ``q`` packs real and imaginary parts of ``lam, a_1..a_n, b_1..b_{n-1}``.
    ``lattice`` fixes the torus; its ``grid_n`` is the default evaluation grid.
    """

    n: int
    q: np.ndarray
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    delta_sep: float | None = None

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        if self.n < 2:
            raise ValueError("degree n must be at least 2")
        if q.size != 4 * self.n:
            raise ValueError(f"q must have length 4n = {4 * self.n}, got {q.size}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_complex(cls, lam, a, b, lattice: LatticeSpec | None = None,
                     delta_sep: float | None = None) -> "ModuliPoint":
        """Build from ``lam``, all ``n`` zeros ``a`` and ``n-1`` (or ``n``) poles ``b``.

        If ``n`` poles are given the last one must satisfy the sum rule up to
        the lattice; it is then dropped and recomputed.
        """
        lattice = lattice or LatticeSpec()
        a = np.atleast_1d(np.asarray(a, dtype=complex))
        b = np.atleast_1d(np.asarray(b, dtype=complex))
        n = a.size
        if b.size == n:
            bn = a.sum() - b[:-1].sum()
            if lattice.torus_distance(bn, b[-1]) > 1e-9:
                raise ValueError("zeros and poles violate sum(a) = sum(b) mod lattice")
            b = b[:-1]
        if b.size != n - 1:
            raise ValueError("need n-1 free poles")
        parts = [complex(lam)] + list(a) + list(b)
        q = np.array([[c.real, c.imag] for c in parts]).reshape(-1)
        return cls(n, q, lattice, delta_sep)

    def with_q(self, q) -> "ModuliPoint":
        return ModuliPoint(self.n, q, self.lattice, self.delta_sep)

    @property
    def dim(self) -> int:
        return 4 * self.n

    @property
    def _c(self) -> np.ndarray:
        return self.q[0::2] + 1j * self.q[1::2]

    @property
    def lam(self) -> complex:
        return complex(self._c[0])

    @property
    def a(self) -> np.ndarray:
        return self._c[1 : self.n + 1]

    @property
    def b(self) -> np.ndarray:
        """All n poles, ``b_n`` included."""
        free = self._c[self.n + 1 :]
        return np.append(free, self.a.sum() - free.sum())

    @property
    def separation(self) -> float:
        if self.delta_sep is not None:
            return float(self.delta_sep)
        return 0.05 * min(abs(self.lattice.omega1), abs(self.lattice.omega2))

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        lat = self.lattice
        return {
            "n": self.n,
            "lattice": {"omega1": [lat.omega1.real, lat.omega1.imag],
                        "omega2": [lat.omega2.real, lat.omega2.imag]},
            "lambda": [self.lam.real, self.lam.imag],
            "a": [[c.real, c.imag] for c in self.a],
            "b": [[c.real, c.imag] for c in self.b[:-1]],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, grid_n: int = 64, delta_sep: float | None = None) -> "ModuliPoint":
        def cx(v):
            if isinstance(v, (int, float)):
                return complex(v)
            return complex(v[0], v[1])

        lat = d.get("lattice", {})
        lattice = LatticeSpec(cx(lat.get("omega1", 1.0)), cx(lat.get("omega2", [0.0, 1.0])), grid_n)
        a = [cx(v) for v in d["a"]]
        b = [cx(v) for v in d["b"]]
        if len(a) != int(d["n"]) or len(b) != int(d["n"]) - 1:
            raise ValueError("serialized ModuliPoint needs n zeros and n-1 poles")
        return cls.from_complex(cx(d["lambda"]), a, b, lattice, delta_sep)

    @classmethod
    def from_json(cls, text: str, grid_n: int = 64) -> "ModuliPoint":
        return cls.from_dict(json.loads(text), grid_n)


def admissible(q: ModuliPoint) -> tuple[bool, dict]:
    """Check the chart invariants with margin ``q.separation``.

    Returns ``(ok, diagnostics)``; diagnostics hold the minimum zero-pole,
    zero-zero and pole-pole distances on the torus and ``|lam|``.
    """
    lat = q.lattice
    a, b = q.a, q.b
    ab = lat.torus_distance(a[:, None], b[None, :]).min()

    def pairwise_min(c):
        iu = np.triu_indices(len(c), 1)
        return float(lat.torus_distance(c[:, None], c[None, :])[iu].min())

    diag = {
        "min_ab_separation": float(ab),
        "min_aa_separation": pairwise_min(a),
        "min_bb_separation": pairwise_min(b),
        "abs_lambda": abs(q.lam),
        "delta_sep": q.separation,
        "finite": bool(np.all(np.isfinite(q.q))),
    }
    ok = (
        diag["finite"]
        and diag["abs_lambda"] > 1e-12
        and min(diag["min_ab_separation"], diag["min_aa_separation"],
                diag["min_bb_separation"]) >= q.separation
    )
    diag["admissible"] = bool(ok)
    return bool(ok), diag


def _require(q: ModuliPoint):
    ok, diag = admissible(q)
    if not ok:
        raise InadmissibleError(f"inadmissible moduli point: {diag}")


def _grid(q: ModuliPoint, lattice: LatticeSpec | None) -> LatticeSpec:
    if lattice is None:
        return q.lattice
    if not lattice.same_torus(q.lattice):
        raise ValueError("evaluation grid and moduli point live on different tori")
    return lattice


def _pair_to_sphere(N, D):
    # rescale so that |N|^2 + |D|^2 neither over- nor underflows
    scale = np.maximum(np.abs(N), np.abs(D))
    N, D = N / scale, D / scale
    W = N * np.conj(D)
    S = np.abs(N) ** 2 + np.abs(D) ** 2
    return np.stack([2 * W.real, 2 * W.imag, np.abs(N) ** 2 - np.abs(D) ** 2]) / S, N, D, S


def _factors(q: ModuliPoint, z):
    lat = q.lattice
    sa, dsa = sigma_prime(z[None] - q.a.reshape((-1,) + (1,) * z.ndim), lat)
    sb, dsb = sigma_prime(z[None] - q.b.reshape((-1,) + (1,) * z.ndim), lat)
    return sa, dsa, sb, dsb


def _prod_except(vals):
    """``out[i] = prod_{k != i} vals[k]`` without division."""
    n = vals.shape[0]
    out = np.empty_like(vals)
    for i in range(n):
        out[i] = np.prod(np.delete(vals, i, axis=0), axis=0)
    return out


def eval_map_at(q: ModuliPoint, z) -> np.ndarray:
    """``psi(q, z)`` at arbitrary complex points; result shape ``(3,) + z.shape``."""
    z = np.asarray(z, dtype=complex)
    sa, _, sb, _ = _factors(q, z)
    N = q.lam * np.prod(sa, axis=0)
    D = np.prod(sb, axis=0)
    psi, *_ = _pair_to_sphere(N, D)
    return psi


def eval_map(q: ModuliPoint, lattice: LatticeSpec | None = None) -> np.ndarray:
    """``psi(q, .)`` on the grid as a unit vector field of shape ``(3, N, N)``."""
    _require(q)
    return eval_map_at(q, _grid(q, lattice).points)


def _holomorphic_derivs(q: ModuliPoint, z):
    """N, D and their derivatives with respect to the complex coordinates.

    Returns ``N, D, dN, dD`` with ``dN[c], dD[c]`` the derivatives with respect
    to the c-th complex coordinate (lam, a_1..a_n, b_1..b_{n-1}).
    """
    n = q.n
    sa, dsa, sb, dsb = _factors(q, z)
    pa = np.prod(sa, axis=0)
    pb = np.prod(sb, axis=0)
    N = q.lam * pa
    D = pb
    ea = _prod_except(sa)
    eb = _prod_except(sb)
    dN = np.zeros((2 * n,) + z.shape, dtype=complex)
    dD = np.zeros_like(dN)
    dN[0] = pa
    # d b_n / d a_i = +1, d b_n / d b_j = -1
    dD_dbn = -dsb[n - 1] * eb[n - 1]
    for i in range(n):
        dN[1 + i] = -q.lam * dsa[i] * ea[i]
        dD[1 + i] = dD_dbn
    for j in range(n - 1):
        dD[n + 1 + j] = -dsb[j] * eb[j] - dD_dbn
    return N, D, dN, dD


def _sphere_derivs(q: ModuliPoint, z):
    N, D, dN, dD = _holomorphic_derivs(q, z)
    scale = np.maximum(np.abs(N), np.abs(D))
    N, D, dN, dD = N / scale, D / scale, dN / scale, dD / scale
    S = np.abs(N) ** 2 + np.abs(D) ** 2
    W = N * np.conj(D)
    num = np.stack([2 * W.real, 2 * W.imag, np.abs(N) ** 2 - np.abs(D) ** 2])
    psi = num / S
    out = np.empty((q.dim, 3) + z.shape)
    for c in range(2 * q.n):
        # real direction then imaginary direction (multiply holomorphic derivative by i)
        for r, unit in enumerate((1.0, 1j)):
            dn = unit * dN[c]
            dd = unit * dD[c]
            dW = dn * np.conj(D) + N * np.conj(dd)
            dNN = 2 * (np.conj(N) * dn).real
            dDD = 2 * (np.conj(D) * dd).real
            dnum = np.stack([2 * dW.real, 2 * dW.imag, dNN - dDD])
            dS = dNN + dDD
            out[2 * c + r] = (dnum - psi * dS) / S
    return psi, out


def moduli_frame(q: ModuliPoint, lattice: LatticeSpec | None = None):
    """``(psi, dpsi)`` with ``dpsi[mu] = d psi / d q^mu`` on the grid."""
    _require(q)
    return _sphere_derivs(q, _grid(q, lattice).points)


def d_moduli(q: ModuliPoint, mu: int, lattice: LatticeSpec | None = None) -> np.ndarray:
    """Analytic ``psi_mu``, a tangent section along ``psi(q)``."""
    if not 0 <= mu < q.dim:
        raise IndexError(f"moduli index {mu} out of range for dim {q.dim}")
    return moduli_frame(q, lattice)[1][mu]


def moduli_hessian(q: ModuliPoint, lattice: LatticeSpec | None = None, h: float = H_Q):
    """All ``psi_{mu nu}`` by centred differences of the analytic ``psi_mu``.

    Returns an array of shape ``(4n, 4n, 3, N, N)``, symmetrized in
    ``(mu, nu)``.
    """
    grid = _grid(q, lattice)
    _require(q)
    dim = q.dim
    raw = np.empty((dim, dim, 3, grid.grid_n, grid.grid_n))
    for nu in range(dim):
        e = np.zeros(dim)
        e[nu] = h
        _, plus = _sphere_derivs(q.with_q(q.q + e), grid.points)
        _, minus = _sphere_derivs(q.with_q(q.q - e), grid.points)
        raw[:, nu] = (plus - minus) / (2 * h)
    return 0.5 * (raw + raw.transpose(1, 0, 2, 3, 4))


def d2_moduli(q: ModuliPoint, mu: int, nu: int, lattice: LatticeSpec | None = None,
              h: float = H_Q) -> np.ndarray:
    """Single symmetrized second derivative ``psi_{mu nu}``."""
    grid = _grid(q, lattice)
    _require(q)

    def column(j):
        e = np.zeros(q.dim)
        e[j] = h
        _, plus = _sphere_derivs(q.with_q(q.q + e), grid.points)
        _, minus = _sphere_derivs(q.with_q(q.q - e), grid.points)
        return (plus - minus) / (2 * h)

    a = column(nu)[mu]
    b = a if mu == nu else column(mu)[nu]
    return 0.5 * (a + b)


def directional_hessian(q: ModuliPoint, v, lattice: LatticeSpec | None = None,
                        h: float = H_Q) -> np.ndarray:
    """``psi_{mu nu} v^nu`` for every mu, shape ``(4n, 3, N, N)``."""
    grid = _grid(q, lattice)
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros((q.dim, 3, grid.grid_n, grid.grid_n))
    step = h / norm
    _, plus = _sphere_derivs(q.with_q(q.q + step * v), grid.points)
    _, minus = _sphere_derivs(q.with_q(q.q - step * v), grid.points)
    return (plus - minus) / (2 * step)


def directional_third(q: ModuliPoint, v, lattice: LatticeSpec | None = None,
                      h: float = 1e-3) -> np.ndarray:
    """``psi_{mu nu lam} v^nu v^lam`` for every mu by a second difference of ``psi_mu``."""
    grid = _grid(q, lattice)
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros((q.dim, 3, grid.grid_n, grid.grid_n))
    step = h / norm
    _, plus = _sphere_derivs(q.with_q(q.q + step * v), grid.points)
    _, mid = _sphere_derivs(q, grid.points)
    _, minus = _sphere_derivs(q.with_q(q.q - step * v), grid.points)
    return (plus - 2 * mid + minus) / step**2
