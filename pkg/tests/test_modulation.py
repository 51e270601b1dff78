import numpy as np
import pytest

from adiabatic_lumps.elliptic import eval_map
from adiabatic_lumps.geometry import GeodesicState, geodesic_integrate, geodesic_rhs, metric
from adiabatic_lumps.jacobi import OperatorContext, project_tangent
from adiabatic_lumps.modulation import (
    ModulationDecomposition,
    ProjectionError,
    chi,
    compute_h,
    compute_jprime,
    compute_k,
    compute_M_matrix,
    coupled_residual,
    decompose,
    energies_E1_E2,
    error_functional,
    moduli_data,
    modulation_qddot,
    project_to_moduli,
)
from adiabatic_lumps.torus import dot, sobolev_norm
from adiabatic_lumps.wave import initial_data

from conftest import moduli_point, smooth_field


@pytest.fixture(scope="module")
def q32():
    return moduli_point(32)


@pytest.fixture(scope="module")
def md32(q32):
    return moduli_data(q32)


def exp_map(psi, T):
    """Pointwise sphere exponential map at ``psi`` in the tangent direction ``T``."""
    r = np.sqrt(dot(T, T))
    safe = np.where(r > 0, r, 1.0)
    return np.cos(r) * psi + np.where(r > 0, np.sin(r) / safe, 1.0) * T


def orthogonal_perturbation(md, T, iterations=6):
    """A unit field ``phi`` with ``<phi - psi, psi_mu> = 0`` built from the tangent field ``T``."""
    for _ in range(iterations):
        phi = exp_map(md.psi, T)
        r = md.inner(phi - md.psi, md.dpsi)
        T = T - np.tensordot(md.metric.gamma_inv @ r, md.dpsi, axes=1)
    return exp_map(md.psi, T)


def decomposition(md, qdot, Y, Y_t, eps):
    return ModulationDecomposition(md.q, np.asarray(qdot, float), Y, Y_t, eps, {}, md, 0.0)


class TestProjection:
    def test_exact_moduli_field(self, q32):
        q, info = project_to_moduli(eval_map(q32), q32, return_info=True)
        assert np.abs(q.q - q32.q).max() < 1e-10
        assert info["iterations"] <= 1

    def test_orthogonal_perturbation(self, q32, md32, rng):
        T = 1e-2 * project_tangent(OperatorContext.from_field(md32.psi, q32.lattice, None),
                                   smooth_field(rng, q32.lattice))
        phi = orthogonal_perturbation(md32, T)
        assert np.abs(md32.inner(phi - md32.psi, md32.dpsi)).max() < 1e-14
        assert np.abs(project_to_moduli(phi, q32).q - q32.q).max() < 1e-8

    def test_basin(self, q32, md32, rng):
        T = 1e-2 * project_tangent(OperatorContext.from_field(md32.psi, q32.lattice, None),
                                   smooth_field(rng, q32.lattice))
        phi = orthogonal_perturbation(md32, T)
        ref = project_to_moduli(phi, q32).q
        for mu in (0, 3, 6):
            guess = q32.q.copy()
            guess[mu] += 1e-3
            assert np.abs(project_to_moduli(phi, q32.with_q(guess)).q - ref).max() < 1e-10

    def test_non_convergence(self, q32):
        guess = q32.q.copy()
        guess[2] += 0.05
        with pytest.raises(ProjectionError):
            project_to_moduli(eval_map(q32), q32.with_q(guess), max_iter=1)


class TestDecompose:
    def test_initial_data(self, q32, q1_default):
        s = initial_data(q32, q1_default, 0.1)
        dec = decompose(s.phi, s.phi_t, 0.1, q32)
        assert np.abs(dec.q.q - q32.q).max() < 1e-12
        assert np.abs(dec.qdot - q1_default).max() < 1e-9
        assert np.abs(dec.Y).max() < 1e-9 and np.abs(dec.Y_t).max() < 1e-8
        assert dec.residuals["ortho_max"] <= 1e-10
        assert dec.residuals["chi_c0"] < 1e-9

    def test_perturbed_field(self, q32, md32, rng):
        eps = 0.2
        ctx = OperatorContext.from_field(md32.psi, q32.lattice, None)
        phi = orthogonal_perturbation(md32, eps**2 * project_tangent(ctx, smooth_field(rng, q32.lattice)))
        phi_t = eps * project_tangent(ctx, smooth_field(rng, q32.lattice))
        dec = decompose(phi, phi_t, eps, q32)
        assert dec.residuals["ortho_max"] <= 1e-10
        assert np.abs(np.sqrt(dot(dec.data.psi + eps**2 * dec.Y, dec.data.psi + eps**2 * dec.Y)) - 1).max() < 1e-10
        # time derivative of the orthogonality condition
        lhs = dec.data.inner(dec.Y_t, dec.data.dpsi) + eps * dec.data.inner(
            dec.Y, np.tensordot(dec.data.hess, dec.qdot, axes=([1], [0])))
        assert np.abs(lhs).max() < 1e-9

    def test_needs_positive_eps(self, q32):
        with pytest.raises(ValueError):
            decompose(eval_map(q32), 0 * eval_map(q32), 0.0, q32)


class TestChi:
    def test_zero_correction(self, md32):
        dec = decomposition(md32, np.zeros(8), 0 * md32.psi, 0 * md32.psi, 0.1)
        assert not chi(dec).any()

    def test_unit_field_has_zero_chi(self, md32, rng):
        eps = 0.1
        phi = md32.psi + 0.01 * smooth_field(rng, md32.lattice)
        phi /= np.sqrt(dot(phi, phi))
        dec = decomposition(md32, np.zeros(8), (phi - md32.psi) / eps**2, 0 * phi, eps)
        assert np.abs(chi(dec)).max() < 1e-12

    def test_normal_bump(self, md32):
        eps = 0.1
        beta = 1e-3 * np.exp(np.cos(2 * np.pi * md32.lattice.points.real))
        dec = decomposition(md32, np.zeros(8), beta * md32.psi, 0 * md32.psi, eps)
        expected = beta + 0.5 * eps**2 * beta**2
        assert np.abs(chi(dec) - expected).max() < 1e-10


class TestForcing:
    def test_k_at_rest(self, q32):
        assert not compute_k(q32, np.zeros(8), np.zeros(8)).any()

    def test_k_is_orthogonal_along_geodesics(self, q32, md32, q1_default):
        v, acc = geodesic_rhs(GeodesicState(q32, q1_default))
        k = compute_k(q32, v, acc)
        scale = np.sqrt(md32.inner(k, k[None])[0])
        assert np.abs(md32.inner(k, md32.dpsi)).max() < 1e-6 * max(scale, 1.0)

    def test_k_is_quadratic_in_velocity(self, q32, q1_default):
        k1 = compute_k(q32, q1_default, np.zeros(8))
        k2 = compute_k(q32, 2 * q1_default, np.zeros(8))
        assert np.abs(k2 - 4 * k1).max() < 1e-6 * np.abs(k2).max()

    def test_jprime_limits(self, md32, q1_default, rng):
        lat = md32.lattice
        psi_tau = np.tensordot(q1_default, md32.dpsi, axes=1)
        zero = 0 * md32.psi
        assert not compute_jprime(0.1, md32.psi, psi_tau, zero, zero, lat).any()
        Y = smooth_field(rng, lat)
        Y_t = smooth_field(rng, lat)
        jp = compute_jprime(0.0, md32.psi, psi_tau, Y, Y_t, lat)
        # with this sign convention the eps -> 0 forcing is -2 (psi_tau . Y_t) psi
        assert np.abs(jp + 2 * dot(psi_tau, Y_t) * md32.psi).max() < 1e-12

    def test_h_limits(self, q32, md32, q1_default, rng):
        zero = 0 * md32.psi
        assert not compute_h(0.1, q32, q1_default, zero, zero, md32).any()
        Y_t = smooth_field(rng, md32.lattice)
        h = compute_h(0.0, q32, q1_default, zero, Y_t, md32)
        hq = np.tensordot(md32.hess, q1_default, axes=([1], [0]))
        expected = 2 * md32.metric.gamma_inv @ md32.inner(Y_t, hq)
        assert np.abs(h - expected).max() < 1e-9 * np.abs(expected).max()
        h2 = compute_h(0.0, q32, q1_default, zero, 2 * Y_t, md32)
        assert np.abs(h2 - 2 * h).max() < 1e-12 * np.abs(h).max()


class TestMMatrix:
    def test_identity_cases(self, q32, md32, rng):
        Y = smooth_field(rng, md32.lattice)
        assert np.array_equal(compute_M_matrix(0.1, q32, 0 * Y, md32), np.eye(8))
        assert np.array_equal(compute_M_matrix(0.0, q32, Y, md32), np.eye(8))

    def test_alpha_bound(self, q32, md32, rng):
        for eps in (0.2, 0.05):
            Y = smooth_field(rng, md32.lattice)
            M, info = compute_M_matrix(eps, q32, Y, md32, return_info=True)
            bound = eps**2 * info["alpha_a"] * sobolev_norm(Y, md32.lattice, 0)
            assert np.abs(M - np.eye(8)).max() <= bound
            assert info["cond"] >= 1

    def test_singular(self, q32, md32):
        Y = md32.hess[2, 3]
        K = md32.metric.gamma_inv @ md32.inner(Y, md32.hess)
        lam = np.linalg.eigvals(K)
        top = lam[np.argmax(np.abs(lam))].real
        with pytest.raises(np.linalg.LinAlgError):
            compute_M_matrix(1.0, q32, Y / top, md32)


class TestEnergies:
    def test_zero(self, md32, q1_default):
        dec = decomposition(md32, q1_default, 0 * md32.psi, 0 * md32.psi, 0.1)
        assert energies_E1_E2(dec) == (0.0, 0.0)

    def test_E1_nonnegative_on_constrained_fields(self, q32, md32, rng):
        ctx = OperatorContext.from_field(md32.psi, md32.lattice, None)
        for _ in range(5):
            Y = project_tangent(ctx, smooth_field(rng, md32.lattice))
            Y -= np.tensordot(md32.metric.gamma_inv @ md32.inner(Y, md32.dpsi), md32.dpsi, axes=1)
            dec = decomposition(md32, np.zeros(8), Y, 0 * Y, 0.05)
            E1, E2 = energies_E1_E2(dec)
            assert E1 >= 0 and E2 >= 0


@pytest.fixture(scope="module")
def geo(q32, q1_default):
    return geodesic_integrate(GeodesicState(q32, q1_default), 0.02, 0.005)


@pytest.fixture(scope="module")
def geodesic_decs(q32, q1_default):
    # unit speed keeps the O(dtau^2) error of the centred difference below 1e-6
    v = q1_default / np.sqrt(q1_default @ metric(q32).gamma @ q1_default)
    dtau = 1e-3
    geo = geodesic_integrate(GeodesicState(q32, v), 4 * dtau, dtau)
    decs = []
    for i in range(len(geo.tau)):
        md = moduli_data(geo.point(i))
        decs.append(ModulationDecomposition(md.q, geo.qdot[i], 0 * md.psi, 0 * md.psi, 0.0, {}, md,
                                            geo.tau[i]))
    return decs, dtau


class TestErrorFunctional:
    def test_identical_paths(self, geo):
        z = np.zeros(len(geo.tau))
        M = error_functional(0.1, geo.q, geo.qdot, geo.qddot, geo.q, geo.qdot, geo.qddot, z, z)
        assert not M.any()

    def test_running_max(self, geo, rng):
        m = len(geo.tau)
        noise = rng.normal(size=geo.q.shape) * 1e-3
        noise[0] = 0
        M = error_functional(0.1, geo.q + noise, geo.qdot, geo.qddot, geo.q, geo.qdot, geo.qddot,
                             rng.uniform(size=m), rng.uniform(size=m))
        assert np.all(np.diff(M) >= 0)

    def test_mismatched_initial_data(self, geo):
        z = np.zeros(len(geo.tau))
        with pytest.raises(ValueError):
            error_functional(0.1, geo.q + 1e-3, geo.qdot, geo.qddot, geo.q, geo.qdot, geo.qddot, z, z)
        with pytest.raises(ValueError):
            error_functional(0.1, geo.q[:-1], geo.qdot[:-1], geo.qddot[:-1], geo.q, geo.qdot, geo.qddot,
                             z[:-1], z[:-1])


class TestCoupledResidual:
    def test_geodesic_at_zero_eps(self, geodesic_decs):
        decs, dtau = geodesic_decs
        res = coupled_residual(decs, dtau)
        assert len(res) == len(decs) - 2
        for r in res:
            assert r.moduli_residual < 1e-6
            assert r.field_moduli_part < 1e-6

    def test_time_shift(self, geodesic_decs):
        decs, dtau = geodesic_decs
        shifted = [ModulationDecomposition(d.q, d.qdot, d.Y, d.Y_t, d.eps, {}, d.data, d.t + 7.0) for d in decs]
        a = coupled_residual(decs[:3], dtau)[0]
        b = coupled_residual(shifted[:3], dtau)[0]
        assert (a.field_residual, a.moduli_residual) == (b.field_residual, b.moduli_residual)
        assert b.t == a.t + 7.0

    def test_needs_three_samples(self, geodesic_decs):
        decs, dtau = geodesic_decs
        with pytest.raises(ValueError):
            coupled_residual(decs[:2], dtau)

    def test_modulation_acceleration_reduces_to_geodesic(self, q32, q1_default):
        s = initial_data(q32, q1_default, 0.1)
        dec = decompose(s.phi, s.phi_t, 0.1, q32)
        _, acc = geodesic_rhs(GeodesicState(q32, q1_default))
        assert np.abs(modulation_qddot(dec) - acc).max() < 1e-6 * np.abs(acc).max()
