import csv

import numpy as np
import pytest

from adiabatic_lumps.elliptic import InadmissibleError, ModuliPoint
from adiabatic_lumps.geometry import (
    GeodesicState,
    christoffel,
    geodesic_integrate,
    geodesic_rhs,
    levi_civita_fd,
    metric,
)

from conftest import OTHER_POINTS, moduli_point


@pytest.fixture(scope="module")
def q32():
    return moduli_point(32)


@pytest.fixture(scope="module")
def unit_velocity(q32):
    v = np.array([0.0, 0.0, 0.5, 0.3, -0.4, 0.2, 0.1, -0.3])
    return v / np.sqrt(v @ metric(q32).gamma @ v)


class TestMetric:
    def test_symmetric_positive_definite(self, q64):
        md = metric(q64)
        assert np.array_equal(md.gamma, md.gamma.T)
        assert md.min_eigenvalue > 0
        assert np.abs(md.gamma @ md.gamma_inv - np.eye(8)).max() < 1e-10

    def test_grid_refinement(self):
        g64 = metric(moduli_point(64)).gamma
        g128 = metric(moduli_point(128)).gamma
        assert np.abs(g64 - g128).max() < 1e-8 * np.abs(g128).max()

    def test_inadmissible_point(self):
        with pytest.raises(InadmissibleError):
            metric(ModuliPoint.from_complex(1, [0.1, 0.3 + 0.4j], [0.1]))


class TestChristoffel:
    @pytest.mark.parametrize("params", [None] + OTHER_POINTS, ids=["default", "square", "oblique"])
    def test_matches_levi_civita(self, params):
        q = moduli_point(64) if params is None else moduli_point(64, **params)
        G = christoffel(q)
        assert np.array_equal(G, G.transpose(0, 2, 1))
        assert np.abs(G - levi_civita_fd(q)).max() < 1e-4

    def test_contraction_is_finite(self, q32, rng):
        G = christoffel(q32)
        v = rng.normal(size=8)
        assert np.all(np.isfinite(np.einsum("mnl,n,l->m", G, v, v)))

    def test_rhs_matches_christoffel_contraction(self, q32, unit_velocity):
        G = christoffel(q32)
        _, acc = geodesic_rhs(GeodesicState(q32, unit_velocity))
        expected = -np.einsum("mnl,n,l->m", G, unit_velocity, unit_velocity)
        assert np.abs(acc - expected).max() < 1e-6 * np.abs(expected).max()


class TestGeodesicRhs:
    def test_rest(self, q32):
        qdot, qddot = geodesic_rhs(GeodesicState(q32, np.zeros(8)))
        assert not qdot.any() and not qddot.any()

    def test_quadratic_and_even(self, q32, unit_velocity):
        _, a1 = geodesic_rhs(GeodesicState(q32, unit_velocity))
        _, a2 = geodesic_rhs(GeodesicState(q32, 2 * unit_velocity))
        _, am = geodesic_rhs(GeodesicState(q32, -unit_velocity))
        assert np.abs(a2 - 4 * a1).max() < 1e-8 * np.abs(a1).max()
        assert np.abs(am - a1).max() < 1e-8 * np.abs(a1).max()

    def test_inadmissible(self):
        with pytest.raises(InadmissibleError):
            geodesic_rhs(GeodesicState(ModuliPoint.from_complex(1, [0.1, 0.3 + 0.4j], [0.1]), np.ones(8)))


class TestIntegrator:
    def test_rest_stays_put(self, q32):
        tr = geodesic_integrate(GeodesicState(q32, np.zeros(8)), 0.1, 0.01)
        assert tr.status == "ok"
        assert np.all(tr.q == q32.q)
        assert tr.max_speed_drift == 0

    def test_fourth_order(self, q32, unit_velocity):
        ends = [geodesic_integrate(GeodesicState(q32, unit_velocity), 0.4, d).q[-1]
                for d in (0.08, 0.04, 0.02)]
        ratio = np.abs(ends[0] - ends[1]).max() / np.abs(ends[1] - ends[2]).max()
        assert ratio == pytest.approx(16, rel=0.3)

    def test_time_reversal(self, q32, unit_velocity):
        fwd = geodesic_integrate(GeodesicState(q32, unit_velocity), 0.2, 0.01)
        back = geodesic_integrate(GeodesicState(fwd.point(-1), -fwd.qdot[-1]), 0.2, 0.01)
        assert np.abs(back.q[-1] - q32.q).max() < 1e-6

    def test_speed_is_conserved(self, q32, unit_velocity):
        tr = geodesic_integrate(GeodesicState(q32, unit_velocity), 0.2, 1e-2)
        assert tr.status == "ok"
        assert tr.max_speed_drift < 1e-6 * 0.2

    def test_chart_exit(self):
        # a zero heading straight for a pole leaves the admissible region
        q = moduli_point(16, a=[0.1 + 0.1j, 0.55 + 0.6j], b=[0.3 + 0.1j])
        v = np.zeros(8)
        v[2] = 2.0
        tr = geodesic_integrate(GeodesicState(q, v), 0.5, 0.01, max_drift=np.inf)
        assert tr.status == "chart_exit"
        assert tr.tau[-1] < 0.5

    def test_bad_steps(self, q32):
        with pytest.raises(ValueError):
            geodesic_integrate(GeodesicState(q32, np.zeros(8)), 0.1, 0.0)
        with pytest.raises(ValueError):
            geodesic_integrate(GeodesicState(q32, np.zeros(8)), 0.1, 0.03)

    def test_csv(self, q32, unit_velocity, tmp_path):
        tr = geodesic_integrate(GeodesicState(q32, unit_velocity), 0.05, 0.01)
        tr.write_csv(tmp_path / "g.csv")
        rows = list(csv.reader(open(tmp_path / "g.csv")))
        assert rows[0] == (["tau"] + [f"q_{i}" for i in range(8)] + [f"qdot_{i}" for i in range(8)]
                           + ["speed", "speed_drift"])
        assert len(rows) == 7
        assert float(rows[-1][0]) == pytest.approx(0.05)
