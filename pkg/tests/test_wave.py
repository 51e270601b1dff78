import csv

import numpy as np
import pytest

from adiabatic_lumps.elliptic import eval_map
from adiabatic_lumps.geometry import metric
from adiabatic_lumps.torus import LatticeSpec, dot, integrate
from adiabatic_lumps.wave import (
    MONITOR_COLUMNS,
    CFLError,
    WaveState,
    degree,
    energies,
    evolve,
    initial_data,
    step,
)

from conftest import moduli_point


@pytest.fixture(scope="module")
def q32():
    return moduli_point(32)


def cfl_dt(lattice, cfl=0.25):
    return cfl * lattice.h_min


class TestInitialData:
    def test_zero_eps(self, q32, q1_default):
        s = initial_data(q32, q1_default, 0.0)
        assert not s.phi_t.any()
        assert np.array_equal(s.phi, eval_map(q32))

    def test_kinetic_norm_is_the_metric_norm(self, q64, q1_default):
        eps = 0.1
        s = initial_data(q64, q1_default, eps)
        norm = np.sqrt(integrate(dot(s.phi_t, s.phi_t), q64.lattice))
        expected = eps * np.sqrt(q1_default @ metric(q64).gamma @ q1_default)
        assert norm == pytest.approx(expected, abs=1e-8)
        assert s.tangency_defect < 1e-10

    def test_wrong_length(self, q32):
        with pytest.raises(ValueError):
            initial_data(q32, np.ones(7), 0.1)


class TestStep:
    def test_static_harmonic_map_stays_put(self, q64):
        s0 = initial_data(q64, np.zeros(8), 0.0)
        dt = cfl_dt(q64.lattice)
        traj = evolve(s0, 256 * dt, dt, sample_every=256)
        drift = np.abs(traj.states[-1].phi - s0.phi).max()
        assert traj.states[-1].t == pytest.approx(1.0, rel=0.01)
        assert drift < 1e-6

    def test_second_order_in_dt(self, q32, q1_default):
        s0 = initial_data(q32, q1_default, 0.3)
        dt = cfl_dt(q32.lattice)
        t_end = 16 * dt
        finals = [evolve(s0, t_end, dt / k, sample_every=10**6).states[-1].phi for k in (1, 2, 4)]
        ratio = np.abs(finals[0] - finals[1]).max() / np.abs(finals[1] - finals[2]).max()
        assert ratio == pytest.approx(4.0, rel=0.3)

    def test_time_reversal(self, q32, q1_default):
        s = initial_data(q32, q1_default, 0.3)
        dt = cfl_dt(q32.lattice)
        fwd = s
        for _ in range(100):
            fwd = step(fwd, dt)
        back = WaveState(fwd.phi, -fwd.phi_t, fwd.lattice)
        for _ in range(100):
            back = step(back, dt)
        assert np.abs(back.phi - s.phi).max() < 1e-8
        assert np.abs(back.phi_t + s.phi_t).max() < 1e-8

    def test_constraint_is_kept(self, q32, q1_default):
        s = initial_data(q32, q1_default, 0.3)
        for _ in range(50):
            s = step(s, cfl_dt(q32.lattice))
        assert s.unit_norm_defect < 1e-12
        assert s.tangency_defect < 1e-12

    def test_cfl_violation(self, q32):
        s = initial_data(q32, np.zeros(8), 0.0)
        with pytest.raises(CFLError):
            step(s, 1.01 * cfl_dt(q32.lattice))
        with pytest.raises(CFLError):
            step(s, 0.0)


class TestEnergies:
    def test_static_map(self, q64):
        T, E, total = energies(initial_data(q64, np.zeros(8), 0.0))
        assert T == 0
        assert E == pytest.approx(8 * np.pi, rel=1e-6)
        assert total == E

    def test_kinetic_scaling(self, q32, q1_default):
        s = initial_data(q32, q1_default, 0.2)
        T1 = energies(s)[0]
        T2 = energies(WaveState(s.phi, 2 * s.phi_t, s.lattice))[0]
        assert T2 == 4 * T1

    def test_constant_map(self):
        lat = LatticeSpec(grid_n=16)
        phi = np.zeros((3, 16, 16))
        phi[2] = 1.0
        assert energies(WaveState(phi, 0 * phi, lat)) == (0.0, 0.0, 0.0)


class TestDegree:
    def test_holomorphic_map(self, q64):
        d, raw, dist = degree(eval_map(q64), q64.lattice)
        assert d == 2 and dist < 1e-6

    def test_reflection(self, q64):
        phi = eval_map(q64)
        phi[2] *= -1
        assert degree(phi, q64.lattice)[0] == -2

    def test_constant(self):
        lat = LatticeSpec(grid_n=16)
        phi = np.zeros((3, 16, 16))
        phi[0] = 1.0
        assert degree(phi, lat)[0] == 0

    def test_indeterminate(self, q64):
        # a field off the sphere covers a non-integer area
        assert degree(0.5 * eval_map(q64), q64.lattice)[0] is None


class TestEvolve:
    def test_monitors(self, q32, q1_default, tmp_path):
        s0 = initial_data(q32, q1_default, 0.3)
        dt = cfl_dt(q32.lattice)
        traj = evolve(s0, 40 * dt, dt, sample_every=8)
        assert traj.status == "ok"
        assert len(traj.times) == 6
        assert traj.energy_drift < 1e-6
        assert np.all(traj.degrees == 2)
        assert np.all(traj.monitors[:, 2] >= 8 * np.pi - 1e-6)
        traj.write_csv(tmp_path / "m.csv")
        rows = list(csv.reader(open(tmp_path / "m.csv")))
        assert tuple(rows[0]) == MONITOR_COLUMNS and len(rows) == 7

    def test_callback_without_storage(self, q32):
        seen = []
        s0 = initial_data(q32, np.zeros(8), 0.0)
        dt = cfl_dt(q32.lattice)
        traj = evolve(s0, 4 * dt, dt, sample_every=2, store=False, callback=seen.append)
        assert traj.states == [] and len(seen) == 3

    def test_non_finite_field_is_a_blowup(self, q32):
        s0 = initial_data(q32, np.zeros(8), 0.0)
        phi = s0.phi.copy()
        phi[:, 3, 3] = np.nan
        dt = cfl_dt(q32.lattice)
        traj = evolve(WaveState(phi, s0.phi_t, s0.lattice), 4 * dt, dt)
        assert traj.status == "blowup"

    def test_energy_spike_threshold(self, q32, q1_default):
        s0 = initial_data(q32, q1_default, 0.5)
        dt = cfl_dt(q32.lattice)
        traj = evolve(s0, 20 * dt, dt, spike=0.0)
        assert traj.status == "blowup" and "spike" in traj.message

    def test_end_time_must_be_a_multiple(self, q32):
        s0 = initial_data(q32, np.zeros(8), 0.0)
        with pytest.raises(ValueError):
            evolve(s0, 0.0101, 0.005)
