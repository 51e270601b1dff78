# %% [markdown]
# # Slow wave maps follow geodesics
#
# Start a wave map on the moduli space with a small velocity eps * qdot.  On
# the slow time scale tau = eps t the field should stay close to the map
# psi(q(tau)) where q is a geodesic of the kinetic-energy metric.  This demo
# runs a short version of that comparison on a coarse grid and shows the
# distance shrinking as eps decreases.

# %%
import numpy as np

from adiabatic_lumps.config import default_config
from adiabatic_lumps.elliptic import ModuliPoint, eval_map
from adiabatic_lumps.geometry import GeodesicState, geodesic_integrate, metric
from adiabatic_lumps.modulation import decompose
from adiabatic_lumps.plots import svg_line_chart
from adiabatic_lumps.torus import LatticeSpec
from adiabatic_lumps.wave import evolve, initial_data

lat = LatticeSpec(grid_n=32)
q0 = ModuliPoint(2, default_config().q0.q, lat)
v = np.array(default_config().q1)
v /= np.sqrt(v @ metric(q0).gamma @ v)
tau_end, samples = 0.3, 7

# %% [markdown]
# The reference geodesic, sampled at the slow times where the wave map will
# be compared.

# %%
dtau = tau_end / (samples - 1)
geo = geodesic_integrate(GeodesicState(q0, v), tau_end, dtau / 20, lat, sample_every=20)
print("geodesic status:", geo.status, " speed drift:", geo.max_speed_drift)

# %% [markdown]
# For each eps the wave map runs to t = tau_end / eps.  At every sample it is
# projected back onto the moduli space, and the moduli coordinates are
# compared with the geodesic.

# %%
results = {}
for eps in (0.2, 0.1, 0.05):
    steps = int(np.ceil(dtau / eps / (0.25 * lat.h_min)))
    dt = dtau / eps / steps
    decs, dist = [], []

    def track(st):
        guess = decs[-1].q if decs else q0
        decs.append(decompose(st.phi, st.phi_t, eps, guess, t=st.t))

    evolve(initial_data(q0, v, eps), tau_end / eps, dt, sample_every=steps, store=False, callback=track)
    for dec, qg in zip(decs, geo.q):
        dist.append(np.abs(eval_map(dec.q) - eval_map(q0.with_q(qg))).max())
    results[eps] = np.array(dist)
    print(f"eps {eps:5.2f}: max C0 distance of projected maps {max(dist):.3e}")

# %% [markdown]
# Halving eps cuts the distance by about a factor of four.

# %%
e = sorted(results, reverse=True)
for a, b in zip(e, e[1:]):
    print(f"ratio {a} -> {b}: {results[a].max() / results[b].max():.2f}")
taus = np.linspace(0, tau_end, samples)
svg_line_chart("geodesic_vs_wave_map.svg",
               {f"eps = {k}": (taus[1:], results[k][1:]) for k in e},
               "Projected wave map vs geodesic", "tau", "C0 distance", logy=True)
print("wrote geodesic_vs_wave_map.svg")
