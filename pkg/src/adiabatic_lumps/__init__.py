"""Adiabatic dynamics of lumps on a torus.

Modules
-------
torus
    Periodic grids on ``C / Lambda`` and spectral calculus on them.
elliptic
    Weierstrass functions and the degree-n holomorphic maps built from them.
geometry
    The kinetic-energy metric on the moduli space, its Christoffel symbols and geodesics.
jacobi
    The Jacobi operator, its symmetric extension and their spectra.
wave
    A constrained, time-reversible integrator for the wave-map equation.
modulation
    Splitting a wave map into a moduli path plus a small correction.
experiments, cli
    Reproducible runs driven by a JSON configuration.
"""

__version__ = "0.1.0"
