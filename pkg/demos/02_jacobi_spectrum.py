# %% [markdown]
# # Zero modes and the stability gap
#
# The Hessian of the energy at a harmonic map (the Jacobi operator J) has a
# kernel made of the moduli directions: 8 of them for two lumps.  J is only
# symmetric on fields tangent to the sphere.  Adding the adjoint of the
# normal-component map gives an operator L that is symmetric on all
# R^3-valued fields and has exactly one extra zero mode, psi itself.

# %%
import numpy as np

from adiabatic_lumps.config import default_config
from adiabatic_lumps.elliptic import ModuliPoint
from adiabatic_lumps.jacobi import (
    OperatorContext,
    assemble_dense,
    coercivity_estimate,
    kernel_dimension,
    symmetry_defect,
    weighted,
)
from adiabatic_lumps.torus import LatticeSpec

base = default_config().q0
q = ModuliPoint(base.n, base.q, LatticeSpec(grid_n=16))
ctx = OperatorContext.from_moduli(q, harmonic_tol=None)

# %% [markdown]
# Symmetry of the assembled matrices in the quadrature inner product.

# %%
for op in ("J", "L"):
    print(op, "symmetry defect:", symmetry_defect(weighted(ctx, assemble_dense(ctx, op))))

# %% [markdown]
# Lowest eigenvalues.  The kernel is read off from the largest jump between
# consecutive magnitudes.

# %%
for op in ("J", "L"):
    rep = kernel_dimension(ctx, op)
    print(f"{op}: kernel {rep.kernel_dim}, gap ratio {rep.gap_ratio:.3g}")
    print("   ", np.array2string(rep.eigenvalues[:12], precision=3, max_line_width=100))

# %% [markdown]
# Outside the kernel L is bounded below by a positive constant.  That
# constant shrinks as two zeros approach each other: the pair is starting to
# look like a single concentrated lump and the map is nearing the edge of the
# moduli space.

# %%
a1 = 0.25 + 0.25j
for d in (0.4, 0.2, 0.1, 0.07):
    p = ModuliPoint.from_complex(1.0, [a1, a1 + d * (1 + 1j) / np.sqrt(2)], [0.75 + 0.2j],
                                 LatticeSpec(grid_n=16))
    c = OperatorContext.from_moduli(p, harmonic_tol=None)
    print(f"zero separation {d:5.2f}: lowest non-kernel eigenvalue {coercivity_estimate(c):9.4f}")
