"""A twisted plywood lattice and its locally-periodic approximation.

The fiber angle rotates by pi across the slab. The script counts the fibers,
builds the partition into eps^r cubes and shows how the indicator mismatch
between the exact and frozen geometries shrinks with eps.
"""

import numpy as np

from plyhomog.harness import scaling_study
from plyhomog.laws import AngleLaw, RadiusLaw
from plyhomog.lpgeom import partition_cubes
from plyhomog.microgeom import Box, MicrostructureSpec, fiber_lattice

spec = MicrostructureSpec(omega=Box((0, 0, 0), (1, 1, 1)), gamma=AngleLaw("linear", 0.0, np.pi),
                          rho=RadiusLaw(1.0), a=0.2, eps=2**-4, r_exp=0.75)

cells = fiber_lattice(spec)
part = partition_cubes(spec)
print(f"eps = {spec.eps:g}: {len(cells)} fibers inside the unit cube, {len(part.anchors)} partition cubes")

print("\nIndicator mismatch (exact vs frozen-angle geometry), 200k samples per eps:")
rep = scaling_study(spec, [2**-3, 2**-4, 2**-5], n_samples=200_000)
for row in rep.rows:
    print(f"  eps = {row['eps']:<8g} i1 = {row['i1']:.5f}  i2 = {row['i2']:.5f}")
print(f"fitted slope of i2: {rep.fits['i2']['slope']:.3f} (theory 3r - 2 = {3 * spec.r_exp - 2:.2f})")
print("i1 vanishes identically here because the radius is constant.")
