"""Effective diffusion tensor of a rotated fiber array.

Solves the cell problem at a few fiber angles and compares each tensor with
the rotated reference tensor, then prints the porosity against the exact
disc area.
"""

import numpy as np

from plyhomog.cellsolver import effective_at, rotated
from plyhomog.laws import AngleLaw
from plyhomog.microgeom import Box, MicrostructureSpec


def spec_at(angle):
    return MicrostructureSpec(omega=Box((0, 0, 0), (1, 1, 1)), gamma=AngleLaw("constant", angle), a=0.25, eps=0.25)


x = [0.5, 0.5, 0.5]
ref = effective_at(spec_at(0.0), x, n=64)
print("reference tensor (fibers along x1):")
print(np.array2string(ref.tensor, precision=4))
print(f"porosity {ref.theta:.4f}, exact 1 - pi/16 = {1 - np.pi / 16:.4f}")

for angle in (0.3, 0.7, 1.2):
    t = effective_at(spec_at(angle), x, n=64).tensor
    dev = np.abs(t - rotated(ref.tensor, angle)).max() / np.abs(ref.tensor).max()
    print(f"angle {angle:.1f} rad: max deviation from R A0 R^T = {100 * dev:.3f}%")
