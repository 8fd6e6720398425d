"""
Jumps on an arbitrary support
=============================

The mixture path needs no geometry at all: the marginal jump sampler moves
mass from a uniform prior onto a 2D checkerboard of atoms.
"""

import numpy as np

from genmatch import Dataset, JumpAtoms, MarginalModel, MixtureUniform, SimConfig, make_generator, simulate, tv_hist

cb = Dataset.checkerboard()
path = MixtureUniform(-1, 1, dim=2)
model = MarginalModel(path, cb, make_generator("jump", path, support=JumpAtoms(cb.points)))
res = simulate(model, SimConfig(n_steps=200, n_samples=10_000, seed=0))

# %%
# Compare a 16 x 16 histogram of the samples with the atom distribution.
edges = [np.linspace(-1, 1, 17)] * 2
print("atoms:", len(cb.points), " TV to target:", tv_hist(res.samples, cb, edges))

# %%
# A coarse text picture: occupied cells of an 8 x 8 grid.
h, _, _ = np.histogram2d(res.samples[:, 0], res.samples[:, 1], bins=8, range=[[-1, 1], [-1, 1]])
for row in h.T[::-1]:
    print("".join("#" if v > 0.5 * h.max() else "." for v in row))
