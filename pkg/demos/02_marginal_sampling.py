"""
Sampling from exact marginal generators
=======================================

Over a finite dataset the marginal generator is the posterior-weighted average
of conditional generators. Different generators for the same path, their
convex combinations, and added Langevin terms all give the same marginals.
"""

import numpy as np

from genmatch import Dataset, GeometricAverage, JumpBins, MarginalModel, SimConfig, make_generator, simulate, tv_hist

path, data = GeometricAverage(), Dataset.two_point()
bins = JumpBins(-2, 2, 129)
cfg = SimConfig(n_steps=200, n_samples=5000, seed=0)
edges = np.linspace(-3, 3, 65)

# %%
# Flow, jump and a half-half superposition of both.
samples = {}
for name in ("flow", "jump", "superposition:flow+jump"):
    res = simulate(MarginalModel(path, data, make_generator(name, path, bins=bins)), cfg)
    samples[name] = res.samples
    print(f"{name:24s} mass above zero {np.mean(res.samples > 0):.3f}  jumps {res.stats.jumps}")

print("TV flow vs jump:", tv_hist(samples["flow"], samples["jump"], edges))

# %%
# Langevin dynamics with the exact marginal score leaves every p_t unchanged.
lang = simulate(MarginalModel(path, data, make_generator("flow", path), langevin_beta=1.0), cfg)
print("TV flow vs flow + Langevin:", tv_hist(samples["flow"], lang.samples, edges))

# %%
# Intermediate marginals can be recorded along the way.
res = simulate(MarginalModel(path, data, make_generator("flow", path)), SimConfig(200, 5000, record_times=(0.5,)))
x = res.records[0.5]
print("t=0.5 mean and std:", x.mean(), x.std(), "(exact std", np.sqrt(0.25 + 0.25), ")")
