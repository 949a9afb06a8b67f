"""
Candidate functions and the population loss
===========================================

A population is 30 two-bump functions. Every candidate has a broad well at
(7, 7); the second bump sits on one of eight lattice sites and is a peak
with probability ``rho``. A training set resamples 30 candidates.
"""

import numpy as np

from sgdvar import landscape

pop = landscape.generate_population(seed=[0, 0])
print("candidates:", len(pop), "extra peaks:", pop.n_peaks)

cand = pop.candidates[0]
for bump in cand.bumps:
    print(bump.orientation.value, bump.center, round(bump.height, 3), round(bump.width, 3))

train = landscape.sample_training_set(pop, seed=[1, 0])
print("distinct candidates in the training set:", np.unique(train.indices).size)

# population vs training loss on a coarse mesh
ax = np.linspace(0, 8, 5)
for x in ax:
    row = [f"{pop.population_loss([x, y]):7.2f}/{train.loss([x, y]):7.2f}" for y in ax]
    print(" ".join(row))

point, value = pop.minimum()
print("population minimum", point.round(4), round(value, 4))
print("Hessian there\n", pop.objective().hessian(point).round(3))
