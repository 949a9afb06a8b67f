"""
GD, SGD and NoisyGD from one initialization
===========================================

NoisyGD's isotropic noise is calibrated so its injected trace matches SGD's
mini-batch gradient covariance along the first GD steps.
"""

import numpy as np

from sgdvar import landscape, optim

pop = landscape.generate_population(seed=[0, 3])
train = landscape.sample_training_set(pop, seed=[1, 3])
grid = np.array([(x, y) for x in np.linspace(0, 8, 10) for y in np.linspace(0, 8, 10)])
sigma = optim.calibrate_noise_std(train, grid)
print("calibrated noise std", round(sigma, 4))

_, floor = pop.minimum()
for kind in ("GD", "SGD", "NoisyGD"):
    excess = []
    for g, th0 in enumerate(grid):
        cfg = optim.OptimizerConfig(kind=kind, noise_std=sigma if kind == "NoisyGD" else 0.0, seed=[2, g])
        tr = optim.run(train, cfg, th0, diagnostics=False)
        excess.append(pop.population_loss(tr.final) - floor)
    print(f"{kind:8s} mean excess test loss {np.mean(excess):.4f}")

# one trajectory in detail
tr = optim.run(train, optim.OptimizerConfig(kind="SGD", iterations=20, seed=1), np.array([4.0, 4.0]))
print(tr.to_csv().splitlines()[0])
print(tr.to_csv().splitlines()[-1])

# degenerate settings collapse onto GD bit for bit
th0 = np.array([2.0, 6.0])
gd = optim.run(train, optim.OptimizerConfig(kind="GD"), th0)
full = optim.run(train, optim.OptimizerConfig(kind="SGD", batch_size=30, with_replacement=False), th0)
print("full-batch SGD == GD:", np.array_equal(gd.iterates, full.iterates))
