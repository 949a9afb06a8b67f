"""
Mini-batch gradient covariance and its bootstrap estimate
=========================================================
"""

import numpy as np

from sgdvar import landscape, regvar

pop = landscape.generate_population(seed=[0, 0])
train = landscape.sample_training_set(pop, seed=[1, 0])
theta = np.array([3.0, 4.5])

gm = regvar.per_sample_grads(train, theta)
for B in (1, 5, 30):
    cov = regvar.minibatch_cov(gm, B)
    print(B, "trace*B*N =", round(np.trace(cov) * B * gm.n, 10), " sum |g_i - g_S|^2 =", round(gm.sum_sq_deviation(), 10))

# resampled batches converge to the closed form at rate 1/sqrt(K)
target = regvar.minibatch_cov(gm, 5)
for K in (100, 1_000, 10_000, 100_000):
    boot = regvar.bootstrap_cov(gm, 5, K, rng=K)
    print(K, "relative error", round(np.linalg.norm(boot - target) / np.linalg.norm(target), 4))

# the two regularizers at the same point
batch = np.array([0, 7, 7, 12])
r1 = regvar.reg1(train, theta)
r2 = regvar.reg2(train, batch, theta)
print("Reg1", r1.value, r1.grad)
print("Reg2", r2.value, r2.grad)
