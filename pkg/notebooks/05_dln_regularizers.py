"""
Regularized SGD on a diagonal linear network
============================================

Sparse regression with a 2d-parameter model f(x) = <a * b, x>. The test
loss of each regularized run is divided by vanilla SGD's test loss for the
same data, initialization and batch order.
"""

import numpy as np

from sgdvar import dln, optim

train = dln.generate_sparse_data(d=100, n=40, k=5, seed=0)
test = dln.held_out(train, 1000, seed=1)
theta0 = dln.init_params(100, 0.1, seed=2)
print("true support", np.flatnonzero(train.beta_true))


def test_mse(lam1, lam2, seed):
    kind = "SGDwReg" if lam1 or lam2 else "SGD"
    cfg = optim.OptimizerConfig(kind=kind, batch_size=4, with_replacement=False, lambda1=lam1, lambda2=lam2,
                                schedule=optim.LrSchedule(0.01, 1.0), iterations=2000, seed=seed)
    return test.mse(optim.run(train, cfg, theta0, diagnostics=False).final)


bench = np.mean([test_mse(0, 0, s) for s in range(2)])
print("vanilla SGD test MSE", round(bench, 4))
for lam1, lam2 in [(0.03, 0.0), (0.03, 0.06), (0.1, 0.0)]:
    ratio = np.mean([test_mse(lam1, lam2, s) for s in range(2)]) / bench
    print(f"lambda1={lam1:<5} lambda2={lam2:<5} ratio {ratio:.3f}")
