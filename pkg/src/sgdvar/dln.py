"""Diagonal linear network ``f(x) = <a * b, x>`` on sparse linear-regression data.

Parameters are stored flat as ``theta = concat(a, b)`` (length 2d).  The
per-sample loss is ``0.5 * (f(x) - y)^2``; reported test losses are plain
(unhalved) mean squared errors.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .objective import Objective

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float


@dataclass
class DlnParams:
    theta_a: np.ndarray
    theta_b: np.ndarray

    @property
    def weight(self):
        return self.theta_a * self.theta_b

    @property
    def flat(self):
        return np.concatenate([self.theta_a, self.theta_b])

    @classmethod
    def from_flat(cls, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or theta.size % 2:
            raise ValueError("flat DLN parameters must have even length")
        d = theta.size // 2
        return cls(theta[:d].copy(), theta[d:].copy())


def _split(theta, d):
    if isinstance(theta, DlnParams):
        a, b = theta.theta_a, theta.theta_b
    else:
        theta = np.asarray(theta, dtype=float)
        a, b = theta[:theta.size // 2], theta[theta.size // 2:]
    if a.shape != (d,) or b.shape != (d,):
        raise ValueError(f"parameter blocks must have length {d}")
    return a, b


def init_params(d, scale=0.1, seed=None):
    """theta_a, theta_b ~ N(0, scale^2 I), returned flat."""
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal(2 * d)


# -- single-sample functions ---------------------------------------------

def dln_loss(z, theta):
    x = np.asarray(z.x, dtype=float)
    a, b = _split(theta, x.size)
    r = (a * b) @ x - z.y
    return 0.5 * r * r


def dln_grad(z, theta):
    x = np.asarray(z.x, dtype=float)
    a, b = _split(theta, x.size)
    r = (a * b) @ x - z.y
    return np.concatenate([r * b * x, r * a * x])


def dln_hvp(z, theta, v):
    x = np.asarray(z.x, dtype=float)
    a, b = _split(theta, x.size)
    va, vb = _split(v, x.size)
    r = (a * b) @ x - z.y
    jv = x @ (b * va + a * vb)
    return np.concatenate([jv * b * x + r * x * vb, jv * a * x + r * x * va])


class RegressionDataset(Objective):
    """N samples (rows of ``X`` with targets ``y``) as a DLN objective."""

    def __init__(self, X, y, beta_true=None, noise_std=1.0, seed=None):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.size or self.y.size < 1:
            raise ValueError("X and y must have the same (non-zero) number of rows")
        self.d = self.X.shape[1]
        self.dim = 2 * self.d
        self.n_samples = self.y.size
        self.beta_true = None if beta_true is None else np.asarray(beta_true, dtype=float)
        if self.beta_true is not None and self.beta_true.shape != (self.d,):
            raise ValueError("beta_true has the wrong length")
        self.noise_std = float(noise_std)
        self.seed = seed

    @property
    def k(self):
        return None if self.beta_true is None else int(np.count_nonzero(self.beta_true))

    @property
    def samples(self):
        return [Sample(x, float(y)) for x, y in zip(self.X, self.y)]

    def _parts(self, theta, idx):
        if theta is None or np.size(theta) != self.dim:
            raise ValueError(f"expected {self.dim} parameters")
        idx = self._idx(idx)
        a, b = _split(theta, self.d)
        X = self.X[idx]
        r = X @ (a * b) - self.y[idx]
        return a, b, X, r

    def predict(self, theta, X=None):
        a, b = _split(theta, self.d)
        return (self.X if X is None else X) @ (a * b)

    def sample_losses(self, theta, idx=None):
        _, _, _, r = self._parts(theta, idx)
        return 0.5 * r * r

    def sample_grads(self, theta, idx=None):
        a, b, X, r = self._parts(theta, idx)
        return np.hstack([r[:, None] * (X * b), r[:, None] * (X * a)])

    def sample_hvps(self, theta, vecs, idx=None):
        a, b, X, r = self._parts(theta, idx)
        V = np.asarray(vecs, dtype=float)
        d = self.d
        if V.ndim == 1:
            va, vb = V[:d], V[d:]
            jv = X @ (b * va + a * vb)
            xva, xvb = X * va, X * vb
        else:
            va, vb = V[:, :d], V[:, d:]
            jv = np.sum(X * (b * va + a * vb), axis=1)
            xva, xvb = X * va, X * vb
        top = jv[:, None] * (X * b) + r[:, None] * xvb
        bot = jv[:, None] * (X * a) + r[:, None] * xva
        return np.hstack([top, bot])

    # batch versions without the (n, 2d) per-sample intermediates
    def grad(self, theta, idx=None):
        a, b, X, r = self._parts(theta, idx)
        xr = X.T @ r / r.size
        return np.concatenate([b * xr, a * xr])

    def hvp(self, theta, v, idx=None):
        a, b, X, r = self._parts(theta, idx)
        va, vb = _split(v, self.d)
        xr = X.T @ r / r.size
        xj = X.T @ (X @ (b * va + a * vb)) / r.size
        return np.concatenate([b * xj + vb * xr, a * xj + va * xr])

    def sample_hessians(self, theta, idx=None):
        a, b, X, r = self._parts(theta, idx)
        J = np.hstack([X * b, X * a])
        H = J[:, :, None] * J[:, None, :]
        d = self.d
        rng_d = np.arange(d)
        H[:, rng_d, rng_d + d] += r[:, None] * X
        H[:, rng_d + d, rng_d] += r[:, None] * X
        return H

    def mse(self, theta):
        """Unhalved mean squared error."""
        r = self.predict(theta) - self.y
        return float(np.mean(r * r))

    def subset(self, idx):
        idx = self._idx(idx)
        return RegressionDataset(self.X[idx], self.y[idx], self.beta_true, self.noise_std)

    def replace(self, i, source, j):
        X, y = self.X.copy(), self.y.copy()
        X[i], y[i] = source.X[j], source.y[j]
        return RegressionDataset(X, y, self.beta_true, self.noise_std)

    # -- files ------------------------------------------------------------
    def save(self, stem):
        """Write ``stem.json`` (metadata) and ``stem.csv`` (x columns then y)."""
        meta = {
            "format": "sgdvar.regression_dataset",
            "version": FORMAT_VERSION,
            "d": self.d,
            "n": self.n_samples,
            "k": self.k,
            "noise_std": self.noise_std,
            "seed": self.seed if isinstance(self.seed, (int, list, type(None))) else str(self.seed),
            "beta_true": None if self.beta_true is None else self.beta_true.tolist(),
            "data": f"{stem}.csv",
        }
        with open(f"{stem}.json", "w") as fh:
            json.dump(meta, fh, indent=1)
        with open(f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(self.d)] + ["y"])
            for xr, yv in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in xr] + [repr(float(yv))])

    @classmethod
    def load(cls, stem):
        with open(f"{stem}.json") as fh:
            meta = json.load(fh)
        if meta.get("format") != "sgdvar.regression_dataset" or meta.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported dataset document")
        data = np.loadtxt(f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
        beta = meta["beta_true"]
        return cls(data[:, :-1], data[:, -1], None if beta is None else np.array(beta),
                   meta["noise_std"], meta["seed"])


class SparseRegressionModel:
    """The data distribution: x ~ N(0, I_d), y = <beta, x> + noise_std * N(0, 1).

    Also gives the exact population gradient mean and covariance of the DLN
    loss, using the Gaussian fourth-moment identity
    E[(u.x)^2 x x^T] = |u|^2 I + 2 u u^T.
    """

    def __init__(self, beta, noise_std=1.0):
        self.beta = np.asarray(beta, dtype=float)
        self.d = self.beta.size
        self.noise_std = float(noise_std)

    def draw(self, n, seed=None):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, self.d))
        y = X @ self.beta + self.noise_std * rng.standard_normal(n)
        return RegressionDataset(X, y, self.beta, self.noise_std, seed)

    def _jac_parts(self, theta):
        a, b = _split(theta, self.d)
        return a, b, a * b - self.beta

    def population_loss(self, theta):
        _, _, u = self._jac_parts(theta)
        return 0.5 * (u @ u + self.noise_std**2)

    def population_mse(self, theta):
        return 2.0 * self.population_loss(theta)

    def mean_grad(self, theta):
        a, b, u = self._jac_parts(theta)
        return np.concatenate([b * u, a * u])

    def grad_cov(self, theta):
        """E[J(g(z) - E g)] = D ((|u|^2 + s^2) I + u u^T) D^T with D = [diag(b); diag(a)]."""
        a, b, u = self._jac_parts(theta)
        s = u @ u + self.noise_std**2
        Du = np.concatenate([b * u, a * u])
        d = self.d
        C = np.outer(Du, Du)
        diag = s * np.concatenate([b * b, a * a])
        C[np.arange(2 * d), np.arange(2 * d)] += diag
        cross = s * a * b
        C[np.arange(d), np.arange(d) + d] += cross
        C[np.arange(d) + d, np.arange(d)] += cross
        return C

    def mc_grad_cov(self, theta, n_draws=10_000, seed=None):
        """Monte-Carlo counterpart of :meth:`grad_cov` (independent check)."""
        ds = self.draw(n_draws, seed)
        g = ds.sample_grads(theta)
        dev = g - self.mean_grad(theta)
        return dev.T @ dev / n_draws


def generate_sparse_data(d=100, n=40, k=5, seed=None, noise_std=1.0, beta=None):
    """Sparse regression training set.

    ``beta`` has ``k`` non-zero entries at uniformly random positions with
    values ~ N(0, 2); pass ``beta`` to fix it.
    """
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= d")
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    if beta is None:
        beta = np.zeros(d)
        pos = rng.choice(d, size=k, replace=False)
        beta[pos] = rng.normal(0.0, np.sqrt(2.0), size=k)
    else:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (d,):
            raise ValueError("beta has the wrong length")
    X = rng.standard_normal((n, d))
    y = X @ beta + noise_std * rng.standard_normal(n)
    return RegressionDataset(X, y, beta, noise_std, seed)


def held_out(ds, n=1000, seed=None):
    """Fresh draw from the distribution that generated ``ds`` (same beta)."""
    return SparseRegressionModel(ds.beta_true, ds.noise_std).draw(n, seed)
