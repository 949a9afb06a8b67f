"""Gradient variability: the two regularizers, mini-batch gradient covariance,
its bootstrap estimate, and accumulators for the variability-bound terms."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .objective import NonFiniteError

MAX_DENSE_DIM = 512


@dataclass
class GradMatrix:
    """Per-sample gradients at a common point (N x p) and their mean."""

    rows: np.ndarray
    batch_grad: np.ndarray = None

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.batch_grad is None:
            self.batch_grad = self.rows.mean(axis=0)

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]

    @property
    def deviations(self):
        return self.rows - self.batch_grad

    def sum_sq_deviation(self):
        d = self.deviations
        return float(np.sum(d * d))


@dataclass
class RegTerm:
    value: float
    grad: np.ndarray


@dataclass
class RegValue:
    reg1: float
    reg2: float
    grad_reg1: np.ndarray
    grad_reg2: np.ndarray


def per_sample_grads(model, theta, idx=None):
    rows = model.sample_grads(theta, idx)
    bad = ~np.all(np.isfinite(rows), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite gradient for sample {i}", sample=i)
    return GradMatrix(rows)


def reg1(model, theta, gm=None):
    """Mean squared deviation of sample gradients from the batch gradient.

    Gradient: (2/N) sum_i (H_i - H_S)(g_i - g_S), built from Hessian-vector
    products.  Strength is applied by the caller.
    """
    gm = per_sample_grads(model, theta) if gm is None else gm
    dev = gm.deviations
    value = float(np.mean(np.sum(dev * dev, axis=1)))
    hv = model.sample_hvps(theta, dev)
    grad = 2.0 * (hv.mean(axis=0) - model.hvp(theta, dev.mean(axis=0)))
    return RegTerm(value, grad)


def reg2(model, batch, theta, omit_batch_grad=False, ref_grad=None):
    """Squared distance between the mini-batch gradient and a reference.

    The reference is the full-batch gradient, ``ref_grad`` when given (treated
    as a constant), or zero with ``omit_batch_grad``.
    """
    batch = np.sort(np.asarray(batch))
    gb = model.grad(theta, batch)
    if omit_batch_grad:
        dev = gb
        grad = 2.0 * model.hvp(theta, dev, batch)
    elif ref_grad is not None:
        dev = gb - ref_grad
        grad = 2.0 * model.hvp(theta, dev, batch)
    else:
        dev = gb - model.grad(theta)
        grad = 2.0 * (model.hvp(theta, dev, batch) - model.hvp(theta, dev))
    return RegTerm(float(dev @ dev), grad)


def regularizers(model, batch, theta, omit_batch_grad=False):
    r1 = reg1(model, theta)
    r2 = reg2(model, batch, theta, omit_batch_grad)
    return RegValue(r1.value, r2.value, r1.grad, r2.grad)


def minibatch_cov(gm, batch_size):
    """Covariance of size-B mini-batch mean gradients drawn with replacement:
    sum_i J(g_i - g_S) / (B N)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if gm.dim > MAX_DENSE_DIM:
        raise ValueError(f"dense covariance limited to p <= {MAX_DENSE_DIM}; use minibatch_cov_trace")
    d = gm.deviations
    c = d.T @ d / (batch_size * gm.n)
    return 0.5 * (c + c.T)


def minibatch_cov_trace(gm, batch_size):
    return gm.sum_sq_deviation() / (batch_size * gm.n)


def bootstrap_cov(gm, batch_size, n_batches, rng, chunk=20000):
    """Empirical covariance, around g_S, of ``n_batches`` resampled mini-batch
    mean gradients (batches drawn with replacement from the rows)."""
    if n_batches < 2:
        raise ValueError("need at least two resampled batches")
    rng = np.random.default_rng(rng)
    acc = np.zeros((gm.dim, gm.dim))
    done = 0
    while done < n_batches:
        k = min(chunk, n_batches - done)
        idx = rng.integers(gm.n, size=(k, batch_size))
        m = gm.rows[idx].mean(axis=1) - gm.batch_grad
        acc += m.T @ m
        done += k
    c = acc / n_batches
    return 0.5 * (c + c.T)


def outer_cov(rows, center):
    d = np.atleast_2d(rows) - center
    c = d.T @ d / d.shape[0]
    return 0.5 * (c + c.T)


class AccMode(str, Enum):
    POPULATION = "population"
    MINIBATCH = "minibatch"
    SGD_PATH = "sgd_path"


@dataclass
class CovarianceAccumulator:
    """Running sum of M * eta_t^2 * C_t with a per-term trace log."""

    dim: int
    mode: AccMode = AccMode.MINIBATCH
    weighted_sum: np.ndarray = None
    log: list = field(default_factory=list)

    def __post_init__(self):
        self.mode = AccMode(self.mode)
        if self.weighted_sum is None:
            self.weighted_sum = np.zeros((self.dim, self.dim))

    def add(self, cov, eta, m=1.0, tol=1e-10):
        cov = np.asarray(cov, dtype=float)
        scale = max(1.0, float(np.abs(cov).max()))
        if cov.shape != (self.dim, self.dim) or np.abs(cov - cov.T).max() > tol * scale:
            raise ValueError("covariance term must be a symmetric p x p matrix")
        self.weighted_sum = self.weighted_sum + m * eta**2 * cov
        self.log.append((len(self.log) + 1, float(eta), float(np.trace(cov))))
        return self

    @property
    def trace(self):
        return float(np.trace(self.weighted_sum))

    def weighted_trace(self, hessian):
        return float(np.sum(np.asarray(hessian) * self.weighted_sum.T))


def accumulate(acc, cov, eta, m=1.0):
    return acc.add(cov, eta, m)
