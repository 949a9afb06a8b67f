"""Common interface for finite-sum objectives.

An objective is an average of per-sample losses ``L(z_i; theta)``.  Subclasses
provide the per-sample primitives; batch quantities are plain averages of them
so that a full batch and ``idx=arange(N)`` go through identical arithmetic.
"""

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient evaluation produces inf/nan."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class Objective:
    """Finite average of per-sample losses over ``n_samples`` samples.

    Subclasses implement ``sample_losses``, ``sample_grads``, ``sample_hvps``
    and optionally ``sample_hessians``.  ``idx`` selects samples (repetition
    allowed); ``None`` means all of them in order.
    """

    n_samples: int
    dim: int

    def _idx(self, idx):
        if idx is None:
            return np.arange(self.n_samples)
        idx = np.asarray(idx, dtype=np.intp)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("idx must be a non-empty 1-d index array")
        if idx.min() < 0 or idx.max() >= self.n_samples:
            raise IndexError("sample index out of range")
        return idx

    # per-sample primitives -------------------------------------------------
    def sample_losses(self, theta, idx=None):
        raise NotImplementedError

    def sample_grads(self, theta, idx=None):
        raise NotImplementedError

    def sample_hvps(self, theta, vecs, idx=None):
        """Row-wise Hessian-vector products ``H_i v_i``.

        ``vecs`` is either one vector (applied to every sample) or an array
        with one row per selected sample.
        """
        raise NotImplementedError

    def sample_hessians(self, theta, idx=None):
        idx = self._idx(idx)
        eye = np.eye(self.dim)
        cols = [self.sample_hvps(theta, e, idx) for e in eye]
        return np.stack(cols, axis=-1)

    # batch averages ----------------------------------------------------------
    def loss(self, theta, idx=None):
        return float(np.mean(self.sample_losses(theta, idx)))

    def grad(self, theta, idx=None):
        return self.sample_grads(theta, idx).mean(axis=0)

    def hvp(self, theta, v, idx=None):
        return self.sample_hvps(theta, v, idx).mean(axis=0)

    def hessian(self, theta, idx=None):
        return self.sample_hessians(theta, idx).mean(axis=0)

    def subset(self, idx):
        """Objective restricted to (a multiset of) the samples in ``idx``."""
        raise NotImplementedError

    def replace(self, i, source, j):
        """Copy of this objective with sample ``i`` replaced by sample ``j`` of ``source``."""
        raise NotImplementedError
