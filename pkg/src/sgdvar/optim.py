"""GD, SGD, NoisyGD and SGD with the variability regularizers.

All optimizers work on any :class:`~sgdvar.objective.Objective`.  The
degenerate configurations (full-batch SGD, zero-noise NoisyGD, zero-strength
regularized SGD) route through exactly the same arithmetic as their simpler
counterparts so that trajectories agree bitwise.
"""

import csv
import io
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import regvar
from .objective import NonFiniteError


class Kind(str, Enum):
    GD = "GD"
    SGD = "SGD"
    NOISY_GD = "NoisyGD"
    SGD_REG = "SGDwReg"


@dataclass(frozen=True)
class LrSchedule:
    eta0: float = 0.4
    decay: float = 0.99
    per_epoch: bool = False

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    def eta(self, step, steps_per_epoch=1):
        """Learning rate used by the ``step``-th update (0-based)."""
        k = step // steps_per_epoch if self.per_epoch else step
        return self.eta0 * self.decay**k


@dataclass(frozen=True)
class OptimizerConfig:
    kind: Kind = Kind.SGD
    batch_size: int = 1
    with_replacement: bool = True
    noise_std: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    omit_batch_grad: bool = False
    # Reg2 reference = mean of the previous k mini-batch gradients (None: exact)
    trailing_k: int = None
    clip_norm: float = None
    schedule: LrSchedule = field(default_factory=LrSchedule)
    iterations: int = 200
    seed: object = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.noise_std < 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("noise_std and regularizer strengths must be >= 0")
        if self.kind is not Kind.SGD_REG and (self.lambda1 or self.lambda2):
            raise ValueError("regularizer strengths require kind=SGDwReg")
        if self.kind is not Kind.NOISY_GD and self.noise_std:
            raise ValueError("noise_std is only used by NoisyGD")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.trailing_k is not None and self.trailing_k < 1:
            raise ValueError("trailing_k must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    @property
    def stochastic(self):
        return self.kind in (Kind.SGD, Kind.SGD_REG)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class Trajectory:
    """Recorded run: iterates theta_0..theta_T, mini-batches j_t, diagnostics."""

    iterates: np.ndarray
    batch_indices: list
    etas: np.ndarray
    diagnostics: dict
    config: OptimizerConfig
    diverged: bool = False
    message: str = ""

    @property
    def final(self):
        return self.iterates[-1]

    @property
    def n_steps(self):
        return len(self.iterates) - 1

    def to_csv(self):
        """CSV text with columns iter, theta_0.., train_loss, grad_norm, reg1, reg2."""
        p = self.iterates.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", *[f"theta_{k}" for k in range(p)], "train_loss", "grad_norm", "reg1", "reg2"])
        d = self.diagnostics
        for t, th in enumerate(self.iterates):
            row = [t, *(repr(float(x)) for x in th)]
            for key in ("train_loss", "grad_norm", "reg1", "reg2"):
                col = d.get(key)
                row.append(repr(float(col[t])) if col is not None and t < len(col) else "")
            w.writerow(row)
        return buf.getvalue()

    def save_npz(self, path):
        bi = np.array([np.asarray(b) for b in self.batch_indices]) if self.batch_indices else np.zeros((0, 0), int)
        np.savez(
            path, iterates=self.iterates, etas=self.etas, batch_indices=bi,
            diverged=self.diverged, **{f"diag_{k}": v for k, v in self.diagnostics.items()},
        )

    @staticmethod
    def load_npz(path, config=None):
        with np.load(path) as z:
            diag = {k[5:]: z[k] for k in z.files if k.startswith("diag_")}
            return Trajectory(
                iterates=z["iterates"], batch_indices=list(z["batch_indices"]), etas=z["etas"],
                diagnostics=diag, config=config, diverged=bool(z["diverged"]),
            )


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {what}")


def _clip(g, clip_norm):
    if clip_norm is None:
        return g
    n = np.linalg.norm(g)
    return g * (clip_norm / n) if n > clip_norm else g


def step_gd(model, theta, eta, clip_norm=None):
    """Full-batch gradient step."""
    g = model.grad(theta)
    _check_finite(g, "gradient")
    return theta - eta * _clip(g, clip_norm)


def step_sgd(model, theta, eta, batch, clip_norm=None):
    """Mini-batch step; the batch is averaged in sorted index order."""
    g = model.grad(theta, np.sort(batch))
    _check_finite(g, "gradient")
    return theta - eta * _clip(g, clip_norm)


def step_noisygd(model, theta, eta, noise_std, rng, clip_norm=None):
    """Gradient step with isotropic Gaussian noise added to the full gradient."""
    g = model.grad(theta)
    _check_finite(g, "gradient")
    if noise_std > 0:
        g = g + noise_std * rng.standard_normal(g.shape)
    return theta - eta * _clip(g, clip_norm)


def step_sgd_reg(
    model, theta, eta, batch, lambda1, lambda2, omit_batch_grad=False,
    ref_grad=None, clip_norm=None, info=None,
):
    """Mini-batch step on ``L(S_batch) + lambda1*Reg1 + lambda2*Reg2``.

    ``ref_grad`` replaces the full-batch gradient inside Reg2 (used for the
    trailing-average approximation).  If ``info`` is a dict, the unscaled
    regularizer values are stored in it.
    """
    batch = np.sort(batch)
    g = model.grad(theta, batch)
    _check_finite(g, "gradient")
    if lambda1 == 0 and lambda2 == 0:
        return theta - eta * _clip(g, clip_norm)
    total = g
    if lambda1 > 0:
        r1 = regvar.reg1(model, theta)
        total = total + lambda1 * r1.grad
        if info is not None:
            info["reg1"] = r1.value
    if lambda2 > 0:
        r2 = regvar.reg2(model, batch, theta, omit_batch_grad=omit_batch_grad, ref_grad=ref_grad)
        total = total + lambda2 * r2.grad
        if info is not None:
            info["reg2"] = r2.value
    _check_finite(total, "regularized gradient")
    return theta - eta * _clip(total, clip_norm)


class BatchSampler:
    """Draws mini-batch index arrays; without replacement it walks epoch permutations."""

    def __init__(self, n, batch_size, with_replacement, rng):
        if batch_size > n and not with_replacement:
            raise ValueError("batch_size exceeds dataset size")
        if not with_replacement and n % batch_size:
            raise ValueError("without-replacement sampling needs batch_size to divide N")
        self.n, self.b, self.wr, self.rng = n, batch_size, with_replacement, rng
        self._perm = None
        self._pos = 0

    @property
    def steps_per_epoch(self):
        return self.n // self.b if not self.wr else max(1, self.n // self.b)

    def __call__(self):
        if self.wr:
            return self.rng.integers(self.n, size=self.b)
        if self._perm is None or self._pos >= self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        out = self._perm[self._pos:self._pos + self.b]
        self._pos += self.b
        return out


def batch_sequence(n, config):
    """The j_t sequence a stochastic run with ``config`` would use on N=n samples."""
    rng = np.random.default_rng(config.seed)
    sampler = BatchSampler(n, config.batch_size, config.with_replacement, rng)
    return [sampler() for _ in range(config.iterations)]


def run(model, config, theta0, batches=None, diagnostics=True):
    """Run ``config.iterations`` steps from ``theta0``.

    ``batches`` pins the mini-batch sequence (used to replay the base run's
    j_t on perturbed data); otherwise it is drawn from ``config.seed``.
    Non-finite values end the run with ``diverged=True``.
    """
    cfg = config
    theta = np.array(theta0, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    n = model.n_samples
    sampler = None
    if cfg.stochastic and batches is None:
        sampler = BatchSampler(n, cfg.batch_size, cfg.with_replacement, rng)
    spe = n // cfg.batch_size if cfg.stochastic else 1
    iterates = [theta]
    used = []
    etas = []
    diag = {"train_loss": [], "grad_norm": [], "reg1": [], "reg2": []}
    trailing = deque(maxlen=cfg.trailing_k) if cfg.trailing_k else None

    def record(th):
        if diagnostics:
            diag["train_loss"].append(model.loss(th))
            diag["grad_norm"].append(float(np.linalg.norm(model.grad(th))))

    diverged, message = False, ""
    # overflow is expected on divergent runs and handled below
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            record(theta)
            for t in range(cfg.iterations):
                eta = cfg.schedule.eta(t, spe)
                info = {}
                if cfg.kind is Kind.GD:
                    theta = step_gd(model, theta, eta, cfg.clip_norm)
                elif cfg.kind is Kind.NOISY_GD:
                    theta = step_noisygd(model, theta, eta, cfg.noise_std, rng, cfg.clip_norm)
                else:
                    batch = np.asarray(batches[t] if batches is not None else sampler())
                    used.append(batch)
                    if cfg.kind is Kind.SGD:
                        theta = step_sgd(model, theta, eta, batch, cfg.clip_norm)
                    else:
                        ref = None
                        if trailing is not None:
                            ref = np.mean(trailing, axis=0) if trailing else model.grad(theta, np.sort(batch))
                            trailing.append(model.grad(theta, np.sort(batch)))
                        theta = step_sgd_reg(
                            model, theta, eta, batch, cfg.lambda1, cfg.lambda2,
                            cfg.omit_batch_grad, ref, cfg.clip_norm, info,
                        )
                _check_finite(theta, "iterate")
                etas.append(eta)
                iterates.append(theta)
                diag["reg1"].append(info.get("reg1", np.nan))
                diag["reg2"].append(info.get("reg2", np.nan))
                record(theta)
                if diagnostics and not np.isfinite(diag["train_loss"][-1]):
                    raise NonFiniteError("non-finite training loss")
        except NonFiniteError as exc:
            diverged, message = True, str(exc)

    # reg values belong to the step that starts at iterate t; pad the last row
    diag["reg1"].append(np.nan)
    diag["reg2"].append(np.nan)
    diag = {k: np.asarray(v, dtype=float) for k, v in diag.items() if diagnostics or k.startswith("reg")}
    return Trajectory(
        iterates=np.array(iterates), batch_indices=used, etas=np.asarray(etas, dtype=float),
        diagnostics=diag, config=cfg, diverged=diverged, message=message,
    )


def calibrate_noise_std(model, theta0s, batch_size=1, n_iter=10, schedule=None):
    """Noise std whose injected trace p*sigma^2 matches SGD's mini-batch
    gradient-covariance trace averaged over the first ``n_iter`` GD iterates."""
    schedule = schedule or LrSchedule()
    traces = []
    for th0 in theta0s:
        th = np.array(th0, dtype=float)
        for t in range(n_iter):
            traces.append(regvar.minibatch_cov_trace(regvar.per_sample_grads(model, th), batch_size))
            th = step_gd(model, th, schedule.eta(t))
    return float(np.sqrt(np.mean(traces) / model.dim))
