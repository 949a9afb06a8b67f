"""Numerical checks of the generalization-gap and variability relations.

The central object is the *algorithmic variability*
``V = (1/N) sum_i E_z'[J(A_T(S^i) - A_T(S))]``, estimated by retraining on
single-replacement datasets ``S^i`` while replaying the base run's
mini-batch sequence, so the data is the only thing that changes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import dln, optim, regvar
from .regvar import AccMode, CovarianceAccumulator

UNRELIABLE_EXCLUSION_RATE = 0.05


def _seed(root, *key):
    """Counter-keyed child seed: ``SeedSequence(root, spawn_key=key)``."""
    root = root if isinstance(root, (list, tuple)) else [root]
    return np.random.SeedSequence(list(root), spawn_key=tuple(int(k) for k in key))


@dataclass
class PerturbedFamily:
    """Base dataset plus replacement datasets S^i (``draws`` per index)."""

    base: object
    replacements: list  # (i, replacement label, S^i)
    draws: int

    def __len__(self):
        return len(self.replacements)


def make_family(base, population, draws=3, seed=None, indices=None):
    """Draw ``draws`` replacements z'_i ~ D for each index i.

    ``draws=None`` with a finite population enumerates every candidate
    instead, which makes the expectation over z' exact.
    """
    idx = range(base.n_samples) if indices is None else indices
    reps = []
    if draws is None:
        pool = population.objective()
        for i in idx:
            for j in range(pool.n_samples):
                reps.append((i, j, base.replace(i, pool, j)))
        return PerturbedFamily(base, reps, pool.n_samples)
    rng = np.random.default_rng(seed)
    for i in idx:
        child = int(rng.integers(2**63))
        pool = _draw(population, draws, child)
        for j in range(draws):
            reps.append((i, (child, j), base.replace(i, pool, j)))
    return PerturbedFamily(base, reps, draws)


def _draw(population, n, seed):
    return population.draw(n, seed=seed)


@dataclass
class VariabilityEstimate:
    matrix: np.ndarray
    hessian: np.ndarray
    weighted_trace: float
    weighted_trace_se: float
    solution: np.ndarray
    base: optim.Trajectory
    n_runs: int
    n_excluded: int
    member_iterates: np.ndarray = None
    member_index: np.ndarray = None

    @property
    def exclusion_rate(self):
        return self.n_excluded / max(1, self.n_runs)

    @property
    def reliable(self):
        return self.exclusion_rate <= UNRELIABLE_EXCLUSION_RATE and not self.base.diverged

    @property
    def trace(self):
        return float(np.trace(self.matrix))

    def recomputed_weighted_trace(self):
        return float(np.trace(self.hessian @ self.matrix))


def _variability(deltas, index, n):
    """(1/N) sum_i mean_r J(delta_ir) for deltas grouped by sample index."""
    p = deltas.shape[-1]
    out = np.zeros((p, p))
    for i in np.unique(index):
        d = deltas[index == i]
        out += d.T @ d / d.shape[0]
    out /= n
    return 0.5 * (out + out.T)


def _mc_se(q, index, n):
    """Monte-Carlo error of (1/N) sum_i mean_r q_ir from the within-index spread."""
    var = 0.0
    for i in np.unique(index):
        qi = q[index == i]
        if qi.size < 2:
            return float("nan")
        var += qi.var(ddof=1) / qi.size
    return float(math.sqrt(var) / n)


def retrain_perturbed(model, family, config, theta0, keep_paths=False):
    """Estimate the algorithmic variability of ``config`` started at ``theta0``.

    Every member run reuses the base run's mini-batch sequence and seed.
    Diverged members are dropped and counted.
    """
    base = optim.run(model, config, theta0, diagnostics=False)
    batches = base.batch_indices if config.stochastic else None
    sol = base.final
    finals, index, paths = [], [], []
    excluded = 0
    for i, _, ds in family.replacements:
        tr = optim.run(ds, config, theta0, batches=batches, diagnostics=False)
        if tr.diverged or len(tr.iterates) != len(base.iterates):
            excluded += 1
            continue
        finals.append(tr.final)
        index.append(i)
        if keep_paths:
            paths.append(tr.iterates)
    p = model.dim
    H = model.hessian(sol)
    if finals:
        deltas = np.array(finals) - sol
        index = np.array(index)
        V = _variability(deltas, index, model.n_samples)
        q = np.einsum("ri,ij,rj->r", deltas, H, deltas)
        se = _mc_se(q, index, model.n_samples)
    else:
        V, se, index = np.zeros((p, p)), float("nan"), np.zeros(0, int)
    return VariabilityEstimate(
        matrix=V, hessian=H, weighted_trace=float(np.sum(H * V.T)), weighted_trace_se=se,
        solution=sol, base=base, n_runs=len(family), n_excluded=excluded,
        member_iterates=np.array(paths) if keep_paths and paths else None,
        member_index=index if keep_paths else None,
    )


def variability_path(model, est, steps):
    """Weighted and plain variability traces at iterations ``steps``.

    Requires an estimate made with ``keep_paths=True``.
    """
    if est.member_iterates is None:
        raise ValueError("estimate was made without keep_paths=True")
    out = []
    for t in steps:
        th = est.base.iterates[t]
        deltas = est.member_iterates[:, t] - th
        V = _variability(deltas, est.member_index, model.n_samples)
        H = model.hessian(th)
        out.append((t, float(np.sum(H * V.T)), float(np.trace(V))))
    return out


def population_loss(population, theta):
    if hasattr(population, "population_loss"):
        return float(population.population_loss(theta))
    return float(population.loss(theta))


def empirical_gap(model, population, theta):
    """Population loss minus training loss at ``theta``.

    ``population`` is either a distribution object exposing
    ``population_loss`` or a large held-out objective.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("solution must be finite")
    return population_loss(population, theta) - model.loss(theta)


def is_converged(model, theta, grad_tol):
    g = np.linalg.norm(model.grad(theta))
    return bool(g < grad_tol and np.linalg.eigvalsh(model.hessian(theta)).min() >= 0.0)


def _pearson(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size < 2 or a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def _se(x):
    x = np.asarray(x, float)
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")


def lemma1_check(population, config, theta0s, n_datasets=8, draws=3, seed=0,
                 n_train=None, grad_tol=1e-3):
    """Compare the mean gap at trained solutions with half the
    Hessian-weighted algorithmic variability, dataset by dataset.

    Only base runs that end basin-converged (small full gradient, PSD
    Hessian) contribute.
    """
    if n_datasets < 2:
        raise ValueError("need at least two datasets")
    rows = []
    for d in range(n_datasets):
        S = population.draw(n_train, seed=_seed(seed, d))
        gaps, halves, ses = [], [], []
        kept = excluded = 0
        for g, th0 in enumerate(theta0s):
            cfg = config.with_(seed=_seed(seed, d, g, 0))
            fam = make_family(S, population, draws, seed=_seed(seed, d, g, 1))
            est = retrain_perturbed(S, fam, cfg, th0)
            excluded += est.n_excluded
            if est.base.diverged or not is_converged(S, est.solution, grad_tol):
                continue
            kept += 1
            gaps.append(empirical_gap(S, population, est.solution))
            halves.append(0.5 * est.weighted_trace)
            ses.append(0.5 * est.weighted_trace_se)
        if kept:
            rows.append({
                "dataset": d, "n_runs": kept, "n_member_excluded": excluded,
                "gap": float(np.mean(gaps)), "half_weighted_trace": float(np.mean(halves)),
                "mc_se": float(np.sqrt(np.sum(np.square(ses))) / kept),
            })
    lhs = [r["gap"] for r in rows]
    rhs = [r["half_weighted_trace"] for r in rows]
    return {
        "check": "lemma1",
        "n_datasets": len(rows),
        "lhs_gap_mean": float(np.mean(lhs)) if rows else float("nan"),
        "lhs_se": _se(lhs),
        "rhs_mean": float(np.mean(rhs)) if rows else float("nan"),
        "rhs_se": _se(rhs),
        "rhs_mc_se": float(np.sqrt(np.mean([r["mc_se"] ** 2 for r in rows]))) if rows else float("nan"),
        "pearson": _pearson(lhs, rhs),
        "rows": rows,
    }


def epochs_of(config, n):
    """M in the variability bound; 1 for with-replacement sampling."""
    if config.with_replacement or not config.stochastic:
        return 1
    return math.ceil(config.iterations * config.batch_size / n)


def lemma2_terms(model, population, trajectory, m=None):
    """Population-covariance and SGD-path accumulators along ``trajectory``."""
    cfg = trajectory.config
    if cfg is None or (cfg.stochastic and len(trajectory.batch_indices) != trajectory.n_steps):
        raise ValueError("trajectory lacks the logged mini-batch sequence")
    m = epochs_of(cfg, model.n_samples) if m is None else m
    p = model.dim
    pop_acc = CovarianceAccumulator(p, AccMode.POPULATION)
    path_acc = CovarianceAccumulator(p, AccMode.SGD_PATH)
    for t in range(trajectory.n_steps):
        th = trajectory.iterates[t]
        eta = trajectory.etas[t]
        gd = population.mean_grad(th)
        batch = np.sort(trajectory.batch_indices[t]) if cfg.stochastic else None
        dev = model.grad(th, batch) - gd
        pop_acc.add(population.grad_cov(th), eta, m)
        path_acc.add(np.outer(dev, dev), eta, m)
    return pop_acc, path_acc


def lemma2_check(model, population, estimate, m=None):
    """Hessian-weighted variability against the two accumulated bound terms."""
    base = estimate.base
    H = estimate.hessian
    pop_acc, path_acc = lemma2_terms(model, population, base, m)
    t1 = pop_acc.weighted_trace(H)
    t2 = path_acc.weighted_trace(H)
    lhs = estimate.weighted_trace
    cfg = base.config
    full_batch = (not cfg.stochastic) or cfg.batch_size >= model.n_samples
    return {
        "check": "lemma2",
        "lhs": lhs,
        "term_population": t1,
        "term_sgd_path": t2,
        "rhs": t1 + t2,
        "slack": t1 + t2 - lhs,
        "holds": bool(t1 + t2 >= lhs),
        "epochs": epochs_of(cfg, model.n_samples) if m is None else m,
        "outside_regime": bool(full_batch),
        "reliable": estimate.reliable,
    }


def theorem1_discrepancy(model, population, trajectory):
    """|| sum_t PopCov(theta_{t-1}) - sum_t B * Sigma_B^S(theta_{t-1}) ||_F."""
    B = trajectory.config.batch_size
    total = np.zeros((model.dim, model.dim))
    for th in trajectory.iterates[:-1]:
        gm = regvar.per_sample_grads(model, th)
        total += population.grad_cov(th) - B * regvar.minibatch_cov(gm, B)
    return float(np.linalg.norm(total))


def dln_family(d=10, k=3, noise_std=1.0):
    """Factory: seed -> sparse-regression distribution with a fresh beta."""
    def make(seed):
        rng = np.random.default_rng(seed)
        beta = dln.generate_sparse_data(d, 1, k, seed=rng.integers(2**63)).beta_true
        return dln.SparseRegressionModel(beta, noise_std)
    return make


def theorem1_check(model_family=None, n_grid=(25, 50, 100, 200, 400), T=100, batch_size=5,
                   seeds=10, seed=0, eta=0.01, init_scale=0.5, init=None):
    """Accumulated population vs mini-batch gradient covariance for growing N.

    For each seed one distribution is drawn and datasets are nested prefixes
    of a single sample of size max(N).
    """
    model_family = model_family or dln_family()
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be increasing")
    D = np.zeros((seeds, len(n_grid)))
    for s in range(seeds):
        population = model_family(_seed(seed, s, 0))
        big = population.draw(n_grid[-1], seed=_seed(seed, s, 1))
        if init is None:
            th0 = init_scale * np.random.default_rng(_seed(seed, s, 2)).standard_normal(big.dim)
        else:
            th0 = np.asarray(init, float)
        for j, n in enumerate(n_grid):
            S = big.subset(np.arange(n))
            cfg = optim.OptimizerConfig(
                kind=optim.Kind.SGD, batch_size=batch_size, with_replacement=False,
                schedule=optim.LrSchedule(eta, 1.0), iterations=T, seed=_seed(seed, s, 3, j),
            )
            traj = optim.run(S, cfg, th0, diagnostics=False)
            D[s, j] = theorem1_discrepancy(S, population, traj) if not traj.diverged else np.nan
    med = np.nanmedian(D, axis=0)
    return {
        "check": "theorem1",
        "n_grid": n_grid,
        "median": med.tolist(),
        "discrepancy": D.tolist(),
        "strictly_decreasing": bool(np.all(np.diff(med) < 0)),
    }
