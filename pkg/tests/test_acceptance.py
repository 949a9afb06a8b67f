"""Acceptance suite: one test per criterion, each recording a one-line verdict.

The verdict lines are printed in pytest's terminal summary and also when the
file is run directly (``python tests/test_acceptance.py``).  Worker count for
the heavy experiments comes from ``SGDVAR_WORKERS`` (default: CPU count).
"""

import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from sgdvar import dln, gapcheck, harness, landscape, optim, regvar
from sgdvar.optim import OptimizerConfig
from sgdvar.regvar import GradMatrix

RESULTS = {}
WORKERS = int(os.environ.get("SGDVAR_WORKERS") or os.cpu_count() or 1)


def record(n, name, ok, detail, started):
    RESULTS[n] = f"criterion {n:2d} {name}: {'PASS' if ok else 'FAIL'} ({detail}; {time.time() - started:.1f}s)"
    print(RESULTS[n])
    assert ok, RESULTS[n]


@pytest.fixture(scope="module")
def idealized_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("idealized_a")
    started = time.time()
    cfg = harness.ExperimentConfig(seed=0, workers=WORKERS)
    table, _ = harness.run_idealized(cfg, out=out)
    return cfg, table, out, time.time() - started


def test_criterion_01_table_ordering(idealized_run):
    cfg, table, _, elapsed = idealized_run
    t0 = time.time() - elapsed
    gd, sgd, noisy = (table.mean(k) for k in ("GD", "SGD", "NoisyGD"))
    ok = sgd < noisy < gd and sgd < 0.6 * gd
    record(1, "Table 1 ordering", ok,
           f"excess test loss GD={gd:.4f} NoisyGD={noisy:.4f} SGD={sgd:.4f} SGD/GD={sgd / gd:.3f}", t0)


def test_criterion_02_trace_identity():
    t0 = time.time()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        p = int(rng.integers(1, 257))
        b = int(rng.integers(1, n + 1))
        gm = GradMatrix(rng.standard_normal((n, p)) * rng.lognormal(0, 2))
        lhs = np.trace(regvar.minibatch_cov(gm, b)) * b * n
        rhs = gm.sum_sq_deviation()
        err = abs(lhs - rhs) / rhs if rhs > 0 else abs(lhs)
        worst = max(worst, err)
    record(2, "trace identity", worst <= 1e-12, f"max relative error {worst:.2e} over 1000 instances", t0)


def _fd_grad(f, x):
    g = np.zeros_like(x)
    for k in range(x.size):
        h = 1e-5 * max(1.0, abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return np.linalg.norm(a - b) / scale if scale > 0 else 0.0


def test_criterion_03_regularizer_gradients():
    t0 = time.time()
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(50):
        pop = landscape.generate_population(seed=[3, k])
        S = pop.draw(seed=[4, k])
        th_l = rng.uniform(0, 8, 2)
        d = int(rng.integers(2, 9))
        D = dln.generate_sparse_data(d, int(rng.integers(4, 13)), int(rng.integers(1, d + 1)), seed=[5, k])
        th_d = rng.standard_normal(D.dim)
        for model, th in ((S, th_l), (D, th_d)):
            batch = rng.integers(model.n_samples, size=int(rng.integers(1, model.n_samples + 1)))
            worst = max(worst, _rel(regvar.reg1(model, th).grad, _fd_grad(lambda x: regvar.reg1(model, x).value, th)))
            for omit in (False, True):
                f = lambda x: regvar.reg2(model, batch, x, omit_batch_grad=omit).value
                worst = max(worst, _rel(regvar.reg2(model, batch, th, omit).grad, _fd_grad(f, th)))
    record(3, "regularizer gradients", worst <= 1e-5,
           f"max relative error {worst:.2e} over 50 landscape + 50 DLN instances", t0)


def test_criterion_04_bootstrap_convergence():
    t0 = time.time()
    rng = np.random.default_rng(4)
    K = 100_000
    worst = 0.0
    for k in range(20):
        n = int(rng.integers(2, 41))
        p = int(rng.integers(1, 9))
        b = int(rng.integers(1, n + 1))
        gm = GradMatrix(rng.standard_normal((n, p)))
        target = regvar.minibatch_cov(gm, b)
        boot = regvar.bootstrap_cov(gm, b, K, rng=[4, k])
        worst = max(worst, np.linalg.norm(boot - target) / (5 * np.linalg.norm(target) / np.sqrt(K)))
    record(4, "bootstrap convergence", worst <= 1.0,
           f"max distance / (5 |Sigma|_F / sqrt(K)) = {worst:.3f} over 20 instances", t0)


def test_criterion_05_theorem1_convergence():
    t0 = time.time()
    rep = gapcheck.theorem1_check(n_grid=(25, 50, 100, 200, 400), seeds=10, seed=[0, 5])
    med = ", ".join(f"{m:.1f}" for m in rep["median"])
    record(5, "Theorem 1 N-convergence", rep["strictly_decreasing"], f"median D_N = [{med}]", t0)


def test_criterion_06_lemma1_decomposition():
    t0 = time.time()
    rep = harness.lemma1_report(harness.ExperimentConfig())
    v = harness.lemma1_verdict(rep)
    record(6, "Lemma 1 decomposition", v["pass"],
           f"gap={rep['lhs_gap_mean']:.4f} half weighted variability={rep['rhs_mean']:.4f} "
           f"pearson={rep['pearson']:.3f} datasets={rep['n_datasets']}", t0)


def test_criterion_07_lemma2_bound():
    t0 = time.time()
    reps = harness.lemma2_seeds(harness.ExperimentConfig())
    frac = float(np.mean([r["holds"] for r in reps]))
    record(7, "Lemma 2 bound", frac >= 0.9 and len(reps) == 20,
           f"RHS >= LHS in {sum(r['holds'] for r in reps)}/{len(reps)} seeds", t0)


def test_criterion_08_dln_ratios(tmp_path):
    t0 = time.time()
    cfg = harness.ExperimentConfig(experiment="dln-sweep", workers=WORKERS)
    table = harness.run_dln_sweep(cfg, out=tmp_path)
    positive = sorted({r["lambda1"] for r in table if r["lambda1"] > 0})
    mid = positive[1:-1] if len(positive) > 2 else positive
    families = sorted({r["ratio_family"] for r in table})
    dips = {f: any(r["mean_ratio"] < 1 for r in table if r["ratio_family"] == f and r["lambda1"] in mid)
            for f in families}
    summary = harness.summarize_ratios(table)
    best0, best05 = summary[0.0]["best_ratio"], summary[0.5]["best_ratio"]
    improvement = 1 - best05 / best0
    ok = all(dips.values()) and 0.07 <= improvement <= 0.28
    record(8, "DLN ratio behavior", ok,
           f"families below 1 at mid-range lambda1: {sum(dips.values())}/{len(dips)}; "
           f"best ratio lambda2=0 {best0:.3f}, lambda1/lambda2=0.5 {best05:.3f}, improvement {improvement:.1%}", t0)


def test_criterion_09_degenerate_equivalences():
    t0 = time.time()
    pop = landscape.generate_population(seed=9)
    S = pop.draw(seed=10)
    D = dln.generate_sparse_data(8, 12, 2, seed=11)
    checks = []
    for model, th0 in ((S, np.array([2.0, 5.0])), (D, dln.init_params(8, 0.3, seed=12))):
        N = model.n_samples
        gd = optim.run(model, OptimizerConfig(kind="GD", iterations=50, seed=1), th0)
        full = optim.run(model, OptimizerConfig(kind="SGD", batch_size=N, with_replacement=False,
                                                iterations=50, seed=1), th0)
        noisy = optim.run(model, OptimizerConfig(kind="NoisyGD", noise_std=0.0, iterations=50, seed=1), th0)
        sgd = optim.run(model, OptimizerConfig(kind="SGD", batch_size=3, iterations=50, seed=7), th0)
        reg = optim.run(model, OptimizerConfig(kind="SGDwReg", batch_size=3, iterations=50, seed=7), th0)
        checks += [np.array_equal(gd.iterates, full.iterates), np.array_equal(gd.iterates, noisy.iterates),
                   np.array_equal(sgd.iterates, reg.iterates)]
    record(9, "degenerate equivalences", all(checks), f"{sum(checks)}/{len(checks)} bitwise matches", t0)


def test_criterion_10_determinism(idealized_run, tmp_path):
    cfg, _, first, _ = idealized_run
    t0 = time.time()
    other = 1 if WORKERS > 1 else 2
    harness.run_idealized(dataclasses.replace(cfg, workers=other), out=tmp_path)
    names = sorted(p.name for p in first.iterdir())
    same = [n for n in names if (first / n).read_bytes() == (tmp_path / n).read_bytes()]
    record(10, "determinism", len(same) == len(names) and sorted(p.name for p in tmp_path.iterdir()) == names,
           f"{len(same)}/{len(names)} files byte-identical (workers {cfg.workers} vs {other})", t0)


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", *sys.argv[1:]])
    print("\n".join(RESULTS[k] for k in sorted(RESULTS)))
    sys.exit(code)
