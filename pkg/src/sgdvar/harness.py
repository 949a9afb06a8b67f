"""Experiment orchestration: configuration, seeding, worker pool and file outputs.

Every random quantity is keyed by ``[master_seed, stage, *counters]`` and fed
to :func:`numpy.random.default_rng`, so results never depend on execution
order or on the number of workers.  Work items are mapped in order and
aggregated single-threaded.
"""

import csv
import dataclasses
import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__, dln, gapcheck, landscape, optim, regvar

# seed stages
POPULATION, DATASET, RUN, PREPASS, FAMILY = 0, 1, 2, 3, 4
DLN_DATA, DLN_TEST, DLN_INIT, DLN_RUN = 10, 11, 12, 13
THEORY = 20

ALGORITHMS = ("GD", "SGD", "NoisyGD")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 3)."""


class InvariantError(RuntimeError):
    """A hard invariant failed (CLI exit code 2)."""


class Experiment(str, Enum):
    IDEALIZED = "idealized"
    ALGVAR = "algvar"
    DLN_SWEEP = "dln-sweep"
    THEORY = "theory-check"
    GEN_POPULATION = "gen-population"


@dataclass
class PopulationSpec:
    rho: float = 0.35
    n_candidates: int = landscape.N_CANDIDATES
    height_dist: tuple = landscape.HEIGHT_DIST
    width_dist: tuple = landscape.WIDTH_DIST
    anchor_height_dist: tuple = landscape.ANCHOR_HEIGHT_DIST
    anchor_width_dist: tuple = landscape.ANCHOR_WIDTH_DIST

    def build(self, seed):
        return landscape.generate_population(
            seed, rho=self.rho, height_dist=self.height_dist, width_dist=self.width_dist,
            n_candidates=self.n_candidates, anchor_height_dist=self.anchor_height_dist,
            anchor_width_dist=self.anchor_width_dist,
        )


@dataclass
class IdealizedSpec:
    n_sets: int = 10
    train_size: int = 30
    grid_size: int = 10
    iterations: int = 200
    eta0: float = 0.4
    decay: float = 0.99
    batch_size: int = 1
    calibration_iters: int = 10
    heat_sets: tuple = (0,)
    heat_resolution: int = 160

    def grid(self):
        ax = np.linspace(landscape.DOMAIN[0], landscape.DOMAIN[1], self.grid_size)
        return np.array([(x, y) for x in ax for y in ax])

    def schedule(self):
        return optim.LrSchedule(self.eta0, self.decay)


@dataclass
class AlgVarSpec:
    set_index: int = 0
    init_indices: tuple = None  # pinned grid indices; None = pre-pass pick
    draws: int = 3
    reg_lambda2: float = 0.01
    checkpoint_every: int = 10


@dataclass
class DlnSpec:
    d: int = 100
    n_train: int = 40
    k: int = 5
    noise_std: float = 1.0
    n_test: int = 1000
    n_datasets: int = 4
    n_inits: int = 3
    n_runs: int = 4
    init_scale: float = 0.5
    eta: float = 0.01
    epochs: int = 200
    batch_size: int = 4
    lambda1_grid: tuple = (0.0, 0.01, 0.03, 0.1, 0.3, 0.5)
    ratios: tuple = (0.5, 1.0, 2.0, 3.0, 4.0)


@dataclass
class TheorySpec:
    lemma1_datasets: int = 8
    lemma1_draws: int = 3
    lemma1_grid: int = 4
    lemma1_grad_tol: float = 1e-3
    lemma1_kind: str = "GD"
    lemma2_seeds: int = 20
    lemma2_eta0: float = 0.05
    lemma2_epochs: int = 7
    lemma2_draws: int = 3
    theorem1_grid: tuple = (25, 50, 100, 200, 400)
    theorem1_seeds: int = 10
    theorem1_steps: int = 100
    theorem1_batch: int = 5
    invariant_instances: int = 200


@dataclass
class ExperimentConfig:
    experiment: Experiment = Experiment.IDEALIZED
    seed: int = 0
    workers: int = 1
    out: str = "out"
    population: PopulationSpec = field(default_factory=PopulationSpec)
    idealized: IdealizedSpec = field(default_factory=IdealizedSpec)
    algvar: AlgVarSpec = field(default_factory=AlgVarSpec)
    dln: DlnSpec = field(default_factory=DlnSpec)
    theory: TheorySpec = field(default_factory=TheorySpec)

    def __post_init__(self):
        try:
            self.experiment = Experiment(self.experiment)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        p, ide, dl = self.population, self.idealized, self.dln
        if not 0 <= p.rho <= 1:
            raise ConfigError("rho must lie in [0, 1]")
        if min(ide.n_sets, ide.train_size, ide.grid_size, ide.heat_resolution) < 1 or ide.iterations < 0:
            raise ConfigError("idealized sizes must be positive")
        if any(not 0 <= s < ide.n_sets for s in ide.heat_sets):
            raise ConfigError("heat_sets must index training sets")
        if dl.n_train % dl.batch_size:
            raise ConfigError("dln batch_size must divide n_train")
        if min(dl.n_datasets, dl.n_inits, dl.n_runs) < 1:
            raise ConfigError("dln replication counts must be positive")
        if any(r <= 0 for r in dl.ratios):
            raise ConfigError("lambda ratios must be positive")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a table")
        doc = dict(doc)
        kw = {}
        try:
            for f in dataclasses.fields(cls):
                if f.name not in doc:
                    continue
                val = doc.pop(f.name)
                if dataclasses.is_dataclass(f.default_factory):
                    kw[f.name] = _section(f.default_factory, val, f.name)
                else:
                    kw[f.name] = val
            if doc:
                raise ConfigError(f"unknown config keys: {sorted(doc)}")
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["experiment"] = self.experiment.value
        return d


def _section(factory, val, name):
    if not isinstance(val, dict):
        raise ConfigError(f"section {name!r} must be a table")
    names = {f.name: f for f in dataclasses.fields(factory)}
    unknown = set(val) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    defaults = factory()
    kw = {}
    for k, v in val.items():
        if isinstance(getattr(defaults, k), tuple) or (isinstance(v, list) and getattr(defaults, k) is None):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v) if v is not None else None
        kw[k] = v
    return factory(**kw)


def load_config(path):
    """Read a JSON or TOML experiment config."""
    path = Path(path)
    try:
        if path.suffix == ".toml":
            try:
                import tomllib
            except ImportError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        else:
            with open(path) as fh:
                doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(doc)


# -- shared plumbing -----------------------------------------------------------

def _pool_map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
            cwd=Path(__file__).parent, timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _write_manifest(out, cfg, files, extra=None):
    doc = {
        "package": "sgdvar",
        "version": __version__,
        "build": _git_describe(),
        "experiment": cfg.experiment.value,
        "master_seed": cfg.seed,
        "seed_derivation": "default_rng([master_seed, stage, *counters])",
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("workers", "out")},
        "files": sorted(files),
    }
    if extra:
        doc.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])


def _outdir(cfg, out):
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- idealized experiment ----------------------------------------------------

@dataclass
class AggregateTable:
    """Per-algorithm test-loss summary with the raw per-cell values kept."""

    rows: list  # dicts: algorithm, mean, mean_excess, std_cells, std_sets, n, n_excluded
    cells: list  # dicts: set, init, algorithm, ..., test_loss, excess, diverged

    def mean(self, algorithm, excess=True):
        return next(r["mean_excess" if excess else "mean"] for r in self.rows if r["algorithm"] == algorithm)


@dataclass
class HeatGrid:
    resolution: tuple
    extent: tuple
    channels: dict
    outside: dict  # algorithm -> iterates that fell outside the extent
    n_recorded: dict  # algorithm -> total recorded iterates

    def centers(self):
        nx, ny = self.resolution
        lo, hi = self.extent
        xs = lo + (np.arange(nx) + 0.5) * (hi - lo) / nx
        ys = lo + (np.arange(ny) + 0.5) * (hi - lo) / ny
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)


def prepare_set(cfg, s):
    """Population, training set, calibrated NoisyGD std and minimum for set ``s``."""
    ide = cfg.idealized
    pop = cfg.population.build([cfg.seed, POPULATION, s])
    S = landscape.sample_training_set(pop, [cfg.seed, DATASET, s], ide.train_size)
    sigma = optim.calibrate_noise_std(S, ide.grid(), ide.batch_size, ide.calibration_iters, ide.schedule())
    _, floor = pop.minimum()
    return pop, S, sigma, floor


def algorithm_config(cfg, kind, sigma, s, g, **kw):
    ide = cfg.idealized
    return optim.OptimizerConfig(
        kind=kind, batch_size=ide.batch_size, noise_std=sigma if kind == "NoisyGD" else 0.0,
        schedule=ide.schedule(), iterations=ide.iterations, seed=[cfg.seed, RUN, s, g], **kw,
    )


def _idealized_item(args):
    cfg, s, g, S, sigma, keep = args
    th0 = cfg.idealized.grid()[g]
    out = []
    for kind in ALGORITHMS:
        tr = optim.run(S, algorithm_config(cfg, kind, sigma, s, g), th0, diagnostics=False)
        out.append((kind, tr.final, tr.diverged, tr.iterates if keep else None))
    return s, g, out


def heat_grid(pop, S, paths, resolution=160, extent=landscape.DOMAIN):
    """Landscape channels on the cell-centre mesh plus trajectory densities."""
    grid = HeatGrid((resolution, resolution), tuple(extent), {}, {}, {})
    pts = grid.centers()
    grads = S.grads_at(pts)
    mean_g = grads.mean(axis=-2)
    dev = grads - mean_g[..., None, :]
    ch = grid.channels
    ch["population_loss"] = pop.values_at(pts).mean(axis=-1)
    ch["training_loss"] = S.values_at(pts)
    ch["grad_norm"] = np.linalg.norm(mean_g, axis=-1)
    ch["grad_cov_trace"] = np.sum(dev * dev, axis=(-1, -2)) / S.n_samples
    lo, hi = extent
    for kind, iters in paths.items():
        pts_k = np.concatenate(iters) if iters else np.zeros((0, 2))
        inside = np.all((pts_k >= lo) & (pts_k <= hi), axis=1)
        h, _, _ = np.histogram2d(pts_k[inside, 0], pts_k[inside, 1], bins=resolution, range=[extent, extent])
        ch[f"density_{kind}"] = h
        grid.outside[kind] = int((~inside).sum())
        grid.n_recorded[kind] = int(len(pts_k))
    return grid


def write_heat_grid(path, grid):
    names = list(grid.channels)
    flat = grid.centers().reshape(-1, 2)
    cols = [grid.channels[n].reshape(-1) for n in names]
    rows = ([flat[r, 0], flat[r, 1], *(c[r] for c in cols)] for r in range(flat.shape[0]))
    _write_csv(path, ["x", "y", *names], rows)


def run_idealized(cfg, out=None):
    """Test losses of GD, SGD and NoisyGD over training sets and the init grid.

    Test loss is the population loss at the final iterate; ``excess`` is that
    minus the population's global minimum.
    """
    out = _outdir(cfg, out)
    ide = cfg.idealized
    prepared = [prepare_set(cfg, s) for s in range(ide.n_sets)]
    items = [
        (cfg, s, g, prepared[s][1], prepared[s][2], s in ide.heat_sets)
        for s in range(ide.n_sets) for g in range(ide.grid_size**2)
    ]
    results = sorted(_pool_map(_idealized_item, items, cfg.workers), key=lambda r: (r[0], r[1]))
    grid0 = ide.grid()
    cells = []
    paths = {s: {k: [] for k in ALGORITHMS} for s in ide.heat_sets}
    for s, g, per_alg in results:
        pop, _, sigma, floor = prepared[s]
        for kind, final, diverged, iters in per_alg:
            loss = pop.population_loss(final) if not diverged else np.nan
            cells.append({
                "set": s, "init": g, "algorithm": kind, "theta0_x": grid0[g, 0], "theta0_y": grid0[g, 1],
                "final_x": final[0], "final_y": final[1], "test_loss": loss,
                "excess": loss - floor, "diverged": diverged,
            })
            if iters is not None:
                paths[s][kind].append(iters)
    table = aggregate(cells, ide.n_sets)
    files = ["table.csv", "cells.csv", "sets.csv"]
    _write_csv(out / "table.csv", ["algorithm", "mean_test_loss", "mean_excess", "std_cells", "std_sets", "n", "n_excluded"],
               [[r["algorithm"], r["mean"], r["mean_excess"], r["std_cells"], r["std_sets"], r["n"], r["n_excluded"]]
                for r in table.rows])
    keys = ["set", "init", "algorithm", "theta0_x", "theta0_y", "final_x", "final_y", "test_loss", "excess", "diverged"]
    _write_csv(out / "cells.csv", keys, [[c[k] for k in keys] for c in cells])
    _write_csv(out / "sets.csv", ["set", "noise_std", "population_minimum", "n_peaks"],
               [[s, p[2], p[3], p[0].n_peaks] for s, p in enumerate(prepared)])
    heat = {}
    for s in ide.heat_sets:
        pop, S, _, _ = prepared[s]
        heat[s] = heat_grid(pop, S, paths[s], ide.heat_resolution)
        name = f"heat_set{s}.csv"
        write_heat_grid(out / name, heat[s])
        files.append(name)
    _write_manifest(out, cfg, files + ["manifest.json"], {
        "heat_outside": {str(s): h.outside for s, h in heat.items()},
    })
    return table, heat


def aggregate(cells, n_sets):
    rows = []
    for kind in ALGORITHMS:
        mine = [c for c in cells if c["algorithm"] == kind]
        ok = [c for c in mine if not c["diverged"] and np.isfinite(c["test_loss"])]
        raw = np.array([c["test_loss"] for c in ok])
        exc = np.array([c["excess"] for c in ok])
        per_set = [np.mean([c["excess"] for c in ok if c["set"] == s]) for s in range(n_sets)
                   if any(c["set"] == s for c in ok)]
        rows.append({
            "algorithm": kind,
            "mean": float(raw.mean()) if raw.size else np.nan,
            "mean_excess": float(exc.mean()) if exc.size else np.nan,
            "std_cells": float(exc.std(ddof=1)) if exc.size > 1 else np.nan,
            "std_sets": float(np.std(per_set, ddof=1)) if len(per_set) > 1 else np.nan,
            "n": int(raw.size),
            "n_excluded": len(mine) - len(ok),
        })
    return AggregateTable(rows, cells)


# -- generalization-gap trajectories -----------------------------------------

def _algvar_configs(cfg, sigma, s, g):
    av = cfg.algvar
    base = {k: algorithm_config(cfg, k, sigma, s, g) for k in ALGORITHMS}
    base["SGDwReg2"] = algorithm_config(cfg, "SGDwReg", 0.0, s, g, lambda2=av.reg_lambda2)
    return base


def pick_inits(cfg, pop, S, sigma, floor):
    """One initialization where SGD generalizes well and one where it does not."""
    av = cfg.algvar
    if av.init_indices is not None:
        return list(av.init_indices)
    grid = cfg.idealized.grid()
    exc = []
    for g, th0 in enumerate(grid):
        tr = optim.run(S, algorithm_config(cfg, "SGD", 0.0, av.set_index, g), th0, diagnostics=False)
        exc.append(np.inf if tr.diverged else pop.population_loss(tr.final) - floor)
    exc = np.array(exc)
    finite = np.isfinite(exc)
    good = int(np.argmin(exc))
    bad = int(np.flatnonzero(finite)[np.argmax(exc[finite])])
    return [good, bad]


def _algvar_item(args):
    cfg, s, g, pop, S, sigma, name, ocfg = args
    av = cfg.algvar
    th0 = cfg.idealized.grid()[g]
    fam = gapcheck.make_family(S, pop, av.draws, seed=[cfg.seed, FAMILY, s, g])
    est = gapcheck.retrain_perturbed(S, fam, ocfg, th0, keep_paths=True)
    T = est.base.n_steps
    checkpoints = [t for t in range(1, T + 1) if t % av.checkpoint_every == 0 or t == T]
    var = {t: (w, tr) for t, w, tr in gapcheck.variability_path(S, est, checkpoints)}
    rows = []
    for t in range(1, T + 1):
        th = est.base.iterates[t]
        w, tr = var.get(t, (np.nan, np.nan))
        test = pop.population_loss(th)
        rows.append((test - S.loss(th), w, tr, test))
    return g, name, rows, est.n_excluded, est.n_runs


def run_algvar_trajectories(cfg, out=None, prepared=None):
    """Per-iteration generalization gap and variability traces for each algorithm.

    Writes ``algvar_init<g>.csv`` with columns ``<alg>_gap``,
    ``<alg>_var_weighted``, ``<alg>_var_trace`` and ``<alg>_test_loss``;
    variability columns are filled at checkpoint iterations only.
    ``prepared`` pins (population, training set, noise std, floor) instead of
    generating them from the config.
    """
    out = _outdir(cfg, out)
    s = cfg.algvar.set_index
    pop, S, sigma, floor = prepare_set(cfg, s) if prepared is None else prepared
    inits = pick_inits(cfg, pop, S, sigma, floor)
    items = [
        (cfg, s, g, pop, S, sigma, name, oc)
        for g in inits for name, oc in _algvar_configs(cfg, sigma, s, g).items()
    ]
    res = _pool_map(_algvar_item, items, cfg.workers)
    names = list(_algvar_configs(cfg, sigma, s, 0))
    summary = {"set": s, "inits": inits, "final": {}}
    files = []
    for g in inits:
        per = {name: rows for gg, name, rows, _, _ in res if gg == g}
        T = len(next(iter(per.values())))
        header = ["iter"] + [f"{n}_{c}" for n in names for c in ("gap", "var_weighted", "var_trace", "test_loss")]
        body = [[t + 1, *(v for n in names for v in per[n][t])] for t in range(T)]
        fname = f"algvar_init{g}.csv"
        _write_csv(out / fname, header, body)
        files.append(fname)
        summary["final"][str(g)] = {
            n: {"gap": per[n][-1][0], "var_weighted": per[n][-1][1], "var_trace": per[n][-1][2]} for n in names
        }
    summary["excluded"] = {f"{g}:{n}": [e, r] for g, n, _, e, r in res}
    with open(out / "algvar_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, cfg, files + ["algvar_summary.json", "manifest.json"])
    return summary


# -- DLN sweep ---------------------------------------------------------------

def sweep_cells(spec):
    """(family, lambda1, lambda2) for every regularized cell; family 0 means lambda2 = 0."""
    cells = []
    for lam1 in spec.lambda1_grid:
        cells.append((0.0, lam1, 0.0))
        for r in spec.ratios:
            if lam1 > 0:
                cells.append((r, lam1, lam1 / r))
    return cells


def _dln_item(args):
    cfg, di, ii = args
    sp = cfg.dln
    train = dln.generate_sparse_data(sp.d, sp.n_train, sp.k, seed=[cfg.seed, DLN_DATA, di], noise_std=sp.noise_std)
    test = dln.held_out(train, sp.n_test, seed=[cfg.seed, DLN_TEST, di])
    th0 = dln.init_params(sp.d, sp.init_scale, seed=[cfg.seed, DLN_INIT, di, ii])
    steps = sp.epochs * sp.n_train // sp.batch_size
    sched = optim.LrSchedule(sp.eta, 1.0)
    results = {}
    for fam, lam1, lam2 in [(0.0, 0.0, 0.0)] + [c for c in sweep_cells(sp) if c[1] > 0 or c[2] > 0]:
        losses = []
        for r in range(sp.n_runs):
            kind = "SGDwReg" if (lam1 or lam2) else "SGD"
            oc = optim.OptimizerConfig(
                kind=kind, batch_size=sp.batch_size, with_replacement=False, lambda1=lam1, lambda2=lam2,
                schedule=sched, iterations=steps, seed=[cfg.seed, DLN_RUN, di, ii, r],
            )
            tr = optim.run(train, oc, th0, diagnostics=False)
            losses.append(np.nan if tr.diverged else test.mse(tr.final))
        results[(fam, lam1, lam2)] = losses
    return di, ii, results


def run_dln_sweep(cfg, out=None):
    """Test-loss ratios of regularized SGD to vanilla SGD on DLN sparse regression.

    For each (dataset, init) pair the benchmark is the mean held-out MSE of
    vanilla SGD over ``n_runs`` batch orders; each cell's ratio is its own
    mean over the same batch orders divided by that benchmark.
    """
    out = _outdir(cfg, out)
    sp = cfg.dln
    items = [(cfg, di, ii) for di in range(sp.n_datasets) for ii in range(sp.n_inits)]
    res = sorted(_pool_map(_dln_item, items, cfg.workers), key=lambda r: (r[0], r[1]))
    raw_rows, table = [], []
    ratios = {c: [] for c in sweep_cells(sp)}
    excluded = {c: 0 for c in ratios}
    for di, ii, results in res:
        bench = float(np.nanmean(results[(0.0, 0.0, 0.0)]))
        for c in ratios:
            losses = results.get(c, results[(0.0, 0.0, 0.0)])
            ok = [x for x in losses if np.isfinite(x)]
            excluded[c] += len(losses) - len(ok)
            ratio = 1.0 if c == (0.0, 0.0, 0.0) else (np.mean(ok) / bench if ok else np.nan)
            if np.isfinite(ratio):
                ratios[c].append(ratio)
            raw_rows.append([di, ii, c[0], c[1], c[2], bench, np.mean(ok) if ok else np.nan, ratio])
    for c, vals in ratios.items():
        vals = np.array(vals)
        table.append({
            "ratio_family": c[0], "lambda1": c[1], "lambda2": c[2],
            "mean_ratio": float(vals.mean()) if vals.size else np.nan,
            "std_ratio": float(vals.std(ddof=1)) if vals.size > 1 else np.nan,
            "n": int(vals.size), "n_excluded": excluded[c],
        })
    keys = ["ratio_family", "lambda1", "lambda2", "mean_ratio", "std_ratio", "n", "n_excluded"]
    _write_csv(out / "dln_ratios.csv", keys, [[r[k] for k in keys] for r in table])
    _write_csv(out / "dln_cells.csv",
               ["dataset", "init", "ratio_family", "lambda1", "lambda2", "benchmark_mse", "mse", "ratio"], raw_rows)
    _write_manifest(out, cfg, ["dln_ratios.csv", "dln_cells.csv", "manifest.json"])
    return table


def summarize_ratios(table):
    """Best cell per ratio family and whether each family dips below 1."""
    fams = sorted({r["ratio_family"] for r in table})
    out = {}
    for f in fams:
        rows = [r for r in table if r["ratio_family"] == f and r["lambda1"] > 0 and np.isfinite(r["mean_ratio"])]
        best = min(rows, key=lambda r: r["mean_ratio"]) if rows else None
        out[f] = {
            "best_ratio": best["mean_ratio"] if best else np.nan,
            "best_lambda1": best["lambda1"] if best else np.nan,
            "below_one": bool(rows and best["mean_ratio"] < 1),
        }
    return out


# -- theory checks -----------------------------------------------------------

def hard_invariants(cfg):
    """Trace identity, PSD variability matrices and run determinism."""
    th = cfg.theory
    rng = np.random.default_rng([cfg.seed, THEORY, 0])
    worst = 0.0
    for _ in range(th.invariant_instances):
        n = int(rng.integers(1, 65))
        p = int(rng.integers(1, 257))
        b = int(rng.integers(1, n + 1))
        gm = regvar.GradMatrix(rng.standard_normal((n, p)))
        lhs = regvar.minibatch_cov(gm, b).trace() * b * n
        rhs = gm.sum_sq_deviation()
        worst = max(worst, abs(lhs - rhs) / max(rhs, 1e-300) if rhs else abs(lhs))
    pop = cfg.population.build([cfg.seed, THEORY, 1])
    S = pop.draw(seed=[cfg.seed, THEORY, 2])
    oc = optim.OptimizerConfig(kind="SGD", iterations=50, seed=[cfg.seed, THEORY, 3])
    fam = gapcheck.make_family(S, pop, 2, seed=[cfg.seed, THEORY, 4])
    est = gapcheck.retrain_perturbed(S, fam, oc, np.array([3.0, 3.0]))
    eig = float(np.linalg.eigvalsh(est.matrix).min())
    a = optim.run(S, oc, np.array([3.0, 3.0]))
    b = optim.run(S, oc, np.array([3.0, 3.0]))
    return {
        "trace_identity": {"max_rel_error": worst, "pass": worst <= 1e-12},
        "variability_psd": {"min_eigenvalue": eig, "pass": eig >= -1e-12 * max(1.0, est.trace)},
        "determinism": {"pass": a.to_csv() == b.to_csv()},
    }


def lemma2_seeds(cfg):
    th = cfg.theory
    pop = cfg.population.build([cfg.seed, THEORY, 10])
    reports = []
    for s in range(th.lemma2_seeds):
        S = pop.draw(seed=[cfg.seed, THEORY, 11, s])
        th0 = np.random.default_rng([cfg.seed, THEORY, 12, s]).uniform(*landscape.DOMAIN, size=2)
        oc = optim.OptimizerConfig(
            kind="SGD", batch_size=1, with_replacement=False, schedule=optim.LrSchedule(th.lemma2_eta0, 0.99),
            iterations=th.lemma2_epochs * S.n_samples, seed=[cfg.seed, THEORY, 13, s],
        )
        fam = gapcheck.make_family(S, pop, th.lemma2_draws, seed=[cfg.seed, THEORY, 14, s])
        est = gapcheck.retrain_perturbed(S, fam, oc, th0)
        rep = gapcheck.lemma2_check(S, pop, est)
        rep["seed"] = s
        reports.append(rep)
    return reports


def lemma1_report(cfg):
    th = cfg.theory
    pop = cfg.population.build([cfg.seed, THEORY, 20])
    ax = np.linspace(0.5, 7.5, th.lemma1_grid)
    inits = [np.array([x, y]) for x in ax for y in ax]
    oc = optim.OptimizerConfig(kind=th.lemma1_kind, iterations=cfg.idealized.iterations,
                               schedule=cfg.idealized.schedule())
    return gapcheck.lemma1_check(pop, oc, inits, th.lemma1_datasets, th.lemma1_draws,
                                 seed=[cfg.seed, THEORY, 21], grad_tol=th.lemma1_grad_tol)


def lemma1_verdict(rep):
    lhs, rhs = rep["lhs_gap_mean"], rep["rhs_mean"]
    same_sign = bool(np.sign(lhs) == np.sign(rhs) and lhs != 0)
    same_order = bool(same_sign and abs(np.log10(abs(lhs) / abs(rhs))) < 1)
    return {"same_sign": same_sign, "same_order": same_order,
            "pearson_ok": bool(rep["pearson"] > 0.5), "pass": same_order and bool(rep["pearson"] > 0.5)}


def run_theory_checks(cfg, out=None, include_lemma1=True):
    """Run the gap, bound and convergence checks; raise InvariantError on a hard failure."""
    out = _outdir(cfg, out)
    th = cfg.theory
    inv = hard_invariants(cfg)
    l2 = lemma2_seeds(cfg)
    t1 = gapcheck.theorem1_check(n_grid=th.theorem1_grid, T=th.theorem1_steps, batch_size=th.theorem1_batch,
                                 seeds=th.theorem1_seeds, seed=[cfg.seed, THEORY, 30])
    report = {
        "invariants": inv,
        "lemma2": {"seeds": l2, "fraction_holding": float(np.mean([r["holds"] for r in l2]))},
        "theorem1": t1,
    }
    files = ["theory_report.json", "lemma2_seeds.csv"]
    if include_lemma1:
        l1 = lemma1_report(cfg)
        l1["verdict"] = lemma1_verdict(l1)
        report["lemma1"] = l1
        keys = ["dataset", "n_runs", "n_member_excluded", "gap", "half_weighted_trace", "mc_se"]
        _write_csv(out / "lemma1_datasets.csv", keys, [[r[k] for k in keys] for r in l1["rows"]])
        files.append("lemma1_datasets.csv")
    keys = ["seed", "lhs", "term_population", "term_sgd_path", "rhs", "slack", "holds", "epochs"]
    _write_csv(out / "lemma2_seeds.csv", keys, [[r[k] for k in keys] for r in l2])
    with open(out / "theory_report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, cfg, files + ["manifest.json"])
    failed = [k for k, v in inv.items() if not v["pass"]]
    if failed:
        raise InvariantError(f"hard invariant failed: {', '.join(failed)}")
    return report


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def generate_population_file(cfg, out=None):
    out = _outdir(cfg, out)
    pop = cfg.population.build([cfg.seed, POPULATION, 0])
    landscape.save_json(pop, out / "population.json")
    S = landscape.sample_training_set(pop, [cfg.seed, DATASET, 0], cfg.idealized.train_size)
    landscape.save_json(S, out / "training_set.json")
    _write_manifest(out, cfg, ["population.json", "training_set.json", "manifest.json"])
    return pop, S


def env_overrides(cfg, environ=None):
    """Apply SGDVAR_SEED / SGDVAR_WORKERS environment overrides."""
    environ = os.environ if environ is None else environ
    kw = {}
    for var, key in (("SGDVAR_SEED", "seed"), ("SGDVAR_WORKERS", "workers")):
        if environ.get(var):
            try:
                kw[key] = int(environ[var])
            except ValueError:
                raise ConfigError(f"{var} must be an integer") from None
    return dataclasses.replace(cfg, **kw) if kw else cfg


RUNNERS = {
    Experiment.IDEALIZED: run_idealized,
    Experiment.ALGVAR: run_algvar_trajectories,
    Experiment.DLN_SWEEP: run_dln_sweep,
    Experiment.THEORY: run_theory_checks,
    Experiment.GEN_POPULATION: generate_population_file,
}
