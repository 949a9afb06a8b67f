"""Two-dimensional Gaussian-bump landscapes for the idealized experiment.

Every candidate function carries a well at (7, 7) plus one extra critical
point on a 3x3 lattice (minus the (7, 7) corner) which is a peak with
probability ``rho`` and a well otherwise.  A training set is a resample with
replacement of the candidate population and its loss is the average of the
selected candidates.
"""

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .objective import Objective

ANCHOR = (7.0, 7.0)
EXTRA_SITES = np.array(
    [(1, 1), (1, 4), (1, 7), (4, 1), (4, 4), (4, 7), (7, 1), (7, 4)], dtype=float
)
DOMAIN = (0.0, 8.0)
N_CANDIDATES = 30
FORMAT_VERSION = 1

# Extra critical points use HEIGHT_DIST / WIDTH_DIST; the shared (7, 7) well
# is broader so that it is felt across the whole domain.
HEIGHT_DIST = (8.0, 2.0)
WIDTH_DIST = (1.0, 0.2)
ANCHOR_HEIGHT_DIST = (8.0, 1.0)
ANCHOR_WIDTH_DIST = (3.5, 0.3)


class Orientation(str, Enum):
    WELL = "well"
    PEAK = "peak"

    @property
    def sign(self):
        return -1.0 if self is Orientation.WELL else 1.0


@dataclass(frozen=True)
class GaussianBump:
    center: tuple
    height: float
    width: float
    orientation: Orientation

    def __post_init__(self):
        if not (self.height > 0 and self.width > 0):
            raise ValueError("bump height and width must be positive")

    def value(self, theta):
        d = np.asarray(theta, dtype=float) - np.asarray(self.center)
        return self.orientation.sign * self.height * np.exp(-(d @ d) / (2 * self.width**2))


@dataclass(frozen=True)
class CandidateFunction:
    bumps: tuple

    def value(self, theta):
        return sum(b.value(theta) for b in self.bumps)


def _positive_normal(rng, mean, std, size):
    """Normal draws, redrawing non-positive entries until all are positive."""
    if std < 0:
        raise ValueError("std must be non-negative")
    if std == 0:
        if mean <= 0:
            raise ValueError("a zero-std distribution needs a positive mean")
        return np.full(size, float(mean))
    out = rng.normal(mean, std, size)
    bad = out <= 0
    while bad.any():
        out[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = out <= 0
    return out


@dataclass(eq=False)
class Population:
    """Finite population of candidate functions stored as stacked arrays.

    ``centers`` has shape (M, 2, 2) (candidate, bump, coordinate); ``heights``,
    ``widths`` and ``signs`` have shape (M, 2).  Bump 0 is the (7, 7) well.
    """

    centers: np.ndarray
    heights: np.ndarray
    widths: np.ndarray
    signs: np.ndarray
    rho: float = 0.35
    seed: object = None
    height_dist: tuple = (8.0, 2.0)
    width_dist: tuple = (1.0, 0.2)
    anchor_height_dist: tuple = None
    anchor_width_dist: tuple = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.heights = np.asarray(self.heights, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        self.signs = np.asarray(self.signs, dtype=float)
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if np.any(self.heights <= 0) or np.any(self.widths <= 0):
            raise ValueError("heights and widths must be positive")
        # signed height over width^2 is all the hot path needs
        self._amp = self.signs * self.heights
        self._inv_w2 = 1.0 / self.widths**2

    def __len__(self):
        return self.centers.shape[0]

    @property
    def candidates(self):
        out = []
        for m in range(len(self)):
            bumps = tuple(
                GaussianBump(
                    center=tuple(self.centers[m, k]),
                    height=float(self.heights[m, k]),
                    width=float(self.widths[m, k]),
                    orientation=Orientation.WELL if self.signs[m, k] < 0 else Orientation.PEAK,
                )
                for k in range(2)
            )
            out.append(CandidateFunction(bumps))
        return out

    @property
    def n_peaks(self):
        return int(np.sum(self.signs[:, 1] > 0))

    def objective(self):
        """The population loss as an objective over its own candidates."""
        return LandscapeDataset(np.arange(len(self)), self)

    # -- population-level quantities (the population is the distribution D) --
    def draw(self, n=None, seed=None):
        return sample_training_set(self, seed, n)

    def population_loss(self, theta):
        return float(np.mean(self.values_at(theta)))

    def mean_grad(self, theta):
        return self.grads_at(theta).mean(axis=0)

    def grad_cov(self, theta):
        g = self.grads_at(theta)
        d = g - g.mean(axis=0)
        return d.T @ d / len(self)

    def minimum(self, resolution=161):
        """Global minimum of the population loss over the domain.

        Coarse mesh search followed by Newton polishing with the analytic
        Hessian; returns (point, value).
        """
        ax = np.linspace(DOMAIN[0], DOMAIN[1], resolution)
        pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
        vals = self.values_at(pts).mean(axis=-1)
        th = pts[np.argmin(vals)]
        obj = self.objective()
        for _ in range(50):
            g = obj.grad(th)
            h = obj.hessian(th)
            if np.linalg.eigvalsh(h).min() <= 0:
                break
            step = np.linalg.solve(h, g)
            th = th - step
            if np.linalg.norm(step) < 1e-13:
                break
        val = self.population_loss(th)
        best = float(vals.min())
        if val > best:
            return pts[np.argmin(vals)], best
        return th, val

    # -- vectorised evaluation on arbitrary point sets ---------------------
    def values_at(self, points):
        """Candidate values at ``points`` of shape (..., 2); returns (..., M)."""
        pts = np.asarray(points, dtype=float)[..., None, None, :]
        d = pts - self.centers
        r2 = np.sum(d * d, axis=-1)
        return np.sum(self._amp * np.exp(-0.5 * r2 * self._inv_w2), axis=-1)

    def grads_at(self, points):
        """Candidate gradients at ``points`` (..., 2); returns (..., M, 2)."""
        pts = np.asarray(points, dtype=float)[..., None, None, :]
        d = pts - self.centers
        r2 = np.sum(d * d, axis=-1)
        e = self._amp * np.exp(-0.5 * r2 * self._inv_w2)
        return -np.sum((e * self._inv_w2)[..., None] * d, axis=-2)

    # -- serialisation ------------------------------------------------------
    def to_dict(self):
        return {
            "format": "sgdvar.population",
            "version": FORMAT_VERSION,
            "seed": _jsonable_seed(self.seed),
            "rho": self.rho,
            "height_dist": list(self.height_dist),
            "width_dist": list(self.width_dist),
            "anchor_height_dist": None if self.anchor_height_dist is None else list(self.anchor_height_dist),
            "anchor_width_dist": None if self.anchor_width_dist is None else list(self.anchor_width_dist),
            "centers": self.centers.tolist(),
            "heights": self.heights.tolist(),
            "widths": self.widths.tolist(),
            "orientations": [
                [("well" if s < 0 else "peak") for s in row] for row in self.signs
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        _check_format(doc, "sgdvar.population")
        signs = [[-1.0 if o == "well" else 1.0 for o in row] for row in doc["orientations"]]
        return cls(
            centers=np.array(doc["centers"]),
            heights=np.array(doc["heights"]),
            widths=np.array(doc["widths"]),
            signs=np.array(signs),
            rho=doc["rho"],
            seed=doc.get("seed"),
            height_dist=tuple(doc["height_dist"]),
            width_dist=tuple(doc["width_dist"]),
            anchor_height_dist=_opt_tuple(doc.get("anchor_height_dist")),
            anchor_width_dist=_opt_tuple(doc.get("anchor_width_dist")),
        )

    def same_as(self, other):
        return (
            np.array_equal(self.centers, other.centers)
            and np.array_equal(self.heights, other.heights)
            and np.array_equal(self.widths, other.widths)
            and np.array_equal(self.signs, other.signs)
        )


def _opt_tuple(v):
    return None if v is None else tuple(v)


def _jsonable_seed(seed):
    if seed is None or isinstance(seed, (int, str)):
        return seed
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return str(seed)


def _check_format(doc, name):
    if doc.get("format") != name:
        raise ValueError(f"not a {name} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {name} version {doc.get('version')!r}")


def generate_population(
    seed, rho=0.35, height_dist=HEIGHT_DIST, width_dist=WIDTH_DIST, n_candidates=N_CANDIDATES,
    anchor_height_dist=ANCHOR_HEIGHT_DIST, anchor_width_dist=ANCHOR_WIDTH_DIST,
):
    """Draw a candidate population.

    The extra critical point of each candidate sits at a uniformly chosen
    lattice site and is a peak with probability ``rho``.  Heights and widths
    come from the given normals, redrawn until positive; the (7, 7) well uses
    ``anchor_*_dist`` (``None`` means: same as the extra point).
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    ah = height_dist if anchor_height_dist is None else anchor_height_dist
    aw = width_dist if anchor_width_dist is None else anchor_width_dist
    rng = np.random.default_rng(seed)
    sites = rng.integers(len(EXTRA_SITES), size=n_candidates)
    peak = rng.random(n_candidates) < rho
    heights = np.column_stack([
        _positive_normal(rng, ah[0], ah[1], n_candidates),
        _positive_normal(rng, height_dist[0], height_dist[1], n_candidates),
    ])
    widths = np.column_stack([
        _positive_normal(rng, aw[0], aw[1], n_candidates),
        _positive_normal(rng, width_dist[0], width_dist[1], n_candidates),
    ])

    centers = np.empty((n_candidates, 2, 2))
    centers[:, 0] = ANCHOR
    centers[:, 1] = EXTRA_SITES[sites]
    signs = np.empty((n_candidates, 2))
    signs[:, 0] = -1.0
    signs[:, 1] = np.where(peak, 1.0, -1.0)
    return Population(
        centers, heights, widths, signs, rho=rho, seed=seed,
        height_dist=tuple(height_dist), width_dist=tuple(width_dist),
        anchor_height_dist=_opt_tuple(anchor_height_dist),
        anchor_width_dist=_opt_tuple(anchor_width_dist),
    )


class LandscapeDataset(Objective):
    """Training set made of (possibly repeated) candidates of a population."""

    dim = 2

    def __init__(self, indices, population, seed=None):
        self.indices = np.asarray(indices, dtype=np.intp)
        if self.indices.ndim != 1 or self.indices.size == 0:
            raise ValueError("indices must be a non-empty 1-d array")
        if self.indices.min() < 0 or self.indices.max() >= len(population):
            raise IndexError("candidate index out of range")
        self.population = population
        self.seed = seed
        self.n_samples = self.indices.size

    def _terms(self, theta, idx):
        cand = self.indices[self._idx(idx)]
        p = self.population
        d = np.asarray(theta, dtype=float) - p.centers[cand]  # (n, 2, 2)
        inv_w2 = p._inv_w2[cand]
        e = p._amp[cand] * np.exp(-0.5 * np.sum(d * d, axis=-1) * inv_w2)
        return e, d, inv_w2

    def sample_losses(self, theta, idx=None):
        e, _, _ = self._terms(theta, idx)
        return e.sum(axis=-1)

    def sample_grads(self, theta, idx=None):
        e, d, inv_w2 = self._terms(theta, idx)
        return -np.sum((e * inv_w2)[..., None] * d, axis=1)

    def sample_hvps(self, theta, vecs, idx=None):
        e, d, inv_w2 = self._terms(theta, idx)
        v = np.broadcast_to(np.asarray(vecs, dtype=float), (e.shape[0], 2))
        dv = np.einsum("nkc,nc->nk", d, v)
        # H = sum_k e_k (d_k d_k^T / w^4 - I / w^2)
        t = (e * inv_w2 * inv_w2 * dv)[..., None] * d
        return t.sum(axis=1) - (e * inv_w2).sum(axis=1)[:, None] * v

    def sample_hessians(self, theta, idx=None):
        e, d, inv_w2 = self._terms(theta, idx)
        outer = d[..., :, None] * d[..., None, :]
        w = e * inv_w2
        h = np.einsum("nk,nkab->nab", w * inv_w2, outer)
        return h - w.sum(axis=1)[:, None, None] * np.eye(2)

    def subset(self, idx):
        return LandscapeDataset(self.indices[self._idx(idx)], self.population)

    def replace(self, i, source, j):
        if source.population is not self.population and not source.population.same_as(self.population):
            raise ValueError("replacement must come from the same population")
        new = self.indices.copy()
        new[i] = source.indices[j]
        return LandscapeDataset(new, self.population)

    def values_at(self, points):
        """Training loss on a point set (..., 2)."""
        return self.population.values_at(points)[..., self.indices].mean(axis=-1)

    def grads_at(self, points):
        """Per-sample gradients on a point set; returns (..., N, 2)."""
        return self.population.grads_at(points)[..., self.indices, :]

    def to_dict(self):
        return {
            "format": "sgdvar.landscape_dataset",
            "version": FORMAT_VERSION,
            "seed": _jsonable_seed(self.seed),
            "indices": self.indices.tolist(),
            "population": self.population.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        _check_format(doc, "sgdvar.landscape_dataset")
        return cls(doc["indices"], Population.from_dict(doc["population"]), seed=doc.get("seed"))


def sample_training_set(pop, seed, size=None):
    """Resample ``size`` candidates (default: population size) with replacement."""
    rng = np.random.default_rng(seed)
    n = len(pop) if size is None else size
    return LandscapeDataset(rng.integers(len(pop), size=n), pop, seed=seed)


def training_loss(ds, theta):
    return ds.loss(theta)


def training_grad(ds, theta):
    return ds.grad(theta)


def training_hessian(ds, theta):
    return ds.hessian(theta)


def population_loss(pop, theta):
    return pop.population_loss(theta)


def population_grad(pop, theta):
    return pop.mean_grad(theta)


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=1)


def load_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") == "sgdvar.population":
        return Population.from_dict(doc)
    return LandscapeDataset.from_dict(doc)
