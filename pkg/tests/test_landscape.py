import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgdvar import landscape
from sgdvar.landscape import GaussianBump, Orientation

from conftest import central_diff, identical_population


def test_population_shape_and_sites(pop):
    assert len(pop) == 30
    for cand in pop.candidates:
        assert cand.bumps[0].center == (7.0, 7.0)
        assert cand.bumps[0].orientation is Orientation.WELL
        assert any(np.allclose(cand.bumps[1].center, s) for s in landscape.EXTRA_SITES)
    assert np.all(pop.heights > 0) and np.all(pop.widths > 0)


def test_peak_fraction_close_to_rho():
    peaks = sum(landscape.generate_population(seed=s, rho=0.35).n_peaks for s in range(200))
    frac = peaks / (200 * 30)
    assert abs(frac - 0.35) < 4 * np.sqrt(0.35 * 0.65 / 6000)


@pytest.mark.parametrize("rho,expected", [(0.0, 0), (1.0, 30)])
def test_rho_extremes(rho, expected):
    assert landscape.generate_population(seed=5, rho=rho).n_peaks == expected


def test_rho_out_of_range():
    with pytest.raises(ValueError):
        landscape.generate_population(seed=0, rho=1.5)


def test_zero_std_positive_mean_is_deterministic():
    p = landscape.generate_population(seed=1, height_dist=(3.0, 0.0), width_dist=(0.5, 0.0),
                                      anchor_height_dist=None, anchor_width_dist=None)
    assert np.all(p.heights == 3.0) and np.all(p.widths == 0.5)


def test_generated_population_frozen_values():
    p = landscape.generate_population(seed=[0, 0])
    # regression values from the fixed draw order (sites, flags, heights, widths)
    assert p.n_peaks == FROZEN["n_peaks"]
    np.testing.assert_allclose(p.heights[:3], FROZEN["heights"], rtol=0, atol=1e-12)
    np.testing.assert_allclose(p.population_loss([4.0, 4.0]), FROZEN["loss44"], rtol=1e-12)


FROZEN = {
    "n_peaks": 8,
    "heights": [[7.6860771854635725, 5.359138059973413], [9.458020683536958, 6.676943956369562],
                [9.960258316449965, 9.870099976228044]],
    "loss44": -4.52636496285488,
}


def test_bump_validation():
    with pytest.raises(ValueError):
        GaussianBump((0, 0), -1.0, 1.0, Orientation.WELL)
    with pytest.raises(ValueError):
        GaussianBump((0, 0), 1.0, 0.0, Orientation.PEAK)
    well = GaussianBump((1.0, 2.0), 3.0, 0.5, Orientation.WELL)
    assert well.value((1.0, 2.0)) == -3.0
    assert GaussianBump((1.0, 2.0), 3.0, 0.5, Orientation.PEAK).value((1.0, 2.0)) == 3.0


def test_training_set_indices(pop):
    ds = landscape.sample_training_set(pop, seed=11)
    assert ds.indices.shape == (30,)
    assert ds.indices.min() >= 0 and ds.indices.max() < 30
    again = landscape.sample_training_set(pop, seed=11)
    np.testing.assert_array_equal(ds.indices, again.indices)


def test_identical_candidates_training_equals_population():
    p = identical_population()
    ds = landscape.sample_training_set(p, seed=0)
    for th in np.random.default_rng(0).uniform(0, 8, (10, 2)):
        assert ds.loss(th) == pytest.approx(p.population_loss(th), abs=1e-14)


def test_candidate_value_matches_vectorized(pop):
    th = np.array([2.3, 5.1])
    direct = [c.value(th) for c in pop.candidates]
    np.testing.assert_allclose(pop.values_at(th), direct, rtol=1e-13)


def test_gradient_matches_finite_differences(train):
    rng = np.random.default_rng(4)
    for th in rng.uniform(0, 8, (20, 2)):
        fd = central_diff(train.loss, th, h=1e-4)
        assert np.max(np.abs(train.grad(th) - fd)) < 1e-6


def test_hessian_matches_finite_differences(train):
    th = np.array([3.3, 6.2])
    fd = np.array([central_diff(lambda x: train.grad(x)[k], th) for k in range(2)])
    np.testing.assert_allclose(train.hessian(th), fd, atol=1e-7)
    # HVPs agree with the dense Hessian
    v = np.array([0.3, -1.2])
    np.testing.assert_allclose(train.hvp(th, v), train.hessian(th) @ v, atol=1e-13)


def test_single_well_critical_point_and_curvature():
    p = landscape.Population(
        centers=[[[7.0, 7.0], [1.0, 1.0]]], heights=[[4.0, 1e-300]], widths=[[0.5, 1e-3]], signs=[[-1.0, -1.0]],
    )
    obj = p.objective()
    np.testing.assert_allclose(obj.grad([7.0, 7.0]), 0.0, atol=1e-15)
    np.testing.assert_allclose(obj.hessian([7.0, 7.0]), 4.0 / 0.25 * np.eye(2), rtol=1e-12)


def test_population_quantities(pop):
    th = np.array([5.0, 2.0])
    full = pop.objective()
    assert pop.population_loss(th) == pytest.approx(full.loss(th), rel=1e-13)
    np.testing.assert_allclose(pop.mean_grad(th), full.grad(th), rtol=1e-12)
    g = full.sample_grads(th)
    np.testing.assert_allclose(pop.grad_cov(th), np.cov(g.T, bias=True), atol=1e-12)


def test_minimum_is_below_mesh(pop):
    point, value = pop.minimum()
    ax = np.linspace(0, 8, 81)
    mesh = np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2)
    assert value <= pop.values_at(mesh).mean(-1).min() + 1e-12
    assert np.linalg.norm(pop.mean_grad(point)) < 1e-8


def test_replace_changes_one_position(pop, train):
    src = landscape.sample_training_set(pop, seed=99)
    new = train.replace(4, src, 2)
    diff = np.flatnonzero(new.indices != train.indices)
    assert set(diff) <= {4}
    assert new.indices[4] == src.indices[2]
    other = landscape.generate_population(seed=123)
    with pytest.raises(ValueError):
        train.replace(0, other.objective(), 0)


def test_json_round_trip(tmp_path, pop, train):
    landscape.save_json(train, tmp_path / "ds.json")
    back = landscape.load_json(tmp_path / "ds.json")
    np.testing.assert_array_equal(back.indices, train.indices)
    assert back.population.same_as(pop)
    landscape.save_json(pop, tmp_path / "pop.json")
    assert landscape.load_json(tmp_path / "pop.json").same_as(pop)
    doc = json.loads((tmp_path / "pop.json").read_text())
    doc["version"] = 99
    with pytest.raises(ValueError):
        landscape.Population.from_dict(doc)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_generated_population_invariants(seed, rho):
    p = landscape.generate_population(seed=seed, rho=rho)
    assert len(p) == 30
    assert np.all(p.centers[:, 0] == 7.0)
    assert np.all(p.signs[:, 0] == -1.0)
    assert np.all(p.heights > 0) and np.all(p.widths > 0)
