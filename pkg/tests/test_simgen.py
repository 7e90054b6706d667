import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msbdens.simgen import (
    MODELS,
    SimError,
    gen_linear_subspace,
    gen_nonlinear_mixture,
    gen_swissroll,
    gen_union_subspaces,
    generate,
    nonlinear_mixture_density,
    sample_stiefel,
    save_truth,
)


def test_nonlinear_mixture_defaults():
    sim = gen_nonlinear_mixture(50, seed=1)
    assert sim.data.features.shape == (50, 1000)
    assert sim.params == dict(mu1=-2.0, sigma1=1.0, mu2=2.0, sigma2=1.0, sigma_x=0.1, c=20.0)
    assert np.all(np.abs(sim.eta) <= 1)


def test_nonlinear_mixture_feature_means():
    sim = gen_nonlinear_mixture(400, p=200, seed=5)
    resid = sim.data.features.mean(axis=1) - sim.eta
    se = 0.1 / np.sqrt(200)
    assert np.all(np.abs(resid) < 5 * se)
    assert abs(resid.mean()) < 3 * se / np.sqrt(400)


def test_nonlinear_mixture_response_weights():
    # mean response follows the weight |eta| on the first component
    sim = gen_nonlinear_mixture(40_000, p=1, seed=2)
    w = np.abs(sim.eta)
    lo, hi = w < 0.2, w > 0.8
    assert sim.data.responses[lo].mean() > 1.2
    assert sim.data.responses[hi].mean() < -1.2


def test_mixture_density_eta_zero():
    y = np.linspace(-3, 6, 7)
    want = np.exp(-0.5 * (y - 2) ** 2) / np.sqrt(2 * np.pi)
    np.testing.assert_allclose(nonlinear_mixture_density(y, 0.0), want, atol=1e-15)
    grid = np.linspace(-12, 12, 4001)
    assert abs(np.trapezoid(nonlinear_mixture_density(grid, -0.6), grid) - 1) < 1e-9


def test_nonlinear_mixture_errors():
    with pytest.raises(SimError):
        gen_nonlinear_mixture(5, sigma_x=0.0)
    with pytest.raises(SimError):
        gen_nonlinear_mixture(5, c=-1.0)


def test_swissroll_structure():
    sim = gen_swissroll(300, p=6, seed=4)
    x, eta = sim.data.features, sim.eta
    np.testing.assert_array_equal(x[:, 0], eta * np.sin(eta))
    np.testing.assert_array_equal(x[:, 1], eta * np.cos(eta))
    assert np.all((eta >= 0) & (eta < 1))


def test_swissroll_figure_configs():
    fig1 = gen_swissroll(20_000, p=3, mean_fn=lambda e: e, sd_fn=lambda e: e + 1, seed=9)
    z = (fig1.data.responses - fig1.eta) / (fig1.eta + 1)
    assert abs(z.mean()) < 3 / np.sqrt(z.size)
    assert abs(z.std() - 1) < 0.03
    fig3 = gen_swissroll(20_000, p=3, seed=9)
    r = fig3.data.responses - fig3.eta
    assert abs(r.std() - 1) < 0.03


def test_swissroll_errors():
    with pytest.raises(SimError):
        gen_swissroll(5, p=2)
    with pytest.raises(SimError):
        gen_swissroll(5, p=3, sd_fn=lambda e: e - 2)


def test_stiefel_unit_vector(rng):
    g = sample_stiefel(7, 1, rng)
    assert abs(np.linalg.norm(g) - 1) < 1e-12


def test_stiefel_orthonormal(rng):
    g = sample_stiefel(1001, 5, rng)
    np.testing.assert_allclose(g.T @ g, np.eye(5), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 5), st.integers(0, 2**31))
def test_stiefel_orthonormal_any_shape(cols, extra, seed):
    g = sample_stiefel(cols + extra, cols, np.random.default_rng(seed))
    np.testing.assert_allclose(g.T @ g, np.eye(cols), atol=1e-10)


def test_stiefel_entry_mean(rng):
    draws = np.stack([sample_stiefel(4, 2, rng) for _ in range(10_000)])
    se = draws.std(axis=0) / np.sqrt(10_000)
    assert np.all(np.abs(draws.mean(axis=0)) < 3.5 * se)


def test_stiefel_errors(rng):
    with pytest.raises(SimError):
        sample_stiefel(2, 3, rng)


def test_linear_subspace_defaults():
    sim = gen_linear_subspace(10, 20, seed=0)
    assert sim.eta.shape == (10, 5)
    assert sim.params["omega"].shape == (21, 5)


def test_linear_subspace_zero_loadings():
    sim = gen_linear_subspace(20_000, 4, d=2, omega=np.zeros((5, 2)), seed=1)
    z = np.column_stack([sim.data.responses, sim.data.features])
    np.testing.assert_allclose(np.cov(z.T), np.eye(5), atol=0.05)


def test_linear_subspace_covariance():
    sim = gen_linear_subspace(10_000, 20, seed=3)
    om = sim.params["omega"]
    z = np.column_stack([sim.data.responses, sim.data.features])
    want = om @ om.T + np.eye(21)
    err = np.linalg.norm(np.cov(z.T) - want) / np.linalg.norm(want)
    assert err < 0.1


def test_linear_subspace_errors():
    with pytest.raises(SimError):
        gen_linear_subspace(5, 3, d=5)
    with pytest.raises(SimError):
        gen_linear_subspace(5, 3, d=2, omega=np.zeros((3, 2)))


def test_union_defaults_and_frequencies():
    sim = gen_union_subspaces(20_000, 10, seed=6)
    w = sim.params["weights"]
    assert w.shape == (5,) and sim.params["omegas"].shape == (5, 11, 5)
    freq = np.bincount(sim.labels, minlength=5) / 20_000
    se = np.sqrt(w * (1 - w) / 20_000)
    assert np.all(np.abs(freq - w) < 3.5 * se)


def test_union_single_component_reduces():
    sim = gen_union_subspaces(10_000, 20, G=1, seed=3)
    assert np.all(sim.labels == 0)
    om = sim.params["omegas"][0]
    z = np.column_stack([sim.data.responses, sim.data.features])
    want = om @ om.T + np.eye(21)
    assert np.linalg.norm(np.cov(z.T) - want) / np.linalg.norm(want) < 0.1


def test_union_errors():
    with pytest.raises(SimError):
        gen_union_subspaces(5, 4, G=0)
    with pytest.raises(SimError):
        gen_union_subspaces(5, 4, G=2, dir_alpha=[1.0, -1.0])


@pytest.mark.parametrize("model", MODELS)
def test_generate_deterministic(model):
    a = generate(model, 40, 8, seed=17)
    b = generate(model, 40, 8, seed=17)
    assert a.data.features.tobytes() == b.data.features.tobytes()
    assert a.data.responses.tobytes() == b.data.responses.tobytes()
    c = generate(model, 40, 8, seed=18)
    assert not np.array_equal(a.data.responses, c.data.responses)


def test_generate_unknown():
    with pytest.raises(SimError, match="unknown model"):
        generate("spiral", 5, 5)


def test_save_truth(tmp_path):
    sim = gen_union_subspaces(3, 4, d=2, G=2, seed=0)
    save_truth(sim, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "row,eta_0,eta_1,component"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert float(first[1]) == sim.eta[0, 0] and int(first[3]) == sim.labels[0]
    sw = gen_swissroll(2, p=3, seed=0)
    save_truth(sw, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "row,eta"
