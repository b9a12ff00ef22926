import numpy as np
import pytest

from graphon_lab.densities import s0, s0_prime
from graphon_lab.families import family_model
from graphon_lab.sqp import generic_model, maximize, project, theta_from_graphon


def test_complex_step_hessians_match_gradient_differences():
    model = generic_model(3)
    rng = np.random.default_rng(4)
    P = rng.uniform(0.1, 0.9, (3, 3))
    P = np.triu(P) + np.triu(P, 1).T
    theta = theta_from_graphon(P, rng.dirichlet(np.ones(3)))
    H = model.hessians(theta)
    h = 1e-6
    for k in range(model.dim):
        e = np.zeros(model.dim)
        e[k] = h
        col = (model.gradients(theta + e) - model.gradients(theta - e)) / (2 * h)
        assert np.allclose(H[:, :, k], col, rtol=1e-6, atol=1e-6)


def test_gradients_match_values():
    model = family_model("B", 2)
    theta = np.array([0.2, 0.7, 0.4, 0.6, 0.55])
    G = model.gradients(theta)
    h = 1e-7
    for k in range(model.dim):
        e = np.zeros(model.dim)
        e[k] = h
        fd = (model.values(theta + e) - model.values(theta - e)) / (2 * h)
        assert np.allclose(G[:, k], fd, rtol=1e-6, atol=1e-7)


def test_entropy_at_fixed_edge_density_is_constant_graphon():
    model = generic_model(2)
    theta0 = theta_from_graphon(np.array([[0.2, 0.5], [0.5, 0.6]]), np.array([0.3, 0.7]))
    res = maximize(model, theta0, "S", {"eps": 0.4})
    assert res.status == "Converged"
    P, c = model.unpack(res.theta)
    assert np.allclose(P, 0.4, atol=1e-6)
    assert res.objective == pytest.approx(float(s0(0.4)), abs=1e-10)
    assert res.multipliers["eps"] == pytest.approx(float(s0_prime(0.4)), abs=1e-6)


def test_minimize_triangles_at_half_edge_density():
    model = generic_model(2)
    theta0 = theta_from_graphon(np.array([[0.3, 0.7], [0.7, 0.2]]), np.array([0.45, 0.55]))
    res = maximize(model, theta0, "tau", {"eps": 0.5}, sign=-1.0)
    assert res.objective < 1e-9
    assert res.constraint_violation < 1e-10


def test_project_onto_targets():
    model = family_model("F", 1)
    theta, ok = project(model, np.array([0.5, 0.5, 0.5, 0.4]), {"eps": 0.5, "tau": 0.13})
    assert ok
    assert np.allclose(model.values(theta)[:2], [0.5, 0.13], atol=1e-12)
    assert np.all(theta >= model.lower) and np.all(theta <= model.upper)
