import math

import numpy as np
import pytest

from graphon_lab.core import ConstraintPoint, MultipodalGraphon
from graphon_lab.densities import densities, entropy, s0, s0_prime
from graphon_lab.families import build_family, cusp, solve_A
from graphon_lab.optimize import (FamilyInfeasible, Infeasible, NoCandidates, SolveConfig, extremal_tau,
                                  family_tau_range, refine, sample_stage, solve, solve_in_family,
                                  tau_extreme)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(window=0)
    with pytest.raises(ValueError):
        SolveConfig(max_podes=17)
    assert "seed=0" in SolveConfig().describe()


def test_sample_stage_at_er_point():
    pt = ConstraintPoint(0.6, 0.216)
    cands = sample_stage(pt, SolveConfig(samples=3000))
    assert cands
    assert max(entropy(g) for g in cands) <= float(s0(0.6)) + 1e-9


def test_sample_stage_window_too_strict():
    with pytest.raises(NoCandidates):
        sample_stage(ConstraintPoint(0.6, 0.2), SolveConfig(window=1e-12, samples=10))


def test_refine_from_optimum():
    r = refine(MultipodalGraphon.constant(0.6), ConstraintPoint(0.6, 0.216))
    assert r.converged and r.iterations <= 2
    assert r.alpha == pytest.approx(float(s0_prime(0.6)), abs=1e-6)
    assert r.beta == pytest.approx(0.0, abs=1e-6)


def test_refine_to_mantel_graphon():
    g = MultipodalGraphon([0.48, 0.52], [[0.02, 0.97], [0.97, 0.03]])
    r = refine(g, ConstraintPoint(0.5, 0.0))
    assert r.converged
    P, c = r.graphon.probs, r.graphon.sizes
    assert r.graphon.n == 2
    assert np.allclose(c, 0.5, atol=1e-6)
    assert P[0, 0] < 1e-6 and P[1, 1] < 1e-6 and P[0, 1] > 1 - 1e-6


def test_solve_er_point():
    r = solve(ConstraintPoint(0.5, 0.125))
    assert r.graphon.n == 1
    assert r.entropy == pytest.approx(math.log(2), abs=1e-10)
    assert str(r.label) == "A(1,0)"


def test_solve_beats_closed_form_and_is_stationary():
    pt = ConstraintPoint(0.5, 0.1)
    r = solve(pt)
    assert r.entropy >= entropy(build_family(solve_A(2, pt))) - 1e-10
    assert r.converged and r.el_residual < 1e-6
    assert r.constraint_violation < 1e-9
    if np.all((r.graphon.probs > 0.01) & (r.graphon.probs < 0.99)):
        assert r.beta > 0


def test_solve_infeasible():
    with pytest.raises(Infeasible):
        solve(ConstraintPoint(0.5, 0.36))


def test_solve_is_deterministic_across_threads():
    pt = ConstraintPoint(0.62, 0.2)
    a = solve(pt, SolveConfig(threads=1, samples=4000))
    b = solve(pt, SolveConfig(threads=3, samples=4000))
    assert a.to_json() == b.to_json()


def test_B21_just_below_first_transition():
    r = solve(ConstraintPoint(0.735, 0.372))
    assert r.label.matches("B(2,1)")


def test_family_A_matches_closed_form():
    pt = ConstraintPoint(0.5, 0.1)
    r = solve_in_family("A", 2, pt)
    s = solve_A(2, pt)
    assert abs(r.params["a"] - s.params["a"]) < 1e-9
    assert abs(r.params["b"] - s.params["b"]) < 1e-9


def test_bipodal_above_er_exists():
    r = solve_in_family("F", 1, ConstraintPoint(0.5, 0.13))
    assert r.converged
    assert str(r.label) == "F(1,1)"


def test_family_outside_range():
    lo, hi = family_tau_range("B", 1, 0.735)
    with pytest.raises(FamilyInfeasible):
        solve_in_family("B", 1, ConstraintPoint(0.735, lo - 0.01))


def test_B1_B2_entropies_cross():
    strict = dict(strict=True)
    hi, lo = ConstraintPoint(0.735, 0.3745), ConstraintPoint(0.735, 0.3735)
    b1_hi, b2_hi = (solve_in_family("B", m, hi, **strict).entropy for m in (1, 2))
    b1_lo, b2_lo = (solve_in_family("B", m, lo, **strict).entropy for m in (1, 2))
    assert b1_hi > b2_hi and b2_lo > b1_lo


def test_extremal_tau():
    assert tau_extreme(0.25, "max") == pytest.approx(0.125, abs=1e-6)
    r = extremal_tau(0.5, "min")
    assert r.diagnostics["tau"] == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(r.graphon.sizes, 0.5, atol=1e-4)
    assert tau_extreme(2 / 3, "min") == pytest.approx(2 / 9, abs=1e-4)


def test_min_tau_between_cusps():
    # scallops are concave: above the chord between cusps and above eps (2 eps - 1)
    c2, c3 = cusp(2), cusp(3)
    mid = 0.5 * (c2.edge + c3.edge)
    chord = 0.5 * (c2.triangle + c3.triangle)
    low = tau_extreme(mid, "min")
    assert chord < low < mid ** 3
    assert low > mid * (2 * mid - 1)
    assert densities(extremal_tau(mid, "min").graphon)[0] == pytest.approx(mid, abs=1e-9)


@pytest.mark.parametrize("eps", [0.58, 0.70833, 0.76])
def test_min_tau_matches_scallop_formula(eps):
    # independent oracle: the known closed form of the lower boundary
    t = math.ceil(1 / (1 - eps)) - 1
    root = math.sqrt(t * (t - eps * (t + 1)))
    exact = (t - 1) * (t - 2 * root) * (t + root) ** 2 / (t ** 2 * (t + 1) ** 2)
    assert tau_extreme(eps, "min") == pytest.approx(exact, abs=1e-7)
