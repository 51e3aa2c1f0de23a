import cmath

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from lattice_lie.dseq import (
    K1,
    K2,
    LAM,
    OMEGA,
    OMEGA_BAR,
    U,
    U_MINUS,
    U_PLUS,
    X,
    DP1Params,
    alternating_factor,
    affine_symmetry_sweep,
    classify_continuous,
    discrete_chain,
    discrete_symmetries_dp1,
    dp1_system,
    flow_solution,
    phi0_closed_form,
    u_hat_value,
    closed_form_residual,
    volterra_determining_equation,
    x_shift_parameter_map,
)
from lattice_lie.exprsym import index, is_identically_zero
from lattice_lie.realize import check_form_invariance

N = index("n")
REGIMES = [((1, 3, 6), 0), ((2, -1, 0), 0), ((0, 3, 6), 1), ((0, -2, 0), 1), ((0, 0, 6), 4), ((0, 0, 0), 4)]


def test_params_validated():
    with pytest.raises(ValueError):
        DP1Params(1, 1, 1, h=0)


def test_equation_shape():
    S = dp1_system(DP1Params(1, 3, 6))
    assert S.eliminate is not None
    # u[n+1] + u[n] + u[n-1] - (x + 3)/u - 6 with x on a lattice of step h
    delta = S.on_lattice(S.delta)
    want = U_PLUS + U + U_MINUS - (X + 3) / U - 6
    assert sp.simplify(delta - want) == 0


@pytest.mark.parametrize("abg,dim", REGIMES)
def test_continuous_regimes(abg, dim):
    cs = classify_continuous(DP1Params(*abg))
    assert cs.dim == dim
    assert all(cs.verified) and len(cs.verified) == dim


@pytest.mark.parametrize("abg,dim", REGIMES)
def test_polynomial_sweep_agrees_with_classification(abg, dim):
    # the sweep only sees fields polynomial in x: it misses the two omega**n fields
    assert affine_symmetry_sweep(DP1Params(*abg)) == min(dim, 2)


def test_cube_roots_of_unity():
    assert sp.simplify(OMEGA ** 3 - 1) == 0 and sp.simplify(OMEGA_BAR ** 3 - 1) == 0
    assert sp.simplify(1 + OMEGA + OMEGA_BAR) == 0


@pytest.mark.parametrize("gamma", [6, sp.Rational(-5, 2), 0])
def test_linear_regime_closed_form_exact(gamma):
    k = sp.symbols("k1:4")
    phi = lambda m: phi0_closed_form(gamma, *k, m)  # noqa: E731
    e = phi(N + 1) + phi(N) + phi(N - 1) + gamma * k[0]
    for m in range(1, 7):
        assert sp.simplify(sp.expand(e.subs(N, m))) == 0


@pytest.mark.parametrize("gamma", [6, -1.5, 0, 3 + 2j])
def test_closed_form_residual(gamma):
    assert closed_form_residual(gamma, n_max=20) < 1e-10


def _recurrence_residual(phi, gamma, k1):
    return max(abs(phi(n + 1) + phi(n) + phi(n - 1) + gamma * k1) for n in range(1, 21))


def test_closed_form_numeric_oracle():
    # independent float evaluation, plus a wrong constant term and a wrong root as controls
    k1, k2, k3, g = 0.3, 0.7 - 0.1j, -0.2j, 6.0
    w = cmath.exp(2j * cmath.pi / 3)
    good = lambda n: -g * k1 / 3 + k2 * w ** n + k3 * w.conjugate() ** n  # noqa: E731
    bad_const = lambda n: -g * k1 / 2 + k2 * w ** n  # noqa: E731
    bad_root = lambda n: -g * k1 / 3 + k2 * (-w) ** n  # noqa: E731
    assert _recurrence_residual(good, g, k1) < 1e-10
    assert _recurrence_residual(bad_const, g, k1) > 1e-3
    assert _recurrence_residual(bad_root, g, k1) > 1e-3
    assert abs(closed_form_residual(g, ks=[k1, k2, k3]) - _recurrence_residual(good, g, k1)) < 1e-12


def test_closed_form_needs_three_sites():
    with pytest.raises(ValueError):
        closed_form_residual(1, n_max=2)


def test_alternating_factor():
    p = DP1Params(1, 0, 0, h=sp.Rational(1, 2))
    assert [alternating_factor(sp.Rational(k, 2), p) for k in range(4)] == [1, -1, 1, -1]
    with pytest.raises(ValueError):
        alternating_factor(sp.Rational(1, 3), p)


def test_x_shift_maps_beta():
    p = x_shift_parameter_map(DP1Params(2, 3, 1), sp.Rational(3, 2))
    assert (p.alpha, p.beta, p.gamma) == (2, 0, 1)


# ---------------------------------------------------------------- flow

def test_flow_starts_at_the_equation():
    for abg in [(1, 3, 6), (0, 0, 0), (2, -1, 5)]:
        sol = flow_solution(DP1Params(*abg))
        assert is_identically_zero(sol.F.xreplace({LAM: 0}) - sol.F0(), singular=[U])
        assert sp.simplify(sol.F.xreplace({LAM: 0}) - sol.F0()) == 0


@pytest.mark.parametrize("abg", [(1, 3, 6), (0, 0, 6), (0, 1, 0)])
def test_flow_pde_holds(abg):
    sol = flow_solution(DP1Params(*abg))
    assert is_identically_zero(sol.pde_residual(), trials=30, tol=1e-8, singular=[U])


def test_flow_pde_detects_perturbation():
    sol = flow_solution(DP1Params(1, 3, 6))
    sol.F = sol.F + LAM ** 2 * U
    assert not is_identically_zero(sol.pde_residual(), trials=30, tol=1e-8, singular=[U])


finite = st.floats(-1.5, 1.5)


@given(finite, finite, finite, st.floats(0.2, 2), st.floats(-1.5, 1.5))
@settings(max_examples=40, deadline=None)
def test_group_law_of_transformed_variable(u, l1, l2, phi1, phi0):
    once = u_hat_value(u_hat_value(u, l1, phi0, phi1), l2, phi0, phi1)
    assert abs(once - u_hat_value(u, l1 + l2, phi0, phi1)) < 1e-10


@pytest.mark.parametrize("phi0,phi1", [(0.4, 1.3), (-1.0, 0.5), (0.0, -0.8)])
def test_transformed_variable_solves_the_flow_ode(phi0, phi1):
    sol = solve_ivp(lambda _, y: phi0 + phi1 * y, (0, 1.2), [0.7], rtol=1e-12, atol=1e-12)
    assert abs(sol.y[0, -1] - u_hat_value(0.7, 1.2, phi0, phi1).real) < 1e-9


def test_half_period_sign_flip():
    assert abs(u_hat_value(0.9, cmath.pi * 1j, 0.0, 1.0) + 0.9) < 1e-12


# ---------------------------------------------------------------- discrete

@pytest.mark.parametrize("abg", [(1, 3, 6), (0, 0, 6), (0, 2, -1)])
def test_no_discrete_symmetry_when_gamma_nonzero(abg):
    assert discrete_symmetries_dp1(DP1Params(*abg)) == []


@pytest.mark.parametrize("abg", [(1, 3, 0), (0, 0, 0), (0, 5, 0)])
def test_sign_flip_when_gamma_zero(abg):
    (T,) = discrete_symmetries_dp1(DP1Params(*abg))
    assert T.describe() == "x^ = x, u^ = -u"
    rep = check_form_invariance(T, dp1_system(DP1Params(*abg)), trials=100, tol=1e-9)
    assert rep.admissible


def test_sign_flip_direct_substitution():
    # independent of the pipeline: substitute u -> -u at all three sites
    for g, expect in [(0, True), (6, False)]:
        delta = U_PLUS + U + U_MINUS - (X + 3) / U - g
        flipped = delta.xreplace({U: -U, U_PLUS: -U_PLUS, U_MINUS: -U_MINUS})
        assert is_identically_zero(flipped + delta, singular=[U]) is expect


def test_chain_is_explained():
    chain = discrete_chain(DP1Params(1, 3, 0))
    assert any("K2 = 0" in s for s in chain.steps)
    assert len(chain.transformations) == 1


def test_flow_periodicity_uses_k2_zero():
    sol = flow_solution(DP1Params(1, 3, 0))
    F = sol.specialize(sol.F, phi0=lambda n: 0, k2=0).xreplace({K1: 1})
    assert K2 not in F.free_symbols
    diff = F.xreplace({LAM: sp.pi * sp.I}) - F.xreplace({LAM: 0})
    assert is_identically_zero(diff, singular=[U])


def test_volterra_determining_equation():
    d = volterra_determining_equation()
    assert d["underdetermined"] and "phi(t, u)" in d["unknowns"]
    assert "tau" in d["equation"]


@pytest.mark.parametrize("seed", range(20))
def test_numeric_dp1_orbits_are_mapped(seed):
    # iterate the recurrence for gamma = 0 and check -u is again an orbit
    rng = np.random.default_rng(seed)
    h, a, b = 0.5, rng.uniform(-2, 2), rng.uniform(-2, 2)
    u = list(rng.uniform(0.5, 1.5, 2))
    for n in range(1, 12):
        u.append((a * n * h + b) / u[n] - u[n] - u[n - 1])
    u = np.array(u)

    def residual(v):
        return max(abs(v[n + 1] + v[n] + v[n - 1] - (a * n * h + b) / v[n]) for n in range(1, 12))

    scale = np.abs(u).max() + np.abs(1 / u).max()
    assert residual(-u) <= 10 * max(residual(u), 1e-12 * scale)
    assert residual(-u + 0.1) > 1e-3
