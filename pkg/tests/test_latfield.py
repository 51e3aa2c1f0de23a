import json

import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from lattice_lie.exprsym import var
from lattice_lie.latfield import (
    DifferenceSystem,
    LatticeVectorField,
    bracket,
    express_in_basis,
    invariance_residual,
    is_symmetry,
    lattice_residuals,
    lattice_rule,
    load_fields,
    prolong,
    verify_symmetry_algebra,
)
from lattice_lie.liealg import H

from conftest import data, toda_algebra

t = sp.Symbol("t")
u0, u1, um = var("u", {"n": 0}), var("u", {"n": 1}), var("u", {"n": -1})
x0, x1 = var("x", {"n": 0}), var("x", {"n": 1})
u_t, u_tt = var("u", {"n": 0}, "t"), var("u", {"n": 0}, "tt")


@pytest.fixture(scope="module")
def toda_eq():
    return DifferenceSystem.load(data("toda_equation.json"))


@pytest.fixture(scope="module")
def toda_fields():
    return load_fields(data("toda_fields.json"))


def test_toda_equation_loaded(toda_eq):
    assert sp.expand(toda_eq.delta - (u_tt - sp.exp(u1 - u0) + sp.exp(u0 - um))) == 0
    assert toda_eq.lattice[0].coord == "x" and toda_eq.lattice[0].step == H
    assert toda_eq.continuous == ("t",)


def test_system_json_round_trip(toda_eq, tmp_path):
    path = tmp_path / "eq.json"
    path.write_text(json.dumps(toda_eq.to_json()))
    again = DifferenceSystem.load(path)
    assert sp.expand(again.delta - toda_eq.delta) == 0
    assert again.to_json() == toda_eq.to_json()


def test_non_uniform_lattice_rejected():
    with pytest.raises(ValueError):
        lattice_rule(x1 - x0 ** 2)


@pytest.mark.parametrize("k", range(5))
def test_toda_fields_are_symmetries(toda_eq, toda_fields, k):
    assert is_symmetry(toda_fields[k], toda_eq)


@pytest.mark.parametrize("X", [
    LatticeVectorField({}, u0),
    LatticeVectorField({"x": x0}, 0),
    LatticeVectorField({"t": t}, 0),
    LatticeVectorField({"t": t ** 2}, 0),
    LatticeVectorField({}, x0 ** 2),
])
def test_non_symmetries_rejected(toda_eq, X):
    assert not is_symmetry(X, toda_eq)


def test_dilation_of_x_breaks_the_lattice(toda_eq):
    (r,) = lattice_residuals(LatticeVectorField({"x": x0}, 0), toda_eq)
    assert sp.expand(r - H) == 0


# second prolongation against the characteristic formula D_t^2(phi - tau u_t) + tau u_ttt

coeffs = st.integers(-3, 3)


@given(coeffs, coeffs, coeffs, coeffs, coeffs)
@settings(max_examples=25, deadline=None)
def test_second_prolongation_matches_characteristic_form(a0, a1, a2, c1, c2):
    tau = a0 + a1 * t + a2 * t ** 2
    phi_of = lambda T, X, U: c1 * U * T + c2 * T ** 2 + X * T  # noqa: E731
    S = DifferenceSystem.load(data("toda_equation.json"))
    X = LatticeVectorField({"t": tau}, phi_of(t, x0, u0))
    got = prolong(X, S).get(u_tt, 0)

    f = sp.Function("f")(t)
    Q = phi_of(t, x0, f) - tau * f.diff(t)
    want = Q.diff(t, 2) + tau * f.diff(t, 3)
    want = want.subs({f.diff(t, 3): sp.Symbol("F3")}).subs({f.diff(t, 2): u_tt}).subs(
        {f.diff(t): u_t}).subs({f: u0})
    assert sp.expand(got - want) == 0


def test_prolongation_covers_stencil(toda_eq, toda_fields):
    pr = prolong(toda_fields[4], toda_eq)
    assert pr[u1] == -2 * x1 / H and pr[um] == -2 * var("x", {"n": -1}) / H
    assert pr[u_tt] == -2 * u_tt and pr[t] == t


def test_structure_constants_recovered_exactly(toda_eq, toda_fields):
    report = verify_symmetry_algebra(toda_fields, toda_eq)
    assert report.ok
    assert report.algebra.c == toda_algebra().c


def test_brackets_antisymmetric_and_jacobi(toda_eq, toda_fields):
    F = toda_fields
    for i in range(5):
        for j in range(5):
            assert (bracket(F[i], F[j], toda_eq) + bracket(F[j], F[i], toda_eq)).is_zero()
    for i in range(5):
        for j in range(5):
            for k in range(5):
                J = (bracket(F[i], bracket(F[j], F[k], toda_eq), toda_eq)
                     + bracket(F[j], bracket(F[k], F[i], toda_eq), toda_eq)
                     + bracket(F[k], bracket(F[i], F[j], toda_eq), toda_eq))
                assert J.is_zero()


def test_outside_the_span(toda_eq, toda_fields):
    assert express_in_basis(LatticeVectorField({}, t ** 2), toda_fields, toda_eq) is None
    c = express_in_basis(LatticeVectorField({"t": 3}, 2 * t), toda_fields, toda_eq)
    assert c == [0, 0, 3, 2, 0]


def test_closure_failure_reported(toda_eq):
    fields = [LatticeVectorField({"t": 1}, 0), LatticeVectorField({}, t ** 2)]
    report = verify_symmetry_algebra(fields, toda_eq)
    assert report.algebra is None and "not in the span" in report.failure
    assert report.symmetric == [True, False]


def test_volterra_fields():
    S = DifferenceSystem.load(data("volterra_equation.json"))
    fields = load_fields(data("volterra_fields.json"))
    report = verify_symmetry_algebra(fields, S)
    assert report.ok
    assert report.algebra.nonzero_brackets() == {(1, 2): {1: 1}}


def test_volterra_rejects_u_translation():
    S = DifferenceSystem.load(data("volterra_equation.json"))
    assert not is_symmetry(LatticeVectorField({}, 1), S)


def test_invariance_residual_of_time_dilation(toda_eq):
    # t d/dt alone scales u_tt but not the right-hand side
    r = invariance_residual(LatticeVectorField({"t": t}, 0), toda_eq)
    assert sp.simplify(r + 2 * (sp.exp(u1 - u0) - sp.exp(u0 - um))) == 0
