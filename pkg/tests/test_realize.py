import pytest
import sympy as sp

from lattice_lie.autosolve import check_automorphism
from lattice_lie.exprsym import is_identically_zero, var
from lattice_lie.latfield import DifferenceSystem, LatticeVectorField, express_in_basis, load_fields
from lattice_lie.liealg import LieAlgebra
from lattice_lie.realize import (
    PointTransformation,
    RealizationError,
    StageError,
    check_form_invariance,
    classify_instance,
    compose,
    discrete_generators,
    group_closure,
    identity_transformation,
    inverse,
    mapping_ratio,
    realization_system,
    realize_family,
    run_pipeline,
    same_map,
    solve_realization,
    toda_trajectory,
    transformed_residual,
    volterra_trajectory,
)

from conftest import H73, data, toda_algebra, toda_normalized, toda_pipeline

t = sp.Symbol("t")
x, u = var("x", {"n": 0}), var("u", {"n": 0})
COORDS = [("t", t), ("x", x), ("u", u)]
c1, c2 = sp.symbols("c1 c2")


def T(tm, xm, um, params=()):
    return PointTransformation({"t": tm, "x": xm, "u": um}, list(COORDS), tuple(params))


def _inst(fields, h=H73):
    return [LatticeVectorField({k: v.subs("h", h) for k, v in X.xi.items()}, X.phi.subs(sp.Symbol("h"), h))
            for X in fields]


@pytest.fixture(scope="module")
def toda_S73():
    from lattice_lie.realize import _instantiate_system

    return _instantiate_system(DifferenceSystem.load(data("toda_equation.json")), H73)


@pytest.fixture(scope="module")
def toda_X73():
    return _inst(load_fields(data("toda_fields.json")))


def _family(label):
    return {F.branch: F for F in toda_normalized()}[label]


# ---------------------------------------------------------------- transformations

def test_describe_and_identity():
    assert T(-t, x, u).describe() == "t^ = -t, x^ = x, u^ = u"
    assert identity_transformation(COORDS).is_identity()
    assert not T(-t, x, u).is_identity()


def test_compose_and_inverse():
    A, B = T(2 * t + 1, x, u), T(t, -x, 3 * u)
    AB = compose(A, B)
    assert AB.maps == {"t": 2 * t + 1, "x": -x, "u": 3 * u}
    assert compose(inverse(AB), AB).is_identity()
    assert same_map(compose(A, B), compose(B, A))


def test_spacing_of_reflection(toda_S73):
    assert T(t, -x, -u).spacing(toda_S73) == {"x": -H73}


# ---------------------------------------------------------------- realization

def test_case_a_realization(toda_S73, toda_X73):
    res = realize_family(_family("b52=0 & b55=+1"), toda_X73, toda_S73)
    (Tr,) = res.transformations
    assert Tr.maps == {"t": c1 * t, "x": c2 * x, "u": c2 * u}
    assert set(Tr.nonvanishing) >= {c1, c2}


def test_case_b_has_no_affine_realization(toda_S73, toda_X73):
    res = realize_family(_family("b33=0 & b55=-1"), toda_X73, toda_S73)
    assert res.transformations == []
    assert res.diagnostic.startswith("no affine realization: field X4")


def test_realization_system_shape(toda_S73, toda_X73):
    system = realization_system(_family("b52=0 & b55=+1"), toda_X73, toda_S73)
    assert {j for j, _, _ in system.equations} <= set(range(1, 6))
    assert solve_realization(system, toda_X73).transformations


@pytest.mark.parametrize("vals", [(2, 3), (-1, 1), (sp.Rational(1, 2), -5)])
def test_pushforward_is_an_automorphism(toda_S73, toda_X73, vals):
    # independent route: push each field through the map, read off the matrix, test it
    Tr = T(vals[0] * t, vals[1] * x, vals[1] * u)
    inv = {s: sp.solve(sp.Symbol("y") - Tr.maps[n], s)[0].subs(sp.Symbol("y"), s) for n, s in COORDS}
    J = Tr.jacobian()
    cols = []
    for X in toda_X73:
        comps = sp.Matrix([X.xi.get("t", 0), X.xi.get("x", 0), X.phi])
        pushed = (J * comps).applyfunc(lambda e: sp.expand(e.xreplace(inv)))
        Y = LatticeVectorField({"t": pushed[0], "x": pushed[1]}, pushed[2])
        cols.append(express_in_basis(Y, toda_X73, toda_S73))
    assert all(c is not None for c in cols)
    Phi = sp.Matrix(cols).T
    assert check_automorphism(toda_algebra(), Phi)


# ---------------------------------------------------------------- form invariance

def test_case_a_admissible_signs(toda_S73, toda_X73):
    rep = check_form_invariance(T(c1 * t, c2 * x, c2 * u, (c1, c2)), toda_S73, toda_X73)
    got = {(a.params[c1], a.params[c2]): a.tag for a in rep.admissible}
    assert got == {(1, 1): "continuous", (1, -1): "discrete", (-1, 1): "discrete", (-1, -1): "discrete"}


@pytest.mark.parametrize("maps", [(-t, x, u), (t, -x, -u), (-t, -x, -u), (t + 5, x + H73, u - 3)])
def test_transformed_residual_vanishes(toda_S73, maps):
    Tr = T(*maps)
    sigma = -1 if maps[1] == -x else 1
    R = transformed_residual(Tr, toda_S73, sigma)
    assert is_identically_zero(R, free_vars=toda_S73.variables())


@pytest.mark.parametrize("maps", [(2 * t, x, u), (t, x, -u), (t, -x, u), (t, x, 2 * u)])
def test_non_symmetries_not_admissible(toda_S73, toda_X73, maps):
    assert check_form_invariance(T(*maps), toda_S73, toda_X73).admissible == []


def test_singular_map_rejected(toda_S73):
    with pytest.raises(RealizationError):
        check_form_invariance(T(t, x, 0 * u), toda_S73)


def test_classification(toda_S73, toda_X73):
    assert classify_instance(T(t, x, u), toda_S73, toda_X73) == "continuous"
    assert classify_instance(T(-t, x, u), toda_S73, toda_X73) == "discrete"
    # a flow of t d/dt - (2x/h) d/du composed with translations stays continuous
    lam = sp.Rational(1, 3)
    flow = T(sp.exp(lam) * t, x, u - 2 * lam * x / H73)
    assert classify_instance(flow, toda_S73, toda_X73) == "continuous"


# ---------------------------------------------------------------- group structure

def test_toda_generators_form_klein_four(toda_S73, toda_X73):
    gens = toda_pipeline().discrete
    group = group_closure(gens)
    assert len(group) == 4
    for g in group:
        assert compose(g, g).is_identity()
        for k in group:
            assert any(same_map(compose(g, k), m) for m in group)
            assert same_map(compose(g, k), compose(k, g))


def test_discrete_generators_modulo_continuous(toda_S73, toda_X73):
    inst = [T(-t, x, u), T(t, -x, -u), T(-t, -x, -u)]
    gens = discrete_generators(inst, toda_S73, toda_X73)
    assert [g.describe() for g in gens] == ["t^ = -t, x^ = x, u^ = u", "t^ = t, x^ = -x, u^ = -u"]


# ---------------------------------------------------------------- solution mapping

@pytest.mark.parametrize("maps", [(-t, x, u), (t, -x, -u)])
def test_mapped_trajectory_residual(toda_S73, maps):
    ts, xs, U = toda_trajectory(n_sites=11, steps=200, dt=1e-3)
    r0, r1 = mapping_ratio(T(*maps), toda_S73, ts, xs, U)
    assert r1 <= 10 * r0


def test_discrete_generators_map_twenty_trajectories(toda_S73):
    gens = toda_pipeline().discrete
    for seed in range(20):
        ts, xs, U = toda_trajectory(seed=seed)
        for g in gens:
            r0, r1 = mapping_ratio(g, toda_S73, ts, xs, U)
            assert r1 <= 10 * r0


def test_wrong_map_blows_up_residual(toda_S73):
    ts, xs, U = toda_trajectory()
    r0, r1 = mapping_ratio(T(t, x, 2 * u), toda_S73, ts, xs, U)
    assert r1 > 1e3 * r0


# ---------------------------------------------------------------- end to end

def test_toda_pipeline():
    report = toda_pipeline()
    assert [g.describe() for g in report.discrete] == ["t^ = -t, x^ = x, u^ = u", "t^ = t, x^ = -x, u^ = -u"]
    diag = [r.diagnostic for _, r in report.realizations if r.diagnostic]
    assert len(diag) == 1 and "no affine realization" in diag[0]


def test_volterra_pipeline_finds_sign_symmetries():
    report = run_pipeline(LieAlgebra.load(data("volterra_algebra.json")),
                          load_fields(data("volterra_fields.json")),
                          DifferenceSystem.load(data("volterra_equation.json")))
    found = {g.describe() for g in report.discrete}
    assert found == {"t^ = -t, x^ = -x, u^ = u", "t^ = -t, x^ = x, u^ = -u"}
    assert len(group_closure(report.discrete)) == 4


def test_volterra_symmetries_map_solutions():
    from lattice_lie.realize import _instantiate_system

    S = _instantiate_system(DifferenceSystem.load(data("volterra_equation.json")), H73)
    ts, xs, U = volterra_trajectory()
    for maps in [(-t, -x, u), (-t, x, -u), (t, -x, -u)]:
        r0, r1 = mapping_ratio(T(*maps), S, ts, xs, U)
        assert r1 <= 10 * r0
    r0, r1 = mapping_ratio(T(-t, x, u), S, ts, xs, U)
    assert r1 > 1e3 * r0


def test_abelian_toy_has_no_discrete_symmetry():
    report = run_pipeline(LieAlgebra.load(data("abelian_1d.json")),
                          load_fields(data("abelian_toy_fields.json")),
                          DifferenceSystem.load(data("abelian_toy_equation.json")))
    assert report.discrete == []
    (rep,) = report.invariance
    assert [a.tag for a in rep.admissible] == ["continuous"]


def test_stage_errors_carry_stage_name():
    with pytest.raises(StageError) as err:
        run_pipeline(toda_algebra(), load_fields(data("volterra_fields.json")),
                     DifferenceSystem.load(data("toda_equation.json")))
    assert err.value.stage == "verify"
    with pytest.raises(StageError) as err:
        run_pipeline(LieAlgebra.abelian(5), load_fields(data("toda_fields.json")),
                     DifferenceSystem.load(data("toda_equation.json")))
    assert err.value.stage == "verify"


def test_pipeline_json_is_stable():
    a = toda_pipeline().to_json()
    assert a == toda_pipeline().to_json()
    assert [d["text"] for d in a["discrete"]] == ["t^ = -t, x^ = x, u^ = u", "t^ = t, x^ = -x, u^ = -u"]
    assert len(a["families"]) == 2
