"""Realizing algebra automorphisms as point transformations and testing them on the equation."""
from __future__ import annotations

import itertools
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
import sympy as sp
from scipy.integrate import solve_ivp

from .autosolve import AutFamily, CaseSplitSolver, canonical, split_factors
from .exprsym import VarId, is_identically_zero, shift, site_vars, to_json, var
from .latfield import DifferenceSystem, LatticeVectorField, _coordinates
from .liealg import H

log = logging.getLogger(__name__)


class RealizationError(ValueError):
    pass


# --------------------------------------------------------------------------
# point transformations

@dataclass
class PointTransformation:
    """Maps ``coord -> expression`` for every coordinate, in base-site symbols."""

    maps: dict
    coords: list  # [(name, symbol)], dependent variable last
    params: tuple = ()
    nonvanishing: tuple = ()
    tag: str = "unclassified"
    note: str = ""

    def image(self, name: str) -> sp.Expr:
        return self.maps[name]

    def spacing(self, S: DifferenceSystem, strict: bool = True) -> dict:
        """Image of each lattice step: ``x^(n+1) - x^(n)`` evaluated on the lattice."""
        out = {}
        for r in S.lattice:
            img = self.maps.get(r.coord)
            if img is None:
                continue
            step = S.on_lattice(shift(img, r.axis, 1)) - img
            step = sp.simplify(step)
            if strict and _depends_on_sites(step):
                raise RealizationError(f"image of the {r.coord}-lattice is not uniform: {step}")
            out[r.coord] = step
        return out

    def instantiate(self, values: dict) -> "PointTransformation":
        vals = {sp.Symbol(str(k)) if isinstance(k, str) else k: sp.sympify(v) for k, v in values.items()}
        return PointTransformation({k: sp.expand(v.xreplace(vals)) for k, v in self.maps.items()}, self.coords,
                                   tuple(p for p in self.params if p not in vals), (), self.tag, self.note)

    def is_identity(self) -> bool:
        return all(sp.expand(self.maps[name] - sym) == 0 for name, sym in self.coords)

    def jacobian(self) -> sp.Matrix:
        syms = [s for _, s in self.coords]
        return sp.Matrix([[sp.diff(self.maps[n], s) for s in syms] for n, _ in self.coords])

    def describe(self) -> str:
        parts = []
        for name, _ in self.coords:
            parts.append(f"{name}^ = {_plain(self.maps[name])}")
        return ", ".join(parts)

    def to_json(self) -> dict:
        out = {"map": {name: to_json(self.maps[name]) for name, _ in self.coords},
               "text": self.describe(), "class": self.tag}
        if self.params:
            out["params"] = [str(p) for p in self.params]
            out["nonvanishing"] = [to_json(f) for f in self.nonvanishing]
        if self.note:
            out["note"] = self.note
        return out

    def key(self):
        return tuple(str(sp.expand(self.maps[n])) for n, _ in self.coords)


def _depends_on_sites(e: sp.Expr) -> bool:
    return bool(site_vars(e)) or any(s.name in ("t",) for s in e.free_symbols)


def _plain(e: sp.Expr) -> str:
    """Readable form with base-site brackets dropped."""
    ren = {}
    for s, vid in site_vars(e):
        if all(k == 0 for _, k in vid.offset):
            ren[s] = sp.Symbol(VarId(vid.name, (), vid.deriv).symbol_name)
    return str(e.xreplace(ren))


def identity_transformation(coords) -> PointTransformation:
    return PointTransformation({n: s for n, s in coords}, list(coords))


def compose(T2: PointTransformation, T1: PointTransformation) -> PointTransformation:
    """``T2 after T1``."""
    sub = {s: T1.maps[n] for n, s in T1.coords}
    maps = {n: sp.expand(T2.maps[n].xreplace(sub)) for n, _ in T2.coords}
    return PointTransformation(maps, T2.coords)


def inverse(T: PointTransformation) -> PointTransformation:
    syms = [s for _, s in T.coords]
    targets = sp.symbols(f"_y0:{len(syms)}")
    sol = sp.solve([T.maps[n] - y for (n, _), y in zip(T.coords, targets)], syms, dict=True)
    if len(sol) != 1:
        raise RealizationError("transformation is not invertible in closed form")
    back = dict(zip(targets, syms))
    return PointTransformation({n: sp.expand(sol[0][s].xreplace(back)) for n, s in T.coords}, T.coords)


def same_map(T1: PointTransformation, T2: PointTransformation) -> bool:
    return all(sp.simplify(T1.maps[n] - T2.maps[n]) == 0 for n, _ in T1.coords)


# --------------------------------------------------------------------------
# realization system

ANSATZ_PREFIX = "a"


@dataclass
class RealizationSystem:
    family: AutFamily
    coords: list
    ansatz: dict
    unknowns: list
    equations: list  # [(j, coord name, equation)]
    phi_inverse: sp.Matrix

    def by_field(self, j: int) -> list:
        return [e for jj, _, e in self.equations if jj == j]

    def raw(self, j: int) -> dict:
        """Unmatched equations ``X_j(y^) - (Phi^-1)_ij coef_i(y^)`` per coordinate for field j."""
        return self._raw[j]


def _components(X: LatticeVectorField, coords) -> dict:
    out = {name: X.xi.get(name, sp.Integer(0)) for name, _ in coords[:-1]}
    out[coords[-1][0]] = X.phi
    return out


def realization_system(F: AutFamily, fields: Sequence[LatticeVectorField], S: DifferenceSystem) -> RealizationSystem:
    """Equations for an affine point map whose pushforward acts on the fields as ``F``."""
    n = len(fields)
    if F.matrix.shape != (n, n):
        raise RealizationError(f"family has size {F.matrix.shape[0]} but there are {n} fields")
    det = sp.expand(F.matrix.det(method="berkowitz"))
    if det == 0:
        raise RealizationError("automorphism matrix is singular")
    Phi_inv = F.matrix.inv(method="ADJ").applyfunc(sp.cancel)
    coords = _coordinates(fields, S)
    syms = [s for _, s in coords]
    ansatz, unknowns = {}, []
    for name, _ in coords:
        cs = [sp.Symbol(f"{ANSATZ_PREFIX}{name}{k}") for k in range(len(coords) + 1)]
        unknowns.extend(cs)
        ansatz[name] = cs[0] + sum(c * s for c, s in zip(cs[1:], syms))
    hat = {s: ansatz[name] for name, s in coords}
    comps = [_components(X, coords) for X in fields]
    equations, raw = [], {}
    for j in range(n):
        raw[j + 1] = {}
        for name, _ in coords:
            lhs = sum(comps[j][z] * sp.diff(ansatz[name], s) for z, s in coords)
            rhs = sum(Phi_inv[i, j] * comps[i][name].xreplace(hat) for i in range(n) if Phi_inv[i, j] != 0)
            eq = sp.together(lhs - rhs)
            raw[j + 1][name] = eq
            num = sp.expand(sp.numer(eq))
            if num == 0:
                continue
            try:
                poly = sp.Poly(num, *syms)
            except sp.PolynomialError as err:
                raise RealizationError(f"fields are not polynomial in the coordinates: {err}") from err
            for c in poly.coeffs():
                c = sp.expand(c)
                if c != 0:
                    equations.append((j + 1, name, c))
    system = RealizationSystem(F, coords, ansatz, unknowns, equations, Phi_inv)
    system._raw = raw
    return system


@dataclass
class RealizationResult:
    transformations: list
    diagnostic: str = ""

    @property
    def realized(self) -> bool:
        return bool(self.transformations)


def _jacobian_prune(ansatz, coords):
    syms = [s for _, s in coords]
    J = sp.Matrix([[sp.diff(ansatz[n], s) for s in syms] for n, _ in coords])

    def prune(solution):
        d = sp.expand(sp.numer(sp.together(J.xreplace(solution).det(method="berkowitz"))))
        if d == 0:
            return None
        return [d] if len(sp.Add.make_args(d)) <= 4 else []
    return prune


def _solve(system: RealizationSystem, eqs):
    F = system.family
    nonvanishing = list(F.nonvanishing) + [H]
    solver = CaseSplitSolver(system.unknowns + list(F.free), nonvanishing,
                             prune=_jacobian_prune(system.ansatz, system.coords))
    return solver.solve(eqs)


def _first_inconsistent(system, eqs) -> sp.Expr:
    for e in eqs:
        if e.is_number:
            return e
    for k in range(1, len(eqs) + 1):
        if not _solve(system, eqs[:k]):
            return eqs[k - 1]
    return eqs[-1]


def solve_realization(system: RealizationSystem, fields: Sequence[LatticeVectorField] | None = None,
                      seed: int = 42) -> RealizationResult:
    """All affine solutions, modulo continuous symmetries, with coefficients renamed c1, c2, ..."""
    eqs = [e for _, _, e in system.equations]
    leaves = _solve(system, eqs) if eqs else None
    if leaves is not None and not leaves:
        bad = _first_inconsistent(system, eqs)
        j, name = next((jj, nm) for jj, nm, e in system.equations if e == bad)
        raw = sp.factor(system.raw(j)[name])
        return RealizationResult([], f"no affine realization: field X{j}, {name}-component gives "
                                     f"{_plain(raw)} = 0, inconsistent ({bad} = 0)")
    coords = system.coords
    F = system.family
    out = []
    leaf_list = leaves if leaves is not None else [None]
    for leaf in leaf_list:
        sol = leaf.solution if leaf is not None else {}
        free = list(leaf.free) if leaf is not None else list(system.unknowns) + list(F.free)
        maps = {n: sp.expand(sp.cancel(system.ansatz[n].xreplace(sol))) for n, _ in coords}
        nonvanishing = list(leaf.nonvanishing) if leaf is not None else list(F.nonvanishing)
        # drop parameters that only compose with a continuous symmetry
        if fields is not None:
            for p in [q for q in free if q in system.unknowns]:
                if not any(p in m.free_symbols for m in maps.values()):
                    continue
                if _variation_in_span(maps, p, fields, coords, seed):
                    maps = {n: sp.expand(m.xreplace({p: 0})) for n, m in maps.items()}
                    nonvanishing = [canonical(f.xreplace({p: 0})) for f in nonvanishing]
        T = _reparametrize(maps, coords, nonvanishing)
        if any(sp.expand(f) == 0 for f in T.nonvanishing):
            continue
        T.note = "branch " + (" & ".join(leaf.label) if leaf is not None and leaf.label else "generic")
        if not any(same_map(T, U) and T.params == U.params for U in out):
            out.append(T)
    return RealizationResult(out)


def _variation_in_span(maps, p, fields, coords, seed) -> bool:
    """Is d(map)/dp a constant combination of the fields at the image point?"""
    hat = {s: maps[n] for n, s in coords}
    target = [sp.diff(maps[n], p) for n, _ in coords]
    cols = [[c.xreplace(hat) for c in _components(X, coords).values()] for X in fields]
    syms = sorted(set().union(*[e.free_symbols for e in target + [c for col in cols for c in col]])
                  & {s for _, s in coords}, key=sp.default_sort_key)
    rng = random.Random(seed)
    ks = sp.symbols(f"_k0:{len(fields)}")
    rows = []
    for _ in range(len(fields) + 3):
        pt = {s: sp.Rational(rng.randint(-9, 9), rng.randint(1, 4)) for s in syms}
        for r in range(len(coords)):
            rows.append(sp.expand(target[r].xreplace(pt) - sum(k * col[r].xreplace(pt) for k, col in zip(ks, cols))))
    sol = sp.solve(rows, ks, dict=True)
    if not sol:
        return False
    kv = {k: sol[0].get(k, 0) for k in ks}
    for r in range(len(coords)):
        diff = target[r] - sum(kv[k] * col[r] for k, col in zip(ks, cols))
        if not is_identically_zero(sp.expand(diff), seed=seed):
            return False
    return True


def _reparametrize(maps, coords, nonvanishing) -> PointTransformation:
    """Rename distinct non-constant coefficient expressions c1, c2, ... when that is a change of variables."""
    syms = [s for _, s in coords]
    exprs = []
    for n, _ in coords:
        poly = sp.Poly(maps[n], *syms)
        for coeff in poly.coeffs():
            c = sp.factor(coeff)
            if not c.is_number and c not in exprs and -c not in exprs:
                exprs.append(c)
    params = sorted(set().union(*[e.free_symbols for e in exprs]) if exprs else set(), key=sp.default_sort_key)
    if not exprs:
        return PointTransformation(maps, list(coords))
    jac = sp.Matrix([[sp.diff(e, p) for p in params] for e in exprs])
    cs = sp.symbols(f"c1:{len(exprs) + 1}")
    if len(exprs) == len(params) and sp.simplify(jac.det()) != 0:
        sol = sp.solve([c - e for c, e in zip(cs, exprs)], params, dict=True)
        if len(sol) == 1:
            back = sol[0]
            new_maps = {n: sp.expand(sp.factor(m.xreplace(back))) for n, m in maps.items()}
            nv = []
            for f in nonvanishing:
                for g in split_factors(sp.together(f.xreplace(back))):
                    if g not in nv:
                        nv.append(g)
            jdet = sp.Matrix([[sp.diff(new_maps[n], s) for s in syms] for n, _ in coords]).det()
            nv += [g for g in split_factors(sp.expand(jdet)) if g not in nv and not g.is_number]
            return PointTransformation(new_maps, list(coords), tuple(c for c in cs), tuple(nv))
    return PointTransformation(maps, list(coords), tuple(params), tuple(nonvanishing))


def realize_family(F: AutFamily, fields, S, seed=42) -> RealizationResult:
    return solve_realization(realization_system(F, fields, S), fields, seed)


# --------------------------------------------------------------------------
# form invariance

@dataclass
class Admissible:
    params: dict
    transformation: PointTransformation
    tag: str

    def to_json(self) -> dict:
        return {"params": {str(k): str(v) for k, v in self.params.items()}, "class": self.tag,
                "map": {n: to_json(self.transformation.maps[n]) for n, _ in self.transformation.coords},
                "text": self.transformation.describe()}


@dataclass
class FormInvarianceReport:
    family: PointTransformation
    admissible: list = field(default_factory=list)
    conditions: list = field(default_factory=list)

    @property
    def discrete(self) -> list:
        return [a for a in self.admissible if a.tag == "discrete"]

    def to_json(self) -> dict:
        return {"family": self.family.to_json(), "conditions": [str(c) for c in self.conditions],
                "admissible": [a.to_json() for a in self.admissible]}


def _split_map(T: PointTransformation, S: DifferenceSystem):
    """Check the map has the separated shape and return its pieces."""
    u = S.u
    coord_syms = {n: s for n, s in T.coords}
    ind = {n: s for n, s in T.coords if n != S.dependent}
    for n, s in ind.items():
        others = set(coord_syms.values()) - {s}
        if T.maps[n].free_symbols & others:
            raise RealizationError(f"image of {n} must depend on {n} only")
    img_u = T.maps[S.dependent]
    alpha = sp.diff(img_u, u)
    if alpha.free_symbols & set(coord_syms.values()):
        raise RealizationError("image of u must be affine in u with constant slope")
    d = sp.expand(img_u - alpha * u)
    return ind, alpha, d


def transformed_residual(T: PointTransformation, S: DifferenceSystem, sigma: int = 1) -> sp.Expr:
    """The equation written for the transformed solution, restricted to solutions of the original.

    ``sigma`` is the orientation: hatted site ``m + k`` corresponds to original site ``n + k*sigma``.
    """
    ind, alpha, d = _split_map(T, S)
    axes = S.axes
    if len(axes) != 1:
        raise RealizationError("form invariance is implemented for one lattice axis")
    axis = axes[0]
    # inverse of the independent-variable maps (hatted symbols reuse the original names)
    inv = {}
    for n, s in ind.items():
        y = sp.Dummy("y")
        sol = sp.solve(T.maps[n] - y, s)
        if len(sol) != 1:
            raise RealizationError(f"image of {n} is not invertible")
        inv[n] = (s, sol[0], y)
    sub = {}
    # derivative scale for continuous coordinates: d/dt = (dt^/dt) d/dt^
    t_scale = {n: sp.diff(T.maps[n], s) for n, s in ind.items() if n in S.continuous}
    if any(v.free_symbols & set(ind.values()) for v in t_scale.values()):
        raise RealizationError("images of continuous coordinates must be affine")
    d_site = lambda k: S.on_lattice(shift(d, axis, k))
    delta = S.on_lattice(S.delta)
    for s, vid in site_vars(delta):
        if vid.name != S.dependent:
            continue
        k = vid.offset_on(axis) or 0
        new = VarId(vid.name, ((axis, k * sigma),), vid.deriv).symbol
        dk = d_site(k)
        scale = sp.Integer(1)
        for tn in vid.deriv:
            scale *= t_scale[tn]
            dk = sp.diff(dk, sp.Symbol(tn))
        sub[s] = (scale * new - dk) / alpha
    # then original t and x are expressed through the inverse maps
    expr = delta.xreplace(sub)
    back = {}
    for n, (s, e, y) in inv.items():
        back[s] = e.xreplace({y: s})
    expr = expr.xreplace(back) if back else expr
    return S.on_shell(expr)


def _param_conditions(R: sp.Expr, params) -> list | None:
    """Group terms of R into (parameter part) x (variable part); None when parameters sit inside exp."""
    num = sp.expand(sp.numer(sp.together(R)))
    pset = set(params)
    groups: dict = {}
    for term in sp.Add.make_args(num):
        ppart, vpart = sp.Integer(1), sp.Integer(1)
        for f in sp.Mul.make_args(term):
            fs = f.free_symbols
            if fs and fs <= pset:
                ppart *= f
            elif fs & pset:
                return None
            else:
                if f.is_number:
                    ppart *= f
                else:
                    vpart *= f
        groups[vpart] = groups.get(vpart, 0) + ppart
    return [sp.expand(v) for v in groups.values() if sp.expand(v) != 0]


def check_form_invariance(T: PointTransformation, S: DifferenceSystem,
                          fields: Sequence[LatticeVectorField] | None = None,
                          trials: int = 20, tol: float = 1e-9, seed: int = 42) -> FormInvarianceReport:
    """Parameter values for which ``T`` maps solutions of ``S`` to solutions, each classified."""
    params = list(T.params)
    report = FormInvarianceReport(T)
    J = T.jacobian()
    det = sp.expand(J.det())
    rng = random.Random(seed)
    if det == 0 or all(_num(det, params, rng) == 0 for _ in range(5)):
        raise RealizationError("transformation is not invertible")
    spacing = T.spacing(S, strict=False) if S.lattice else {}
    found = []
    for sigma in (1, -1):
        lattice_eqs = []
        for r in S.lattice:
            if r.coord not in spacing:
                continue
            # the image lattice must again have constant step sigma*h
            num = sp.expand(sp.numer(sp.together(spacing[r.coord] - sigma * r.step)))
            sites = [v for v, _ in site_vars(num)] + [sp.Symbol(c) for c in S.continuous]
            if num != 0:
                lattice_eqs.extend(sp.Poly(num, *sites).coeffs() if sites else [num])
        lattice_eqs = [sp.expand(e) for e in lattice_eqs if sp.expand(e) != 0]
        if not spacing and sigma == -1:
            continue
        for lat_sol in _solve_params(lattice_eqs, params, T.nonvanishing):
            Ts = T.instantiate(lat_sol) if lat_sol else T
            rest = [p for p in params if p not in lat_sol]
            R = transformed_residual(Ts, S, sigma)
            conds = _param_conditions(R, rest)
            if conds is None:
                candidates = _candidate_values(rest, Ts.nonvanishing)
            else:
                report.conditions.extend(conds)
                candidates = []
                for sol in _solve_params(conds, rest, Ts.nonvanishing):
                    free = [p for p in rest if p not in sol]
                    for signs in itertools.product((1, -1), repeat=len(free)):
                        full = dict(sol)
                        full.update(dict(zip(free, signs)))
                        full = {k: sp.sympify(v).xreplace(full) for k, v in full.items()}
                        candidates.append(full)
            for cand in candidates:
                values = dict(lat_sol)
                values = {k: sp.sympify(v).xreplace(cand) for k, v in values.items()}
                values.update(cand)
                inst = T.instantiate(values)
                if sp.expand(inst.jacobian().det()) == 0:
                    continue
                Ri = sp.expand(R.xreplace(cand))
                if is_identically_zero(Ri, free_vars=S.variables(), trials=trials, tol=tol, seed=seed,
                                       singular=S.singular):
                    key = inst.key()
                    if key not in [f[1].key() for f in found]:
                        found.append((values, inst))
    found.sort(key=lambda f: tuple(-int(sp.sign(f[0].get(p, 1))) for p in params))
    for values, inst in found:
        tag = classify_instance(inst, S, fields)
        inst.tag = tag
        report.admissible.append(Admissible(values, inst, tag))
    return report


def _num(e, params, rng):
    vals = {p: sp.Rational(rng.randint(1, 9), rng.randint(1, 5)) for p in params}
    return sp.expand(e.xreplace(vals))


def _solve_params(eqs, params, nonvanishing) -> list[dict]:
    if not eqs:
        return [{}]
    solver = CaseSplitSolver(list(params), list(nonvanishing) + [H])
    leaves = solver.solve(eqs)
    return [leaf.solution for leaf in leaves]


def _candidate_values(params, nonvanishing) -> list[dict]:
    out = []
    for vals in itertools.product((1, -1, 0), repeat=len(params)):
        cand = dict(zip(params, [sp.Integer(v) for v in vals]))
        if all(sp.sympify(f).xreplace(cand) != 0 for f in nonvanishing):
            out.append(cand)
    return out


# --------------------------------------------------------------------------
# classification against the continuous group

def diagonal_factors(T: PointTransformation) -> list:
    return [sp.diff(T.maps[n], s) for n, s in T.coords]


def affine_matrix(X: LatticeVectorField, coords) -> np.ndarray | None:
    """Matrix of an affine field on homogeneous coordinates (1, coords...)."""
    syms = [s for _, s in coords]
    comps = _components(X, coords)
    M = np.zeros((len(syms) + 1, len(syms) + 1))
    for r, (n, _) in enumerate(coords):
        c = sp.expand(comps[n])
        try:
            poly = sp.Poly(c, *syms)
        except sp.PolynomialError:
            return None
        if poly.total_degree() > 1:
            return None
        try:
            M[r + 1, 0] = float(c.xreplace({s: 0 for s in syms}))
            for k, s in enumerate(syms):
                M[r + 1, k + 1] = float(sp.diff(c, s))
        except TypeError:
            return None
    return M


def transformation_matrix(T: PointTransformation) -> np.ndarray | None:
    syms = [s for _, s in T.coords]
    M = np.eye(len(syms) + 1)
    for r, (n, _) in enumerate(T.coords):
        m = sp.expand(T.maps[n])
        try:
            if sp.Poly(m, *syms).total_degree() > 1:
                return None
            M[r + 1, 0] = float(m.xreplace({s: 0 for s in syms}))
            for k, s in enumerate(syms):
                M[r + 1, k + 1] = float(sp.diff(m, s))
        except (sp.PolynomialError, TypeError):
            return None
    return M


def reachable_by_flows(T: PointTransformation, fields, S: DifferenceSystem, tol: float = 1e-9) -> bool | None:
    """Can ``T`` be written as a product of basis flows?  None when the fields are not affine."""
    target = transformation_matrix(T)
    mats = [affine_matrix(X, T.coords) for X in fields]
    if target is None or any(m is None for m in mats):
        return None
    if np.allclose(target, np.eye(len(target)), atol=tol):
        return True

    def product(lams):
        P = np.eye(len(target))
        for lam, A in zip(lams, mats):
            P = P @ scipy.linalg.expm(lam * A)
        return P

    def resid(lams):
        return (product(lams) - target).ravel()

    diag = np.diag(target)[1:]
    guess = np.zeros(len(mats))
    for k, A in enumerate(mats):
        d = np.diag(A)[1:]
        nz = np.nonzero(d)[0]
        if len(nz):
            guess[k] = math.log(abs(diag[nz[0]])) / d[nz[0]]
    for start in (guess, np.zeros(len(mats))):
        for order in (1, -1):
            r = scipy.optimize.least_squares(lambda v: resid(v[::order])[:], start[::order],
                                             xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if np.max(np.abs(r.fun)) < 1e-9:
                return True
    return False


def classify_instance(T: PointTransformation, S: DifferenceSystem, fields=None) -> str:
    """``continuous`` if reachable from the identity by the known flows, else ``discrete``."""
    if T.is_identity():
        return "continuous"
    factors = diagonal_factors(T)
    if any(f.is_number and f < 0 for f in factors):
        return "discrete"
    if fields:
        ok = reachable_by_flows(T, fields, S)
        if ok:
            return "continuous"
        if ok is None:
            return "undetermined"
    return "discrete"


def changed_count(T: PointTransformation) -> int:
    return sum(1 for n, s in T.coords if sp.expand(T.maps[n] - s) != 0)


def group_closure(gens: Sequence[PointTransformation], cap: int = 64) -> list[PointTransformation]:
    if not gens:
        return []
    elems = [identity_transformation(gens[0].coords)]
    frontier = list(elems)
    while frontier and len(elems) < cap:
        nxt = []
        for a in frontier:
            for g in gens:
                c = compose(g, a)
                if not any(same_map(c, e) for e in elems):
                    elems.append(c)
                    nxt.append(c)
        frontier = nxt
    return elems


def discrete_generators(instances: Sequence[PointTransformation], S: DifferenceSystem, fields=None
                        ) -> list[PointTransformation]:
    """Greedy generating set modulo the continuous group, fewest changed coordinates first."""
    chosen: list[PointTransformation] = []
    for T in sorted(instances, key=lambda T: (changed_count(T), T.key())):
        covered = False
        for g in group_closure(chosen):
            rel = compose(T, inverse(g))
            if classify_instance(rel, S, fields) == "continuous":
                covered = True
                break
        if not covered and classify_instance(T, S, fields) != "continuous":
            chosen.append(T)
    return chosen


# --------------------------------------------------------------------------
# numerics

def toda_trajectory(n_sites: int = 11, steps: int = 200, dt: float = 1e-3, seed: int = 42, h: float = 7 / 3):
    """Periodic Toda chain integrated by an explicit Runge-Kutta method on ``steps + 1`` times."""
    rng = np.random.default_rng(seed)
    u0 = rng.uniform(-0.5, 0.5, n_sites)
    v0 = rng.uniform(-0.5, 0.5, n_sites)

    def rhs(_, y):
        u, v = y[:n_sites], y[n_sites:]
        return np.concatenate([v, np.exp(np.roll(u, -1) - u) - np.exp(u - np.roll(u, 1))])

    ts = np.arange(steps + 1) * dt
    sol = solve_ivp(rhs, (0, ts[-1]), np.concatenate([u0, v0]), method="DOP853", t_eval=ts,
                    rtol=1e-12, atol=1e-12)
    xs = np.arange(n_sites) * h
    return ts, xs, sol.y[:n_sites].T


def volterra_trajectory(n_sites: int = 11, steps: int = 200, dt: float = 1e-3, seed: int = 42, h: float = 7 / 3):
    rng = np.random.default_rng(seed)
    u0 = rng.uniform(0.2, 1.0, n_sites)

    def rhs(_, u):
        return u * (np.roll(u, -1) - np.roll(u, 1))

    ts = np.arange(steps + 1) * dt
    sol = solve_ivp(rhs, (0, ts[-1]), u0, method="DOP853", t_eval=ts, rtol=1e-12, atol=1e-12)
    return ts, np.arange(n_sites) * h, sol.y.T


def grid_residual(S: DifferenceSystem, ts, xs, U, params: dict | None = None, periodic: bool = True) -> float:
    """Euclidean norm of the equation evaluated on a grid (finite differences in t)."""
    params = {sp.Symbol(str(k)) if isinstance(k, str) else k: v for k, v in (params or {}).items()}
    delta = S.on_lattice(S.delta).xreplace(params)
    if H in delta.free_symbols and len(xs) > 1:
        delta = delta.xreplace({H: float(xs[1] - xs[0])})
    axis = S.axes[0]
    syms = sorted(delta.free_symbols, key=sp.default_sort_key)
    f = sp.lambdify(syms, delta, "numpy")
    U = np.asarray(U, dtype=float)
    nt, nx = U.shape
    cont = S.continuous[0] if S.continuous else None
    if cont is not None:
        dt = ts[1] - ts[0]
        Ut = (U[2:] - U[:-2]) / (2 * dt)
        Utt = (U[2:] - 2 * U[1:-1] + U[:-2]) / dt**2
        Uc, tc = U[1:-1], ts[1:-1]
    else:
        Ut = Utt = None
        Uc, tc = U, ts
    lo, hi = S.stencil[axis]
    sites = np.arange(nx) if periodic else np.arange(-lo, nx - hi)
    args = []
    for s in syms:
        if s.name == cont:
            args.append(tc[:, None] * np.ones((1, len(sites))))
            continue
        vid = VarId.parse(s)
        k = vid.offset_on(axis) or 0
        if vid.name == S.dependent:
            src = {(): Uc, (cont,): Ut, (cont, cont): Utt}[vid.deriv]
            idx = (sites + k) % nx
            args.append(src[:, idx])
        elif vid.name in S.lattice_coords:
            args.append(np.broadcast_to(xs[sites][None, :], (len(Uc), len(sites))))
        else:
            raise ValueError(f"no value for {s} on the grid")
    vals = np.asarray(f(*args), dtype=complex) * np.ones((len(Uc), len(sites)))
    return float(np.linalg.norm(vals))


def map_grid(T: PointTransformation, S: DifferenceSystem, ts, xs, U):
    """Transform a sampled solution and re-sort it along the new axes."""
    t_sym = sp.Symbol(S.continuous[0]) if S.continuous else None
    x_name = S.lattice_coords[0]
    x_sym = S.coordinate_symbol(x_name)
    u_sym = S.u
    def lam(e, *args):
        return sp.lambdify(args, e, "numpy")
    T_img = T.maps[S.continuous[0]] if t_sym is not None else None
    X_img = T.maps[x_name]
    U_img = T.maps[S.dependent]
    new_t = np.asarray(lam(T_img, t_sym)(ts), dtype=float) * np.ones_like(ts) if t_sym is not None else ts
    new_x = np.asarray(lam(X_img, x_sym)(xs), dtype=float) * np.ones_like(xs)
    tt = ts[:, None] * np.ones_like(U)
    xx = xs[None, :] * np.ones_like(U)
    args = [tt, xx, U] if t_sym is not None else [xx, U]
    syms = [t_sym, x_sym, u_sym] if t_sym is not None else [x_sym, u_sym]
    new_U = np.asarray(lam(U_img, *syms)(*args), dtype=float) * np.ones_like(U)
    it = np.argsort(new_t)
    ix = np.argsort(new_x)
    return new_t[it], new_x[ix], new_U[np.ix_(it, ix)]


def mapping_ratio(T: PointTransformation, S: DifferenceSystem, ts, xs, U, params=None, periodic=True,
                  floor: float = 0.0) -> tuple[float, float]:
    """(original residual, mapped residual)."""
    r0 = grid_residual(S, ts, xs, U, params, periodic)
    t2, x2, U2 = map_grid(T, S, ts, xs, U)
    r1 = grid_residual(S, t2, x2, U2, params, periodic)
    return max(r0, floor), max(r1, floor)


# --------------------------------------------------------------------------
# end-to-end

STAGES = ("verify", "aut", "normalize", "realize", "form")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _instantiate_field(X: LatticeVectorField, h_value) -> LatticeVectorField:
    return LatticeVectorField({k: v.xreplace({H: h_value}) for k, v in X.xi.items()}, X.phi.xreplace({H: h_value}))


def _instantiate_system(S: DifferenceSystem, h_value) -> DifferenceSystem:
    from .exprsym import LatticeRule

    rules = tuple(LatticeRule(r.coord, r.axis, sp.sympify(r.step).xreplace({H: h_value})) for r in S.lattice)
    return DifferenceSystem(S.delta.xreplace({H: h_value}), rules, S.stencil, S.singular, S.dependent,
                            S.continuous, S.eliminate)


@dataclass
class PipelineReport:
    algebra: object
    families: list = field(default_factory=list)
    normalized: list = field(default_factory=list)
    realizations: list = field(default_factory=list)  # (family index, RealizationResult)
    invariance: list = field(default_factory=list)  # FormInvarianceReport
    discrete: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "algebra": self.algebra.to_json(),
            "families": [F.to_json() for F in (self.normalized or self.families)],
            "realizations": [
                {"family": k + 1, "branch": self.normalized[k].branch,
                 "transformations": [T.to_json() for T in r.transformations],
                 **({"diagnostic": r.diagnostic} if r.diagnostic else {})}
                for k, r in self.realizations
            ],
            "form_invariance": [rep.to_json() for rep in self.invariance],
            "discrete": [T.to_json() for T in self.discrete],
            "notes": self.notes,
        }


def run_pipeline(A, fields: Sequence[LatticeVectorField], S: DifferenceSystem, h_value=None,
                 trials: int = 20, tol: float = 1e-9, seed: int = 42, until: str = "form") -> PipelineReport:
    """Symmetry algebra -> automorphisms -> realizations -> form invariance -> discrete generators.

    ``until`` names the last stage to run.
    """
    from .autosolve import automorphism_families, normalize_inner
    from .latfield import verify_symmetry_algebra
    from .liealg import DEFAULT_H

    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    h_value = DEFAULT_H if h_value is None else sp.Rational(h_value)
    if A.dim != len(fields):
        raise StageError("verify", f"algebra has dimension {A.dim} but {len(fields)} fields were given")
    fields = [_instantiate_field(X, h_value) for X in fields]
    S = _instantiate_system(S, h_value)
    A = A.instantiate(h_value) if A.symbols() else A

    check = verify_symmetry_algebra(fields, S, trials=trials, tol=tol, seed=seed)
    if not all(check.symmetric):
        bad = [k + 1 for k, ok in enumerate(check.symmetric) if not ok]
        raise StageError("verify", f"fields {bad} are not symmetries of the equation")
    if check.algebra is None:
        raise StageError("verify", check.failure or "fields do not close")
    if check.algebra.c != A.c:
        raise StageError("verify", "structure constants of the fields differ from the algebra file")
    report = PipelineReport(A)
    if until == "verify":
        return report
    if not A.nonzero_brackets():
        report.notes.append("abelian algebra: every invertible matrix is an automorphism")

    try:
        report.families = automorphism_families(A)
    except Exception as err:  # noqa: BLE001 - reported with the stage name
        raise StageError("aut", str(err)) from err
    if until == "aut":
        return report
    try:
        report.normalized = [normalize_inner(F, A, seed=seed) for F in report.families]
    except Exception as err:  # noqa: BLE001
        raise StageError("normalize", str(err)) from err
    for F in report.normalized:
        if F.warning:
            report.notes.append(F.warning)
    if until == "normalize":
        return report

    instances = []
    for k, F in enumerate(report.normalized):
        try:
            res = realize_family(F, fields, S, seed)
        except Exception as err:  # noqa: BLE001
            raise StageError("realize", str(err)) from err
        report.realizations.append((k, res))
        if until == "realize":
            continue
        for T in res.transformations:
            try:
                rep = check_form_invariance(T, S, fields, trials, tol, seed)
            except Exception as err:  # noqa: BLE001
                raise StageError("form", str(err)) from err
            report.invariance.append(rep)
            instances.extend(a.transformation for a in rep.discrete)
    if until == "realize":
        return report
    unique = []
    for T in instances:
        if not any(same_map(T, U) for U in unique):
            unique.append(T)
    report.discrete = discrete_generators(unique, S, fields)
    for T in report.discrete:
        T.tag = "discrete"
    return report
