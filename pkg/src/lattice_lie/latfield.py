"""Vector fields on lattices, their prolongation, and symmetry verification."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import sympy as sp

from .exprsym import (
    LatticeRule,
    VarId,
    apply_lattice,
    from_json,
    index,
    is_identically_zero,
    shift,
    site_vars,
    to_json,
    var,
)
from .liealg import LieAlgebra


class EliminationError(ValueError):
    """The equation cannot be solved affinely for the designated variable."""


class ClosureFailure(ValueError):
    def __init__(self, pair, bracket):
        super().__init__(f"bracket of fields {pair[0]} and {pair[1]} is not in their span")
        self.pair = pair
        self.bracket = bracket


@dataclass(frozen=True)
class LatticeVectorField:
    """``sum_c xi[c] d/dc + phi d/du`` written in base-site variables.

    Keys of ``xi`` are coordinate names: continuous ones (``"t"``) stand for
    the plain symbol ``t``, lattice ones (``"x"``) for ``x[n]``.
    """

    xi: dict = field(default_factory=dict)
    phi: sp.Expr = sp.Integer(0)

    def __post_init__(self):
        object.__setattr__(self, "xi", {k: sp.sympify(v) for k, v in self.xi.items()})
        object.__setattr__(self, "phi", sp.sympify(self.phi))

    def __add__(self, other: "LatticeVectorField") -> "LatticeVectorField":
        keys = set(self.xi) | set(other.xi)
        return LatticeVectorField({k: self.xi.get(k, 0) + other.xi.get(k, 0) for k in keys},
                                  self.phi + other.phi)

    def scale(self, c) -> "LatticeVectorField":
        return LatticeVectorField({k: c * v for k, v in self.xi.items()}, c * self.phi)

    def is_zero(self) -> bool:
        return sp.expand(self.phi) == 0 and all(sp.expand(v) == 0 for v in self.xi.values())

    def to_json(self) -> dict:
        return {"xi": {k: to_json(v) for k, v in self.xi.items()}, "phi": to_json(self.phi)}

    @classmethod
    def from_json(cls, data: dict) -> "LatticeVectorField":
        return cls({k: from_json(v) for k, v in data.get("xi", {}).items()}, from_json(data.get("phi", {"rat": "0"})))


@dataclass(frozen=True)
class DifferenceSystem:
    """``delta = 0`` on a lattice given by ``lattice`` rules."""

    delta: sp.Expr
    lattice: tuple = ()
    stencil: dict = field(default_factory=lambda: {"n": (-1, 1)})
    singular: tuple = ()
    dependent: str = "u"
    continuous: tuple = ()
    eliminate: sp.Symbol | None = None

    def __post_init__(self):
        object.__setattr__(self, "delta", sp.sympify(self.delta))
        object.__setattr__(self, "lattice", tuple(self.lattice))
        object.__setattr__(self, "singular", tuple(sp.sympify(s) for s in self.singular))
        object.__setattr__(self, "continuous", tuple(self.continuous))
        for axis, (lo, hi) in self.stencil.items():
            if lo > 0 or hi < 0:
                raise ValueError(f"stencil on {axis} must contain the base site")
        for _, vid in site_vars(self.delta):
            for axis, k in vid.offset:
                lo, hi = self.stencil.get(axis, (0, 0))
                if not lo <= k <= hi:
                    raise ValueError(f"{vid.symbol_name} lies outside the declared stencil")

    @property
    def axes(self) -> list[str]:
        return list(self.stencil)

    def coordinate_symbol(self, name: str) -> sp.Symbol:
        if name in self.continuous:
            return sp.Symbol(name)
        return var(name, {a: 0 for a in self.axes})

    @property
    def u(self) -> sp.Symbol:
        return var(self.dependent, {a: 0 for a in self.axes})

    @property
    def lattice_coords(self) -> list[str]:
        return [r.coord for r in self.lattice]

    def on_lattice(self, e: sp.Expr) -> sp.Expr:
        return apply_lattice(sp.sympify(e), self.lattice)

    def elimination_variable(self) -> sp.Symbol:
        """Designated variable, else highest t-derivative, else highest forward shift of u."""
        if self.eliminate is not None:
            return self.eliminate
        ids = [(s, vid) for s, vid in site_vars(self.delta) if vid.name == self.dependent]
        if not ids:
            raise EliminationError("equation does not involve the dependent variable")
        axis = self.axes[0]
        best = max(ids, key=lambda p: (len(p[1].deriv), p[1].offset_on(axis) or 0))
        return best[0]

    def solved(self) -> tuple[sp.Symbol, sp.Expr]:
        """``(v, value)`` with ``delta = 0`` equivalent to ``v = value`` on the lattice."""
        v = self.elimination_variable()
        d = self.on_lattice(self.delta)
        a = sp.diff(d, v)
        if a == 0 or sp.diff(a, v) != 0:
            raise EliminationError(f"equation is not affine in {v}")
        return v, sp.together(v - d / a)

    def on_shell(self, e: sp.Expr) -> sp.Expr:
        v, value = self.solved()
        return sp.together(self.on_lattice(e).xreplace({v: value}))

    def variables(self) -> list[sp.Symbol]:
        """Independent symbols of on-shell expressions (sites, derivatives, coordinates)."""
        v, value = self.solved()
        syms = (self.on_lattice(self.delta).free_symbols | value.free_symbols) - {v}
        return sorted(syms, key=sp.default_sort_key)

    def with_delta(self, delta) -> "DifferenceSystem":
        return DifferenceSystem(delta, self.lattice, self.stencil, self.singular, self.dependent,
                                self.continuous, self.eliminate)

    def to_json(self) -> dict:
        out = {
            "delta": to_json(self.delta),
            "lattice": [to_json(var(r.coord, {r.axis: 1}) - var(r.coord, {r.axis: 0}) - r.step)
                        for r in self.lattice],
            "stencil": {a: list(b) for a, b in self.stencil.items()},
            "singular": [to_json(s) for s in self.singular],
            "dependent": self.dependent,
            "continuous": list(self.continuous),
        }
        if self.eliminate is not None:
            out["eliminate"] = str(self.eliminate)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "DifferenceSystem":
        stencil = {a: tuple(int(k) for k in b) for a, b in data.get("stencil", {"n": [-1, 1]}).items()}
        rules = [lattice_rule(from_json(e)) for e in data.get("lattice", [])]
        elim = data.get("eliminate")
        return cls(
            delta=from_json(data["delta"]),
            lattice=tuple(rules),
            stencil=stencil,
            singular=tuple(from_json(s) for s in data.get("singular", [])),
            dependent=data.get("dependent", "u"),
            continuous=tuple(data.get("continuous", ())),
            eliminate=VarId.parse(elim).symbol if elim else None,
        )

    @classmethod
    def load(cls, path) -> "DifferenceSystem":
        return cls.from_json(json.loads(Path(path).read_text()))


def lattice_rule(E: sp.Expr) -> LatticeRule:
    """Read ``coord[axis+1] - coord[axis] = step`` off a lattice equation ``E = 0``."""
    ids = site_vars(E)
    for s, vid in ids:
        if len(vid.offset) != 1 or vid.offset[0][1] != 1:
            continue
        axis = vid.offset[0][0]
        base = vid.shifted(axis, -1).symbol
        a = sp.diff(E, s)
        if a == 0 or a.free_symbols & {s, base}:
            continue
        step = sp.simplify(-(E - a * s).xreplace({base: 0}) / a)
        if sp.simplify(E.xreplace({s: base + step})) == 0:
            return LatticeRule(vid.name, axis, step)
    raise ValueError(f"unsupported lattice equation {E} = 0 (need coord[k+1] - coord[k] = step)")


def load_fields(path) -> list[LatticeVectorField]:
    data = json.loads(Path(path).read_text())
    items = data["fields"] if isinstance(data, dict) else data
    return [LatticeVectorField.from_json(f) for f in items]


# --------------------------------------------------------------------------
# prolongation

def _total_t(e: sp.Expr, S: DifferenceSystem, t: sp.Symbol) -> sp.Expr:
    """Total t-derivative of an expression in t, lattice coordinates and u, u_t at sites."""
    out = sp.diff(e, t)
    for s, vid in site_vars(e):
        if vid.name != S.dependent:
            continue
        nxt = VarId(vid.name, vid.offset, vid.deriv + (t.name,)).symbol
        out += sp.diff(e, s) * nxt
    return out


def prolong(X: LatticeVectorField, S: DifferenceSystem) -> dict:
    """Coefficients of the prolonged field, keyed by the symbol they multiply.

    Covers every site of the stencil for u and the lattice coordinates, the
    continuous coordinates, and t-derivatives of u up to the order found in
    the equation.
    """
    out: dict = {}
    for c in S.continuous:
        if c in X.xi:
            out[sp.Symbol(c)] = X.xi[c]
    base_coeffs = {S.dependent: X.phi}
    for c in S.lattice_coords:
        if c in X.xi:
            base_coeffs[c] = X.xi[c]
    derivs = {vid.deriv for _, vid in site_vars(S.delta) if vid.name == S.dependent and vid.deriv}
    for t_name in S.continuous:
        t = sp.Symbol(t_name)
        tau = X.xi.get(t_name, sp.Integer(0))
        if tau.free_symbols - {t}:
            raise ValueError("the t-component must depend on t only")
        dtau = sp.diff(tau, t)
        order = max((len(d) for d in derivs if set(d) == {t_name}), default=0)
        prev = X.phi
        for k in range(1, order + 1):
            prev = sp.expand(_total_t(prev, S, t) - VarId(S.dependent, tuple((a, 0) for a in S.axes),
                                                          (t_name,) * k).symbol * dtau)
            base_coeffs[f"{S.dependent}_{t_name * k}"] = prev
    axis_sites = _stencil_sites(S)
    for name, coeff in base_coeffs.items():
        vid0 = VarId.parse(name) if "_" in name else VarId(name)
        for offs in axis_sites:
            key = VarId(vid0.name, tuple(offs.items()), vid0.deriv).symbol
            shifted = coeff
            for axis, k in offs.items():
                shifted = shift(shifted, axis, k)
            if sp.expand(shifted) != 0:
                out[key] = shifted
    return out


def _stencil_sites(S: DifferenceSystem) -> list[dict]:
    sites = [{}]
    for axis, (lo, hi) in S.stencil.items():
        sites = [dict(s, **{axis: k}) for s in sites for k in range(lo, hi + 1)]
    return sites


def apply_prolonged(X: LatticeVectorField, S: DifferenceSystem, e: sp.Expr) -> sp.Expr:
    """``pr X (e)`` before any use of the equations."""
    coeffs = prolong(X, S)
    return sp.Add(*[c * sp.diff(e, s) for s, c in coeffs.items() if s in e.free_symbols])


def invariance_residual(X: LatticeVectorField, S: DifferenceSystem) -> sp.Expr:
    """``pr X (delta)`` restricted to solutions and to the lattice."""
    return S.on_shell(apply_prolonged(X, S, S.delta))


def lattice_residuals(X: LatticeVectorField, S: DifferenceSystem) -> list[sp.Expr]:
    """``pr X (E_a)`` for each lattice equation, restricted to the lattice."""
    out = []
    for r in S.lattice:
        E = var(r.coord, {r.axis: 1}) - var(r.coord, {r.axis: 0}) - r.step
        out.append(S.on_shell(apply_prolonged(X, S, E)))
    return out


def is_symmetry(X: LatticeVectorField, S: DifferenceSystem, trials=20, tol=1e-9, seed=42) -> bool:
    syms = S.variables()
    for r in [invariance_residual(X, S)] + lattice_residuals(X, S):
        if not is_identically_zero(r, free_vars=syms, trials=trials, tol=tol, seed=seed, singular=S.singular):
            return False
    return True


# --------------------------------------------------------------------------
# brackets and structure constants

def _coordinates(fields: Sequence[LatticeVectorField], S: DifferenceSystem) -> list[tuple[str, sp.Symbol]]:
    names = list(S.continuous) + [c for c in S.lattice_coords]
    for X in fields:
        for k in X.xi:
            if k not in names:
                names.append(k)
    coords = [(k, S.coordinate_symbol(k)) for k in names]
    coords.append((S.dependent, S.u))
    return coords


def _apply(X: LatticeVectorField, f: sp.Expr, coords) -> sp.Expr:
    out = sp.Integer(0)
    for name, sym in coords:
        c = X.phi if sym == coords[-1][1] else X.xi.get(name, 0)
        if c != 0:
            out += c * sp.diff(f, sym)
    return out


def bracket(X: LatticeVectorField, Y: LatticeVectorField, S: DifferenceSystem) -> LatticeVectorField:
    """Commutator ``[X, Y]`` of point fields at the base site."""
    coords = _coordinates([X, Y], S)
    xi = {}
    for name, sym in coords[:-1]:
        c = sp.simplify(_apply(X, Y.xi.get(name, 0), coords) - _apply(Y, X.xi.get(name, 0), coords))
        if c != 0:
            xi[name] = c
    phi = sp.simplify(_apply(X, Y.phi, coords) - _apply(Y, X.phi, coords))
    return LatticeVectorField(xi, phi)


def _components(X: LatticeVectorField, coords) -> list[sp.Expr]:
    return [X.xi.get(name, sp.Integer(0)) for name, _ in coords[:-1]] + [X.phi]


def express_in_basis(Z: LatticeVectorField, basis: Sequence[LatticeVectorField], S: DifferenceSystem,
                     seed: int = 42, trials: int = 20, tol: float = 1e-9):
    """Exact coefficients ``c`` with ``Z = sum c_k basis_k``, or None when Z is outside the span."""
    coords = _coordinates(list(basis) + [Z], S)
    target = _components(Z, coords)
    cols = [_components(B, coords) for B in basis]
    point_syms = {sym for _, sym in coords}
    for comp in target + [e for col in cols for e in col]:
        point_syms |= {s for s in comp.free_symbols if s.is_integer}
    point_syms = sorted(point_syms, key=sp.default_sort_key)
    rng = random.Random(seed)
    rows, rhs = [], []
    npts = len(basis) + 3
    while len(rows) < npts * len(target):
        pt = {s: (sp.Integer(rng.randint(-4, 4)) if s.is_integer else sp.Rational(rng.randint(-9, 9), rng.randint(1, 4)))
              for s in point_syms}
        try:
            new_rows = [[sp.nsimplify(sp.expand(col[r].xreplace(pt))) for col in cols] for r in range(len(target))]
            new_rhs = [sp.expand(target[r].xreplace(pt)) for r in range(len(target))]
        except ZeroDivisionError:
            continue
        if any(v.has(sp.zoo, sp.nan) for row in new_rows for v in row):
            continue
        rows.extend(new_rows)
        rhs.extend(new_rhs)
    A, b = sp.Matrix(rows), sp.Matrix(rhs)
    cs = sp.symbols(f"_c0:{len(basis)}")
    sol = sp.linsolve((A, b), *cs)
    if not sol:
        return None
    coeffs = [sp.simplify(c) for c in next(iter(sol))]
    if any(c.free_symbols & set(cs) for c in coeffs):
        coeffs = [c.xreplace({s: 0 for s in cs}) for c in coeffs]
    for r in range(len(target)):
        diff = target[r] - sum(coeffs[k] * cols[k][r] for k in range(len(basis)))
        if not is_identically_zero(sp.expand(diff), trials=trials, tol=tol, seed=seed):
            return None
    return coeffs


@dataclass
class AlgebraReport:
    symmetric: list[bool]
    algebra: LieAlgebra | None
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return all(self.symmetric) and self.algebra is not None

    def to_json(self) -> dict:
        out = {"symmetric": self.symmetric, "ok": self.ok}
        if self.algebra is not None:
            out["algebra"] = self.algebra.to_json()
        if self.failure:
            out["failure"] = self.failure
        return out


def verify_symmetry_algebra(fields: Sequence[LatticeVectorField], S: DifferenceSystem,
                            trials=20, tol=1e-9, seed=42) -> AlgebraReport:
    """Check every field is a symmetry and recover the structure constants of their span."""
    if not fields:
        raise ValueError("need at least one field")
    symmetric = [is_symmetry(X, S, trials, tol, seed) for X in fields]
    n = len(fields)
    brackets = {}
    for i in range(n):
        for j in range(i + 1, n):
            Z = bracket(fields[i], fields[j], S)
            if Z.is_zero():
                continue
            coeffs = express_in_basis(Z, fields, S, seed, trials, tol)
            if coeffs is None:
                return AlgebraReport(symmetric, None, f"[X{i + 1}, X{j + 1}] is not in the span")
            brackets[(i + 1, j + 1)] = {k + 1: c for k, c in enumerate(coeffs) if c != 0}
    return AlgebraReport(symmetric, LieAlgebra.from_brackets(n, brackets))


def lattice_index(S: DifferenceSystem) -> sp.Symbol:
    return index(S.axes[0])
