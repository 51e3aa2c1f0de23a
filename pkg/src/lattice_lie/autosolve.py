"""Automorphisms of a Lie algebra: equations, case-splitting solver, inner normalization.

The solver in this module is generic (polynomial equations, ordered unknowns,
nonvanishing side conditions) and is reused by :mod:`lattice_lie.realize`.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import sympy as sp

from .exprsym import is_identically_zero
from .liealg import DEFAULT_H, LieAlgebra, UnsupportedExponential, adjoint, matrix_exp

log = logging.getLogger(__name__)

MAX_DEPTH = 16
LAMBDA = sp.Symbol("lam")
DET_FACTOR_TERMS = 16


class BranchDepthExceeded(RuntimeError):
    pass


class IrreducibleEquation(RuntimeError):
    def __init__(self, equation):
        super().__init__(f"equation not reducible by propagation or splitting: {equation} = 0")
        self.equation = equation


# --------------------------------------------------------------------------
# polynomial helpers

def canonical(f: sp.Expr) -> sp.Expr:
    """Primitive form of a polynomial with positive leading coefficient."""
    f = sp.expand(f)
    syms = sorted(f.free_symbols, key=sp.default_sort_key)
    if not syms:
        return sp.Integer(1) if f != 0 else sp.Integer(0)
    try:
        poly = sp.Poly(f, *syms)
    except sp.PolynomialError:
        return f
    _, prim = poly.primitive()
    if prim.LC() < 0:
        prim = -prim
    return prim.as_expr()


def _is_unit_factor(f: sp.Expr) -> bool:
    if f.is_number:
        return f != 0
    base = f.base if f.is_Pow else f
    return isinstance(base, sp.exp)


_FACTOR_CACHE: dict = {}


def split_factors(e: sp.Expr) -> list[sp.Expr]:
    """Distinct non-constant irreducible factors (canonical), exponentials dropped."""
    hit = _FACTOR_CACHE.get(e)
    if hit is not None:
        return list(hit)
    out = _split_factors(e)
    if len(_FACTOR_CACHE) > 50000:
        _FACTOR_CACHE.clear()
    _FACTOR_CACHE[e] = tuple(out)
    return out


def _split_factors(e: sp.Expr) -> list[sp.Expr]:
    num = sp.expand(sp.numer(sp.together(e))) if not e.is_polynomial() else sp.expand(e)
    if num == 0:
        return []
    if num.is_number:
        return []
    if num.is_Mul or num.is_Pow or num.is_Symbol:
        # monomial: its symbols (and any exp factors, dropped)
        facs = [(f.base if f.is_Pow and f.exp.is_Integer else f, 1) for f in sp.Mul.make_args(num)]
    else:
        syms = sorted(num.free_symbols, key=sp.default_sort_key)
        if not num.has(sp.exp) and sp.Poly(num, *syms).total_degree() == 1:
            facs = [(num, 1)]
        else:
            _, facs = sp.factor_list(num)
    out = []
    for f, _ in facs:
        if _is_unit_factor(f):
            continue
        cf = canonical(f)
        if cf.is_number:
            continue
        if cf not in out:
            out.append(cf)
    return out


def _unknown_rank(order: dict, e: sp.Expr) -> int:
    ranks = [order[s] for s in e.free_symbols if s in order]
    return min(ranks) if ranks else len(order)


def describe(f: sp.Expr, order: dict) -> str:
    """Readable ``x=value`` form of ``f = 0`` when it is affine in one unknown."""
    for x in sorted(f.free_symbols & set(order), key=order.get):
        p = sp.Poly(f, x)
        if p.degree() == 1 and p.LC().is_number:
            val = sp.expand(-(f - p.LC() * x) / p.LC())
            sign = "+" if val.is_number and val > 0 else ""
            return f"{x}={sign}{val}"
    return f"{f}=0"


@dataclass
class Leaf:
    solution: dict
    free: list
    nonvanishing: list
    label: tuple
    equations: list = field(default_factory=list)


@dataclass
class _State:
    solution: dict
    equations: list
    nonzero: list
    label: tuple
    depth: int
    pruned: bool = False


class CaseSplitSolver:
    """Constraint propagation with case splits on factored equations.

    ``unknowns`` is the preference order: propagation solves for the earliest
    unknown whose coefficient is known to be nonzero.  Symbols that are not
    unknowns are generic constants.  ``prune(solution)`` may return ``None``
    to discard a branch or a list of extra nonvanishing expressions.
    """

    def __init__(
        self,
        unknowns: Sequence[sp.Symbol],
        nonvanishing: Iterable[sp.Expr] = (),
        prune: Callable[[dict], list | None] | None = None,
        max_depth: int = MAX_DEPTH,
    ):
        self.unknowns = list(unknowns)
        self.order = {s: i for i, s in enumerate(self.unknowns)}
        self.base_nonzero = []
        for e in nonvanishing:
            for f in split_factors(e):
                if f not in self.base_nonzero:
                    self.base_nonzero.append(f)
        self.prune = prune
        self.max_depth = max_depth

    # -- nonzero bookkeeping
    def _is_nonzero(self, e: sp.Expr, nonzero: list) -> bool:
        if e.is_number:
            return e != 0
        return all(f in nonzero for f in split_factors(e)) and sp.expand(e) != 0

    def _reduce(self, eq: sp.Expr, nonzero: list):
        """Radical of ``eq`` with known-nonzero factors removed; None if inconsistent."""
        facs = [f for f in split_factors(eq) if f not in nonzero]
        if not facs:
            return None
        return facs

    # -- main loop
    def solve(self, equations: Iterable[sp.Expr]) -> list[Leaf]:
        eqs = [sp.expand(e) for e in equations]
        start = _State({}, eqs, list(self.base_nonzero), (), 0)
        return self._run(start)

    def _substitute(self, e, solution):
        return sp.expand(sp.numer(sp.together(e.xreplace(solution)))) if solution else e

    def _assign(self, state: _State, x, value):
        value = sp.factor_terms(sp.together(value))
        sol = {k: sp.together(v.xreplace({x: value})) for k, v in state.solution.items()}
        sol[x] = value
        state.solution = sol
        state.pruned = False

    def _run(self, state: _State) -> list[Leaf]:
        while True:
            # bring equations and side conditions up to date
            nonzero = list(state.nonzero)
            for f in list(nonzero):
                g = sp.expand(sp.numer(sp.together(f.xreplace(state.solution))))
                if g == 0:
                    return []
                for h in split_factors(g):
                    if h not in nonzero:
                        nonzero.append(h)
            state.nonzero = nonzero
            reduced = []
            for eq in state.equations:
                eq = self._substitute(eq, state.solution)
                if eq == 0:
                    continue
                facs = self._reduce(eq, nonzero)
                if facs is None:
                    return []
                key = [canonical(sp.Mul(*facs))]
                if key[0] not in [r[0] for r in reduced]:
                    reduced.append((key[0], facs))
            # a product with a factor already asserted zero is implied
            asserted = {r[0] for r in reduced if len(r[1]) == 1}
            reduced = [r for r in reduced
                       if len(r[1]) == 1 or not any(canonical(f) in asserted for f in r[1])]
            state.equations = [r[0] for r in reduced]

            singles = sorted((r for r in reduced if len(r[1]) == 1),
                             key=lambda r: (len(sp.Add.make_args(r[0])), sp.default_sort_key(r[0])))
            step = self._find_affine(singles, nonzero, invertible_only=True)
            if step is not None:
                eq, x, a, rest = step
                self._assign(state, x, -rest / a)
                continue

            # propagation has stalled: consult the pruning callback
            if self.prune is not None and not state.pruned:
                state.pruned = True
                extra = self.prune(state.solution)
                if extra is None:
                    return []
                fresh = [h for e in extra for h in split_factors(e) if h not in nonzero]
                if fresh:
                    state.nonzero = nonzero + list(dict.fromkeys(fresh))
                    continue
            if not reduced:
                return [self._leaf(state)]

            if any(not (r[0].free_symbols & set(self.order)) for r in reduced):
                return []  # equation in generic constants only

            if state.depth >= self.max_depth:
                raise BranchDepthExceeded(f"branch depth cap {self.max_depth} exceeded at {state.label}")

            # (2) split on a factored equation
            multi = [r for r in reduced if len(r[1]) > 1]
            if multi:
                eq, facs = min(multi, key=lambda r: (
                    _unknown_rank(self.order, r[0]), len(r[1]), sp.default_sort_key(r[0])))
                facs = sorted(facs, key=lambda f: (_unknown_rank(self.order, f), sp.default_sort_key(f)))
                out = []
                for k, f in enumerate(facs):
                    label = describe(f, self.order)
                    child = _State(dict(state.solution), state.equations + [f],
                                   state.nonzero + [g for g in facs[:k] if g not in state.nonzero],
                                   state.label + (label,), state.depth + 1)
                    out.extend(self._run(child))
                return out

            # (3) affine with a coefficient that might vanish: split on the coefficient
            step = self._find_affine(singles, nonzero, invertible_only=False, zero=asserted)
            if step is None:
                raise IrreducibleEquation(singles[0][0])
            eq, x, a, rest = step
            out = []
            a_facs = split_factors(a)
            zero_state = _State(dict(state.solution), state.equations + [a], list(state.nonzero),
                                state.label + (f"{describe(canonical(a), self.order)}",), state.depth + 1)
            out.extend(self._run(zero_state))
            nz_state = _State(dict(state.solution), list(state.equations),
                              state.nonzero + [f for f in a_facs if f not in state.nonzero],
                              state.label + (f"{canonical(a)}!=0",), state.depth + 1)
            out.extend(self._run(nz_state))
            return out

    def _find_affine(self, singles, nonzero, invertible_only, zero=()):
        for eq, _ in singles:
            for x in sorted(eq.free_symbols & set(self.order), key=self.order.get):
                p = sp.Poly(eq, x)
                if p.degree() != 1:
                    continue
                a = p.LC()
                rest = sp.expand(eq - a * x)
                if invertible_only and not self._is_nonzero(a, nonzero):
                    continue
                if not invertible_only and a.is_number:
                    continue
                if any(f in zero for f in split_factors(a)):
                    continue  # splitting on it would repeat an existing branch
                return eq, x, a, rest
        return None

    def _leaf(self, state: _State) -> Leaf:
        sol = {k: sp.factor_terms(sp.cancel(v)) for k, v in state.solution.items()}
        free = [s for s in self.unknowns if s not in sol]
        nonzero = []
        for f in state.nonzero:
            g = canonical(sp.numer(sp.together(f.xreplace(sol))))
            if not g.is_number and g not in nonzero:
                nonzero.append(g)
        return Leaf(sol, free, nonzero, state.label)


def propagate(equations: Iterable[sp.Expr], unknowns: Sequence[sp.Symbol]):
    """Linear propagation only (step 1 of the solver, no splitting).

    Returns ``(assignments, remaining)`` where assignments are in the order made.
    """
    solver = CaseSplitSolver(unknowns)
    assignments: list[tuple[sp.Symbol, sp.Expr]] = []
    eqs = [sp.expand(e) for e in equations]
    while True:
        current = []
        for e in eqs:
            e = sp.expand(sp.numer(sp.together(e.xreplace(dict(assignments)))))
            if e != 0:
                c = canonical(e)
                if c not in current:
                    current.append(c)
        eqs = current
        singles = sorted(((e, [e]) for e in eqs if len(split_factors(e)) == 1),
                         key=lambda r: (len(sp.Add.make_args(r[0])), sp.default_sort_key(r[0])))
        reduced = []
        for e, _ in singles:
            f = split_factors(e)[0]
            reduced.append((f, [f]))
        step = solver._find_affine(reduced, [], invertible_only=True)
        if step is None:
            return assignments, eqs
        _, x, a, rest = step
        val = sp.expand(-rest / a)
        assignments = [(k, sp.expand(v.xreplace({x: val}))) for k, v in assignments]
        assignments.append((x, val))


# --------------------------------------------------------------------------
# automorphisms

def unknown_matrix(n: int) -> sp.Matrix:
    """Matrix of unknowns b_ij (row i, column j), so Phi(X_j) = sum_i b_ij X_i."""
    return sp.Matrix(n, n, lambda i, j: sp.Symbol(f"b{i + 1}{j + 1}" if n < 10 else f"b{i + 1}x{j + 1}"))


def _rational_algebra(A: LieAlgebra, h_value) -> LieAlgebra:
    return A.instantiate(h_value) if A.symbols() else A


def automorphism_residuals(A: LieAlgebra, Phi: sp.Matrix) -> list[sp.Matrix]:
    """``Phi C(i) - sum_l Phi[l, i] C(l) Phi`` for every generator i."""
    n = A.dim
    C = [adjoint(A, i + 1) for i in range(n)]
    out = []
    for i in range(n):
        R = Phi * C[i]
        for l in range(n):
            if Phi[l, i] != 0 and not C[l].is_zero_matrix:
                R -= Phi[l, i] * C[l] * Phi
        out.append(R)
    return out


def generate_automorphism_system(A: LieAlgebra, h_value=DEFAULT_H) -> list[sp.Expr]:
    """All scalar equations of ``Phi C(i) = Phi^l_i C(l) Phi``, deduplicated, in b_ij."""
    A = _rational_algebra(A, h_value)
    B = unknown_matrix(A.dim)
    eqs = []
    for R in automorphism_residuals(A, B):
        for e in R:
            e = sp.expand(e)
            if e == 0:
                continue
            c = canonical(e)
            if c not in eqs:
                eqs.append(c)
    return eqs


@dataclass
class AutFamily:
    """A parametrized family of automorphism matrices."""

    matrix: sp.Matrix
    free: tuple
    nonvanishing: tuple
    branch: str
    origin: dict = field(default_factory=dict)
    equations: tuple = ()
    eliminated: tuple = ()
    warning: str | None = None

    def with_original_names(self) -> sp.Matrix:
        return self.matrix.xreplace(self.origin)

    def instantiate(self, values: dict) -> sp.Matrix:
        return self.matrix.xreplace({k: sp.sympify(v) for k, v in values.items()})

    def random_instance(self, rng: random.Random, tries: int = 200) -> sp.Matrix:
        """Random rational instance respecting the nonvanishing conditions."""
        for _ in range(tries):
            vals = {p: sp.Rational(rng.choice([-1, 1]) * rng.randint(1, 9), rng.randint(1, 5)) for p in self.free}
            if all(sp.sympify(f).xreplace(vals) != 0 for f in self.nonvanishing):
                M = self.instantiate(vals)
                if M.det() != 0:
                    return M
        raise RuntimeError("could not sample an admissible instance")

    def contains(self, M: sp.Matrix) -> bool:
        """Exact membership of a numeric matrix, reading parameters from bare entries."""
        vals = {}
        for (r, c), entry in _bare_positions(self.matrix, self.free).items():
            vals[entry] = M[r, c]
        if set(vals) != set(self.free):
            raise ValueError("family has parameters not readable from entries")
        try:
            if any(sp.sympify(f).xreplace(vals) == 0 for f in self.nonvanishing):
                return False
            inst = self.instantiate(vals)
        except ZeroDivisionError:
            return False
        if any(v.has(sp.zoo, sp.nan) for v in inst):
            return False
        return all(sp.simplify(inst[i] - M[i]) == 0 for i in range(len(M)))

    def to_json(self) -> dict:
        from .exprsym import to_json

        return {
            "branch": self.branch,
            "matrix": [[to_json(self.matrix[i, j]) for j in range(self.matrix.cols)]
                       for i in range(self.matrix.rows)],
            "free": [str(p) for p in self.free],
            "origin": {str(k): str(v) for k, v in self.origin.items()},
            "nonvanishing": [to_json(f) for f in self.nonvanishing],
            "equations": [to_json(e) for e in self.equations],
            "eliminated": [dict(e) for e in self.eliminated],
            **({"warning": self.warning} if self.warning else {}),
        }


def _bare_positions(M: sp.Matrix, free) -> dict:
    """First position of each free parameter appearing alone as an entry."""
    seen = {}
    for r in range(M.rows):
        for c in range(M.cols):
            e = M[r, c]
            if e in free and e not in seen.values():
                seen[(r, c)] = e
    return seen


def _det_prune(B: sp.Matrix):
    def prune(solution):
        det = sp.expand(sp.numer(sp.together(B.xreplace(solution).det(method="berkowitz"))))
        if det == 0:
            return None
        # factoring a dense determinant is costly; only harvest factors of sparse ones
        return [det] if len(sp.Add.make_args(det)) <= DET_FACTOR_TERMS else []
    return prune


def solve_automorphism_system(eqs: Sequence[sp.Expr], n: int, max_depth: int = MAX_DEPTH) -> list[AutFamily]:
    """Solve the automorphism equations into finitely many parametrized families."""
    B = unknown_matrix(n)
    unknowns = list(B)
    solver = CaseSplitSolver(unknowns, prune=_det_prune(B), max_depth=max_depth)
    leaves = solver.solve(eqs)
    families = []
    for leaf in sorted(leaves, key=lambda lf: lf.label):
        M = B.xreplace(leaf.solution).applyfunc(lambda e: sp.factor_terms(sp.cancel(e)))
        for eq in eqs:
            chk = sp.expand(sp.numer(sp.together(eq.xreplace(leaf.solution))))
            if chk != 0:
                raise AssertionError(f"leaf {leaf.label} violates {eq} = 0")
        det = sp.expand(M.det(method="berkowitz"))
        if det == 0:
            continue
        det_factors = split_factors(det) if len(sp.Add.make_args(det)) <= 4 * DET_FACTOR_TERMS else [canonical(det)]
        # rename free unknowns p1, p2, ... in order of first appearance (row-major)
        order = {s: i for i, s in enumerate(unknowns)}
        appearance = []
        for e in M:
            for s in sorted(e.free_symbols & set(leaf.free), key=order.get):
                if s not in appearance:
                    appearance.append(s)
        rename = {s: sp.Symbol(f"p{k + 1}") for k, s in enumerate(appearance)}
        nonvanishing = []
        for f in det_factors + list(leaf.nonvanishing):
            for g in split_factors(f.xreplace(rename)):
                if g not in nonvanishing:
                    nonvanishing.append(g)
        fixed = [f"{k}={'+' if v > 0 else ''}{v}" for k, v in leaf.solution.items()
                 if v.is_number and v != 0]
        label = list(leaf.label) + [c for c in fixed if c not in leaf.label]
        families.append(AutFamily(
            matrix=M.xreplace(rename),
            free=tuple(rename[s] for s in appearance),
            nonvanishing=tuple(nonvanishing),
            branch=" & ".join(label) if label else "generic",
            origin={v: k for k, v in rename.items()},
        ))
    return families


def automorphism_families(A: LieAlgebra, h_value=DEFAULT_H) -> list[AutFamily]:
    return solve_automorphism_system(generate_automorphism_system(A, h_value), A.dim)


def check_automorphism(A: LieAlgebra, Phi, h_value=DEFAULT_H) -> bool:
    """Exact test of the automorphism equations plus ``det Phi != 0``."""
    A = _rational_algebra(A, h_value)
    Phi = sp.Matrix(Phi)
    if Phi.shape != (A.dim, A.dim):
        raise ValueError("matrix has the wrong size")
    if Phi.det() == 0:
        return False
    return all(R.applyfunc(sp.simplify).is_zero_matrix for R in automorphism_residuals(A, Phi))


# --------------------------------------------------------------------------
# inner normalization

def default_order(n: int) -> list[int]:
    """Generators 3..n first, then 2, then 1."""
    return list(range(3, n + 1)) + [g for g in (2, 1) if g <= n]


def _in_family(M: sp.Matrix, free, Psi: sp.Matrix, variables, seed: int) -> bool:
    """Is ``Psi`` (depending on ``variables``) an instance of the parametrized ``M``?"""
    vals = {p: Psi[r, c] for (r, c), p in _bare_positions(M, free).items()}
    if set(vals) != set(free):
        return False
    diff = M.xreplace(vals) - Psi
    return all(is_identically_zero(d, free_vars=variables, seed=seed) for d in diff)


def normalize_inner(F: AutFamily, A: LieAlgebra, order: Sequence[int] | None = None,
                    h_value=DEFAULT_H, seed: int = 42) -> AutFamily:
    """Simplify a family by left multiplication with exp(lam C(i)).

    For each generator in ``order`` the first entry that is a bare parameter q
    and becomes ``q + a*lam`` (a invertible on the family) is set to zero,
    provided the family is mapped into itself by the flow.
    """
    A = _rational_algebra(A, h_value)
    order = list(order) if order is not None else default_order(A.dim)
    M, free = F.matrix, list(F.free)
    nonvanishing = list(F.nonvanishing)
    eliminated = list(F.eliminated)
    warning = None
    exps = {}
    for g in order:
        C = adjoint(A, g)
        if C.is_zero_matrix:
            continue
        try:
            exps[g] = matrix_exp(C, LAMBDA)
        except UnsupportedExponential as err:
            warning = f"exp(lam*C({g})) unsupported: {err}"
            log.warning(warning)

    changed = True
    while changed:
        changed = False
        for g in order:
            E = exps.get(g)
            if E is None:
                continue
            Psi = (E * M).applyfunc(sp.expand)
            for (r, c), q in sorted(_bare_positions(M, free).items()):
                entry = Psi[r, c]
                slope = sp.expand(sp.diff(entry, LAMBDA))
                if slope == 0 or sp.diff(slope, LAMBDA) != 0 or slope.has(LAMBDA):
                    continue
                facs = split_factors(slope)
                if not all(f in nonvanishing for f in facs):
                    continue
                restricted = M.xreplace({q: 0})
                if any(sp.expand(sp.sympify(f).xreplace({q: 0})) == 0 for f in nonvanishing):
                    continue
                if not _in_family(M, free, Psi, free + [LAMBDA], seed):
                    continue
                eliminated.append({"generator": g, "entry": [r + 1, c + 1], "parameter": str(q),
                                   "lam": str(sp.factor(-q / slope))})
                M = restricted
                free.remove(q)
                nonvanishing = [f for f in nonvanishing if q not in f.free_symbols] + [
                    canonical(f.xreplace({q: 0})) for f in nonvanishing if q in f.free_symbols]
                changed = True
                break
    return AutFamily(matrix=M, free=tuple(free), nonvanishing=tuple(nonvanishing), branch=F.branch,
                     origin={p: F.origin.get(p, p) for p in free}, equations=F.equations,
                     eliminated=tuple(eliminated), warning=warning)
