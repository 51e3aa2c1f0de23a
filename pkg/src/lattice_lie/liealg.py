"""Lie algebras given by structure constants, adjoint matrices, exact exponentials.

Generators are numbered from 1 in the public API (``adjoint(A, 5)`` is ad X5),
matching how brackets are written by hand; matrices are ordinary 0-based
sympy matrices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import factorial
from pathlib import Path

import sympy as sp

from .exprsym import parse

H = sp.Symbol("h")
DEFAULT_H = sp.Rational(7, 3)
MAX_EXP_DIM = 8


class UnsupportedExponential(ValueError):
    def __init__(self, message, minimal_polynomial=None):
        super().__init__(message)
        self.minimal_polynomial = minimal_polynomial


@dataclass(frozen=True)
class LieAlgebra:
    """Structure constants ``c[i][j][k]`` with ``[X_i, X_j] = sum_k c[i][j][k] X_k`` (0-based)."""

    dim: int
    c: tuple
    basis: tuple[str, ...] = ()

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        c = tuple(
            tuple(tuple(sp.sympify(self.c[i][j][k]) for k in range(self.dim)) for j in range(self.dim))
            for i in range(self.dim)
        )
        object.__setattr__(self, "c", c)
        if not self.basis:
            object.__setattr__(self, "basis", tuple(f"X{i + 1}" for i in range(self.dim)))

    @classmethod
    def from_brackets(cls, dim: int, brackets: dict, basis=(), antisymmetrize=True) -> "LieAlgebra":
        """``brackets`` maps 1-based pairs ``(i, j)`` to ``{k: coeff}``."""
        c = [[[sp.Integer(0)] * dim for _ in range(dim)] for _ in range(dim)]
        for (i, j), coeffs in brackets.items():
            for k, v in coeffs.items():
                v = sp.sympify(v)
                c[i - 1][j - 1][k - 1] = v
                if antisymmetrize:
                    c[j - 1][i - 1][k - 1] = -v
        return cls(dim, c, tuple(basis))

    @classmethod
    def abelian(cls, dim: int) -> "LieAlgebra":
        return cls.from_brackets(dim, {})

    def bracket(self, i: int, j: int) -> dict[int, sp.Expr]:
        """Nonzero coefficients of [X_i, X_j], 1-based."""
        return {k + 1: v for k, v in enumerate(self.c[i - 1][j - 1]) if v != 0}

    def symbols(self) -> set:
        out = set()
        for plane in self.c:
            for row in plane:
                for v in row:
                    out |= v.free_symbols
        return out

    def instantiate(self, h=DEFAULT_H) -> "LieAlgebra":
        """Replace the lattice spacing symbol by a number."""
        h = sp.Rational(h) if isinstance(h, str) else sp.sympify(h)
        c = [[[sp.sympify(v).subs(H, h) for v in row] for row in plane] for plane in self.c]
        return LieAlgebra(self.dim, c, self.basis)

    def nonzero_brackets(self) -> dict[tuple[int, int], dict[int, sp.Expr]]:
        out = {}
        for i in range(1, self.dim + 1):
            for j in range(i + 1, self.dim + 1):
                b = self.bracket(i, j)
                if b:
                    out[(i, j)] = b
        return out

    def to_json(self) -> dict:
        brackets = [
            {"i": i, "j": j, "coeffs": {str(k): str(v) for k, v in coeffs.items()}}
            for (i, j), coeffs in self.nonzero_brackets().items()
        ]
        return {"dim": self.dim, "basis": list(self.basis), "brackets": brackets}

    @classmethod
    def from_json(cls, data: dict) -> "LieAlgebra":
        dim = int(data["dim"])
        brackets = {}
        for item in data.get("brackets", []):
            i, j = int(item["i"]), int(item["j"])
            if not (1 <= i <= dim and 1 <= j <= dim):
                raise ValueError(f"bracket index out of range: ({i}, {j})")
            coeffs = {}
            for k, v in item["coeffs"].items():
                k = int(k)
                if not 1 <= k <= dim:
                    raise ValueError(f"coefficient index out of range: {k}")
                coeffs[k] = parse(str(v), h=H)
            brackets[(i, j)] = coeffs
        return cls.from_brackets(dim, brackets, tuple(data.get("basis", ())))

    @classmethod
    def load(cls, path) -> "LieAlgebra":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ValidationReport:
    antisymmetry: list[tuple[int, int, int]] = field(default_factory=list)
    jacobi: list[tuple[int, int, int, int]] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.antisymmetry and not self.jacobi

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "antisymmetry_violations": [list(t) for t in self.antisymmetry],
            "jacobi_violations": [list(t) for t in self.jacobi],
        }


def _numeric_algebra(A: LieAlgebra, h_value) -> LieAlgebra:
    if A.symbols():
        A = A.instantiate(h_value)
        if A.symbols():
            raise ValueError(f"structure constants contain unknown symbols: {A.symbols()}")
    return A


def check_lie_algebra(A: LieAlgebra, h_value=DEFAULT_H) -> ValidationReport:
    """Exact antisymmetry and Jacobi checks; reported indices are 1-based."""
    B = _numeric_algebra(A, h_value)
    n, c = B.dim, B.c
    report = ValidationReport()
    for i in range(n):
        for j in range(i, n):
            for k in range(n):
                if c[i][j][k] + c[j][i][k] != 0:
                    report.antisymmetry.append((i + 1, j + 1, k + 1))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    s = sum(
                        c[i][j][m] * c[m][k][l] + c[j][k][m] * c[m][i][l] + c[k][i][m] * c[m][j][l]
                        for m in range(n)
                    )
                    if s != 0:
                        report.jacobi.append((i + 1, j + 1, k + 1, l + 1))
    return report


def adjoint(A: LieAlgebra, generator: int) -> sp.Matrix:
    """Matrix C(i) of ad X_i: entry (k, j) is c[i][j][k]."""
    if not 1 <= generator <= A.dim:
        raise IndexError(f"generator {generator} out of range 1..{A.dim}")
    i = generator - 1
    return sp.Matrix(A.dim, A.dim, lambda k, j: A.c[i][j][k])


def minimal_polynomial(M: sp.Matrix, z: sp.Symbol) -> sp.Expr:
    """Monic minimal polynomial via the first linear dependence among I, M, M^2, ..."""
    n = M.rows
    if any(not v.is_Rational for v in M):
        raise UnsupportedExponential("matrix must have rational entries")
    powers = [sp.eye(n)]
    for d in range(1, n + 1):
        powers.append(powers[-1] * M)
        cols = sp.Matrix.hstack(*[P.reshape(n * n, 1) for P in powers])
        null = cols.nullspace()
        if null:
            v = null[0]
            v = v / v[d]
            return sp.expand(sum(v[k] * z**k for k in range(d + 1)))
    raise AssertionError("Cayley-Hamilton violated")


def matrix_exp(M: sp.Matrix, lam: sp.Symbol) -> sp.Matrix:
    """Exact ``exp(lam*M)`` for rational ``M`` whose eigenvalues are all rational.

    Uses Hermite interpolation of ``exp(lam*z)`` on the roots of the minimal
    polynomial, so nilpotent parts (repeated roots) are handled exactly.
    """
    M = sp.Matrix(M)
    if M.rows != M.cols:
        raise ValueError("matrix must be square")
    if M.rows > MAX_EXP_DIM:
        raise UnsupportedExponential(f"dimension {M.rows} exceeds cap {MAX_EXP_DIM}")
    n = M.rows
    if M.is_zero_matrix:
        return sp.eye(n)
    z = sp.Symbol("z")
    mp = minimal_polynomial(M, z)
    _, factors = sp.factor_list(mp, z)
    roots = []
    for f, mult in factors:
        if sp.degree(f, z) != 1:
            raise UnsupportedExponential(
                f"minimal polynomial {sp.factor(mp)} has irrational or complex roots", mp
            )
        roots.append((sp.solve(f, z)[0], mult))
    d = sum(m for _, m in roots)
    rows, rhs = [], []
    for r, mult in roots:
        for k in range(mult):
            rows.append([
                sp.Integer(factorial(j) // factorial(j - k)) * r ** (j - k) if j >= k else sp.Integer(0)
                for j in range(d)
            ])
            rhs.append(lam**k * sp.exp(r * lam))
    coeffs = sp.Matrix(rows).inv() * sp.Matrix(rhs)
    result = sp.zeros(n)
    P = sp.eye(n)
    for j in range(d):
        result += coeffs[j] * P
        P = P * M
    return result.applyfunc(sp.expand)
