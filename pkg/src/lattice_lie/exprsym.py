"""Exact symbolic expressions over lattice variables.

Expressions are plain sympy objects.  Lattice-aware variables are ordinary
symbols whose names follow a fixed grammar::

    u            scalar / continuous variable
    u[n+1]       u at site n+1 of lattice axis n
    x[m-1,n]     two lattice axes
    u_tt[m]      second t-derivative of u at site m

Lattice axes are themselves integer symbols (``index("n")``) and may appear
explicitly, e.g. in ``(-1)**n``.  Everything here is a pure function.
"""
from __future__ import annotations

import cmath
import random
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import sympy as sp

Expr = sp.Expr

_NAME_RE = re.compile(
    r"^(?P<base>[A-Za-z][A-Za-z0-9]*)(?:_(?P<deriv>[a-z]+))?(?:\[(?P<sites>[^\]]+)\])?$"
)
_SITE_RE = re.compile(r"^(?P<axis>[a-z])(?P<k>[+-]\d+)?$")

DEFAULT_TRIALS = 20
DEFAULT_TOL = 1e-9
DEFAULT_SEED = 42


class UnknownVariableError(ValueError):
    pass


class InconclusiveError(RuntimeError):
    """Random evaluation kept hitting poles."""


@dataclass(frozen=True)
class VarId:
    """Structured name of a lattice variable."""

    name: str
    offset: tuple[tuple[str, int], ...] = ()
    deriv: tuple[str, ...] = ()

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", self.name):
            raise UnknownVariableError(f"bad variable name {self.name!r}")
        object.__setattr__(self, "offset", tuple(sorted(self.offset)))

    @property
    def symbol_name(self) -> str:
        s = self.name
        if self.deriv:
            s += "_" + "".join(self.deriv)
        if self.offset:
            parts = []
            for axis, k in self.offset:
                parts.append(axis if k == 0 else f"{axis}{k:+d}")
            s += "[" + ",".join(parts) + "]"
        return s

    @property
    def symbol(self) -> sp.Symbol:
        return sp.Symbol(self.symbol_name)

    def offset_on(self, axis: str) -> int | None:
        for a, k in self.offset:
            if a == axis:
                return k
        return None

    def shifted(self, axis: str, k: int) -> "VarId":
        if self.offset_on(axis) is None:
            return self
        off = tuple((a, j + k if a == axis else j) for a, j in self.offset)
        return VarId(self.name, off, self.deriv)

    def at_base(self) -> "VarId":
        return VarId(self.name, tuple((a, 0) for a, _ in self.offset), self.deriv)

    @classmethod
    def parse(cls, s: "str | sp.Symbol") -> "VarId":
        text = s.name if isinstance(s, sp.Symbol) else s
        m = _NAME_RE.match(text)
        if m is None:
            raise UnknownVariableError(f"cannot parse variable id {text!r}")
        offset = []
        if m.group("sites"):
            for part in m.group("sites").split(","):
                sm = _SITE_RE.match(part.strip())
                if sm is None:
                    raise UnknownVariableError(f"bad site offset in {text!r}")
                offset.append((sm.group("axis"), int(sm.group("k") or 0)))
        deriv = tuple(m.group("deriv") or "")
        return cls(m.group("base"), tuple(offset), deriv)


def var(name: str, offset: Mapping[str, int] | None = None, deriv: Iterable[str] = ()) -> sp.Symbol:
    """Symbol for ``name`` at the given site offsets, e.g. ``var("u", {"n": 1})``."""
    return VarId(name, tuple((offset or {}).items()), tuple(deriv)).symbol


def index(axis: str) -> sp.Symbol:
    """Integer symbol for a lattice axis, usable in explicit expressions like (-1)**n."""
    return sp.Symbol(axis, integer=True)


def site_vars(e: Expr) -> list[tuple[sp.Symbol, VarId]]:
    """Symbols of ``e`` that carry a site offset, with their parsed ids."""
    out = []
    for s in sorted(e.free_symbols, key=sp.default_sort_key):
        if s.is_integer:
            continue
        try:
            vid = VarId.parse(s)
        except UnknownVariableError:
            continue
        if vid.offset:
            out.append((s, vid))
    return out


def normalize(e) -> Expr:
    """Canonical expanded form; idempotent."""
    return sp.expand(sp.sympify(e))


def _as_symbol(v, declared=None) -> sp.Symbol:
    if isinstance(v, VarId):
        sym = v.symbol
    elif isinstance(v, sp.Symbol):
        sym = v
    elif isinstance(v, str):
        sym = VarId.parse(v).symbol
    else:
        raise UnknownVariableError(f"not a variable id: {v!r}")
    if declared is not None and sym not in declared:
        raise UnknownVariableError(f"{sym} is not a declared variable")
    return sym


def differentiate(e: Expr, v, declared: Iterable[sp.Symbol] | None = None) -> Expr:
    """Partial derivative of ``e`` with respect to variable ``v``."""
    sym = _as_symbol(v, None if declared is None else set(declared))
    return normalize(sp.diff(e, sym))


@dataclass(frozen=True)
class LatticeRule:
    """``coord[axis+1] - coord[axis] = step`` with ``step`` free of ``coord``."""

    coord: str
    axis: str
    step: Expr

    def position(self, k: int) -> Expr:
        return var(self.coord, {self.axis: 0}) + k * self.step


def shift(e: Expr, axis: str, k: int, lattice: Iterable[LatticeRule] = ()) -> Expr:
    """Relabel sites ``axis -> axis + k``.

    Explicit index symbols are shifted too.  Lattice coordinates covered by a
    rule are rewritten relative to the base site, so ``x[n+1]`` becomes
    ``x[n] + h`` under ``x[n+1] - x[n] = h``.
    """
    e = sp.sympify(e)
    mapping = {}
    for s, vid in site_vars(e):
        if vid.offset_on(axis) is not None:
            mapping[s] = vid.shifted(axis, k).symbol
    ax = index(axis)
    if ax in e.free_symbols:
        mapping[ax] = ax + k
    out = e.xreplace(mapping) if mapping else e
    return apply_lattice(out, lattice)


def apply_lattice(e: Expr, lattice: Iterable[LatticeRule]) -> Expr:
    """Replace every lattice coordinate by its base-site position."""
    rules = {(r.coord, r.axis): r for r in lattice}
    if not rules:
        return e
    mapping = {}
    for s, vid in site_vars(e):
        for axis, k in vid.offset:
            rule = rules.get((vid.name, axis))
            if rule is not None and k != 0 and not vid.deriv:
                mapping[s] = rule.position(k)
    return e.xreplace(mapping) if mapping else e


def substitute(e: Expr, bindings: Mapping) -> Expr:
    """Simultaneous substitution followed by normalization."""
    mapping = {}
    for key, val in bindings.items():
        sym = key if isinstance(key, sp.Symbol) else _as_symbol(key)
        mapping[sym] = sp.sympify(val)
    return normalize(sp.sympify(e).xreplace(mapping))


# --------------------------------------------------------------------------
# evaluation

def _walk(e, values, exact: bool):
    if e.is_Symbol:
        try:
            return values[e]
        except KeyError:
            raise UnknownVariableError(f"no value for {e}") from None
    if e.is_Integer:
        return Fraction(int(e)) if exact else complex(int(e))
    if e.is_Rational:
        return Fraction(int(e.p), int(e.q)) if exact else complex(int(e.p) / int(e.q))
    if e.is_Add:
        total = Fraction(0) if exact else 0j
        for a in e.args:
            total += _walk(a, values, exact)
        return total
    if e.is_Mul:
        prod = Fraction(1) if exact else 1 + 0j
        for a in e.args:
            prod *= _walk(a, values, exact)
        return prod
    if e.is_Pow:
        base = _walk(e.base, values, exact)
        ex = _walk(e.exp, values, exact)
        if exact:
            if ex.denominator != 1:
                raise TypeError("non-integer exponent in exact evaluation")
            n = int(ex)
            if n < 0:
                return 1 / base ** (-n)
            return base ** n
        if ex.imag == 0 and float(ex.real).is_integer():
            n = int(ex.real)
            if n < 0:
                return 1 / base ** (-n)
            return base ** n
        return base ** ex
    if exact:
        raise TypeError(f"not rational: {e.func}")
    if isinstance(e, sp.exp):
        return cmath.exp(_walk(e.args[0], values, exact))
    if e.is_number:
        return complex(e.evalf(30))
    raise TypeError(f"cannot evaluate {e.func}")


def evaluate(e: Expr, values: Mapping) -> complex:
    """Numeric value of ``e`` in complex floating point.

    Division by zero raises ZeroDivisionError.
    """
    vals = {(k if isinstance(k, sp.Symbol) else _as_symbol(k)): complex(v) for k, v in values.items()}
    return _walk(sp.sympify(e), vals, exact=False)


def evaluate_exact(e: Expr, values: Mapping) -> Fraction:
    vals = {(k if isinstance(k, sp.Symbol) else _as_symbol(k)): Fraction(v) for k, v in values.items()}
    return _walk(sp.sympify(e), vals, exact=True)


def is_rational_expr(e: Expr) -> bool:
    """True when ``e`` is built from rationals and symbols with +, *, integer powers."""
    for node in sp.preorder_traversal(e):
        if node.is_Symbol or node.is_Rational or node.is_Add or node.is_Mul:
            continue
        if node.is_Pow and node.exp.is_Integer:
            continue
        return False
    return True


def _sample_float(rng: random.Random) -> float:
    x = rng.uniform(0.1, 2.0)
    return x if rng.random() < 0.5 else -x


def _sample_fraction(rng: random.Random) -> Fraction:
    q = rng.randint(1, 97)
    p = rng.randint(q // 10 + 1, 2 * q)
    return Fraction(p if rng.random() < 0.5 else -p, q)


def sample_point(symbols: Iterable[sp.Symbol], rng: random.Random, exact: bool = False) -> dict:
    """Random point avoiding a neighbourhood of zero; lattice indices get small integers."""
    point = {}
    for s in symbols:
        if s.is_integer:
            point[s] = rng.randint(-6, 6)
        elif exact:
            point[s] = _sample_fraction(rng)
        else:
            point[s] = _sample_float(rng)
    return point


def is_identically_zero(
    e: Expr,
    free_vars: Iterable[sp.Symbol] | None = None,
    trials: int = DEFAULT_TRIALS,
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
    singular: Iterable[Expr] = (),
    fixed: Mapping | None = None,
) -> bool:
    """Randomized identity test.

    ``e`` is evaluated at ``trials`` random points (each coordinate drawn from
    [-2,-0.1] U [0.1,2]); true iff every |value| < tol.  Purely rational input
    is also evaluated exactly and must vanish exactly.  Points where ``e`` or
    any ``singular`` expression has a pole or zero are redrawn, up to
    10 x trials attempts.
    """
    if trials < 1 or tol <= 0:
        raise ValueError("need trials >= 1 and tol > 0")
    e = sp.sympify(e)
    fixed = dict(fixed or {})
    if normalize(e) == 0:
        return True
    syms = set(e.free_symbols)
    if free_vars is not None:
        syms |= set(free_vars)
    singular = [sp.sympify(s) for s in singular]
    for s in singular:
        syms |= s.free_symbols
    syms -= set(fixed)
    syms = sorted(syms, key=sp.default_sort_key)
    rng = random.Random(seed)
    exact = is_rational_expr(e) and all(
        isinstance(v, (int, Fraction)) or getattr(v, "is_Rational", False) for v in fixed.values()
    )

    def run(exact_mode: bool) -> bool:
        done = attempts = 0
        while done < trials:
            attempts += 1
            if attempts > 10 * trials:
                raise InconclusiveError(f"evaluation of {e} hit poles in {attempts - 1} attempts")
            point = sample_point(syms, rng, exact=exact_mode)
            point.update(fixed)
            try:
                if any(abs(evaluate(s, point)) < 1e-12 for s in singular):
                    continue
                if exact_mode:
                    if evaluate_exact(e, point) != 0:
                        return False
                else:
                    val = evaluate(e, point)
                    if not cmath.isfinite(val):
                        continue
                    if abs(val) >= tol:
                        return False
            except (ZeroDivisionError, OverflowError):
                continue
            done += 1
        return True

    if not run(False):
        return False
    if exact:
        return run(True)
    return True


# --------------------------------------------------------------------------
# JSON AST

def to_json(e) -> dict:
    """Serialize to the JSON AST used on the command line."""
    e = sp.sympify(e)
    if e.is_Rational:
        return {"rat": str(e)}
    if e.is_Symbol:
        if e.is_integer:
            return {"index": e.name}
        vid = VarId.parse(e)
        out: dict = {"var": vid.name}
        if vid.offset:
            out["offset"] = dict(vid.offset)
        if vid.deriv:
            out["deriv"] = list(vid.deriv)
        return out
    if e is sp.E:
        return {"op": "exp", "args": [{"rat": "1"}]}
    if e.is_Add:
        return {"op": "add", "args": [to_json(a) for a in e.args]}
    if isinstance(e, sp.exp):
        return {"op": "exp", "args": [to_json(e.args[0])]}
    if e.is_Pow:
        if not (e.exp.is_Integer or e.exp.is_integer):
            raise ValueError(f"only integer exponents are serializable: {e}")
        if e.exp.is_Integer and e.exp < 0:
            return {"op": "div", "args": [{"rat": "1"}, to_json(e.base ** -e.exp)]}
        return {"op": "pow", "args": [to_json(e.base), to_json(e.exp)]}
    if e.is_Mul:
        num = [f for f in e.args if not (f.is_Pow and f.exp.is_Integer and f.exp < 0)]
        den = [f.base ** -f.exp for f in e.args if f.is_Pow and f.exp.is_Integer and f.exp < 0]
        if den:
            return {"op": "div", "args": [to_json(sp.Mul(*num)), to_json(sp.Mul(*den))]}
        coeff, rest = e.as_coeff_Mul()
        if coeff == -1:
            return {"op": "neg", "args": [to_json(rest)]}
        return {"op": "mul", "args": [to_json(a) for a in e.args]}
    raise ValueError(f"cannot serialize {e!r}")


def from_json(node) -> Expr:
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return sp.Rational(str(node))
    if isinstance(node, str):
        return sp.Rational(node)
    if not isinstance(node, dict):
        raise ValueError(f"bad expression node: {node!r}")
    if "rat" in node:
        return sp.Rational(str(node["rat"]))
    if "index" in node:
        return index(node["index"])
    if "var" in node:
        return var(node["var"], node.get("offset"), node.get("deriv", ()))
    op = node.get("op")
    args = [from_json(a) for a in node.get("args", [])]
    if op == "add":
        return sp.Add(*args)
    if op == "mul":
        return sp.Mul(*args)
    if op == "neg" and len(args) == 1:
        return -args[0]
    if op == "div" and len(args) == 2:
        return args[0] / args[1]
    if op == "exp" and len(args) == 1:
        return sp.exp(args[0])
    if op == "pow" and len(args) == 2:
        ex = args[1]
        if not (ex.is_Integer or (ex.is_integer and not ex.is_number)):
            raise ValueError(f"exponent must be an integer, got {ex}")
        return args[0] ** ex
    raise ValueError(f"bad expression node: {node!r}")


def parse(text: str, **extra) -> Expr:
    """Parse a string such as ``"u[n+1] - 2*u[n]"`` into an expression."""
    names = {}

    def repl(m):
        key = f"_v{len(names)}"
        names[key] = VarId.parse(m.group(0)).symbol
        return key

    pattern = re.compile(r"[A-Za-z][A-Za-z0-9]*(?:_[a-z]+)?\[[^\]]+\]")
    body = pattern.sub(repl, text)
    local = {"exp": sp.exp, "I": sp.I, **extra, **names}
    for ax in ("n", "m"):
        local.setdefault(ax, index(ax))
    return sp.sympify(body, locals=local, rational=True)
