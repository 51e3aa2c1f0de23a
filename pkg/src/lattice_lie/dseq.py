"""Discrete Painleve I: continuous classification, flow of the extended equation, discrete symmetries.

Also hosts the determining equation of the Volterra lattice, which is emitted
but not solved.
"""
from __future__ import annotations

import cmath
import random
from dataclasses import dataclass, field

import sympy as sp

from .exprsym import index, is_identically_zero, var
from .latfield import DifferenceSystem, LatticeVectorField, is_symmetry, lattice_rule
from .liealg import H
from .realize import PointTransformation, check_form_invariance

ALPHA, BETA, GAMMA = sp.symbols("alpha beta gamma")
LAM = sp.Symbol("lam")
K0, K1, K2, K3 = sp.symbols("K0 K1 K2 K3")
N = index("n")
# the two nontrivial cube roots of unity
OMEGA = (sp.I * sp.sqrt(3) - 1) / 2
OMEGA_BAR = -(sp.I * sp.sqrt(3) + 1) / 2

X, U = var("x", {"n": 0}), var("u", {"n": 0})
U_PLUS, U_MINUS = var("u", {"n": 1}), var("u", {"n": -1})
PHI0, PHI0_PLUS, PHI0_MINUS = var("phi0", {"n": 0}), var("phi0", {"n": 1}), var("phi0", {"n": -1})


@dataclass(frozen=True)
class DP1Params:
    alpha: sp.Expr = ALPHA
    beta: sp.Expr = BETA
    gamma: sp.Expr = GAMMA
    h: sp.Expr = H
    x0: sp.Expr = sp.Integer(0)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "h", "x0"):
            v = getattr(self, name)
            object.__setattr__(self, name, sp.Rational(v) if isinstance(v, (str, float)) else sp.sympify(v))
        if self.h.is_number and not self.h > 0:
            raise ValueError("lattice spacing must be positive")

    def values(self) -> dict:
        return {ALPHA: self.alpha, BETA: self.beta, GAMMA: self.gamma}

    def to_json(self) -> dict:
        return {k: str(getattr(self, k)) for k in ("alpha", "beta", "gamma", "h", "x0")}


def dp1_system(p: DP1Params | None = None) -> DifferenceSystem:
    """``u[n+1] + u[n] + u[n-1] - (alpha x[n] + beta)/u[n] - gamma = 0`` on ``x[n+1] - x[n] = h``."""
    p = p or DP1Params()
    delta = U_PLUS + U + U_MINUS - (p.alpha * X + p.beta) / U - p.gamma
    rule = lattice_rule(var("x", {"n": 1}) - X - p.h)
    return DifferenceSystem(delta, (rule,), {"n": (-1, 1)}, (U,), "u", (), U_PLUS)


def alternating_factor(x, p: DP1Params) -> int:
    """``(-1)**((x - x0)/h)``, defined only on lattice points."""
    k = sp.nsimplify((sp.sympify(x) - p.x0) / p.h)
    if not k.is_Integer:
        raise ValueError(f"{x} is not a lattice point")
    return -1 if int(k) % 2 else 1


# --------------------------------------------------------------------------
# continuous symmetries

@dataclass
class ContinuousSymmetries:
    regime: str
    generators: list
    names: list
    verified: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.generators)

    def to_json(self) -> dict:
        return {"regime": self.regime, "dim": self.dim, "generators": self.names,
                "verified": self.verified}


def classify_continuous(p: DP1Params, verify: bool = True, seed: int = 42) -> ContinuousSymmetries:
    """Point symmetries of dPI according to which of alpha, beta vanish."""
    if p.alpha != 0:
        out = ContinuousSymmetries("alpha != 0: no symmetry", [], [])
    elif p.beta != 0:
        out = ContinuousSymmetries("alpha = 0, beta != 0: translations in x",
                                   [LatticeVectorField({"x": 1}, 0)], ["d/dx"])
    else:
        g = p.gamma
        out = ContinuousSymmetries(
            "alpha = beta = 0: linear equation",
            [LatticeVectorField({"x": 1}, 0),
             LatticeVectorField({}, U - g / 3),
             LatticeVectorField({}, OMEGA**N),
             LatticeVectorField({}, OMEGA_BAR**N)],
            ["d/dx", f"({sp.Symbol('u') - g / 3}) d/du", "((i*sqrt(3) - 1)/2)**n d/du",
             "(-(i*sqrt(3) + 1)/2)**n d/du"],
        )
    if verify:
        S = dp1_system(p)
        out.verified = [is_symmetry(X_, S, seed=seed) for X_ in out.generators]
    return out


def phi0_closed_form(gamma, k1, k2, k3, n):
    """phi0 at site n for the alpha = beta = 0 regime."""
    return -gamma * k1 / 3 + k2 * OMEGA**n + k3 * OMEGA_BAR**n


def closed_form_residual(gamma, n_max: int = 20, seed: int = 42, ks=None) -> float:
    """Max |phi0[n+1] + phi0[n] + phi0[n-1] + gamma*K1| over n = 1..n_max, in complex floats."""
    if n_max < 3:
        raise ValueError("n_max must be at least 3")
    rng = random.Random(seed)
    if ks is None:
        ks = [complex(rng.uniform(-2, 2), rng.uniform(-2, 2)) for _ in range(3)]
    k1, k2, k3 = ks
    w, wb = complex(-0.5, 3**0.5 / 2), complex(-0.5, -(3**0.5) / 2)
    g = complex(gamma)

    def phi0(n):
        return -g * k1 / 3 + k2 * w**n + k3 * wb**n

    return max(abs(phi0(n + 1) + phi0(n) + phi0(n - 1) + g * k1) for n in range(1, n_max + 1))


def affine_symmetry_sweep(p: DP1Params, degree: int = 2) -> int:
    """Dimension of the space of fields ``K0 d/dx + (phi0(x) + u phi1(x)) d/du``, phi_i polynomial."""
    S = dp1_system(p)
    a = sp.symbols(f"_a0:{degree + 1}")
    b = sp.symbols(f"_b0:{degree + 1}")
    k0 = sp.Symbol("_k0")
    phi = sum(a[i] * X**i for i in range(degree + 1)) + U * sum(b[i] * X**i for i in range(degree + 1))
    Xf = LatticeVectorField({"x": k0}, phi)
    from .latfield import invariance_residual, lattice_residuals

    unknowns = [k0, *a, *b]
    eqs = []
    for r in [invariance_residual(Xf, S)] + lattice_residuals(Xf, S):
        num = sp.expand(sp.numer(sp.together(r)))
        syms = sorted(num.free_symbols - set(unknowns), key=sp.default_sort_key)
        if num == 0:
            continue
        eqs.extend(sp.Poly(num, *syms).coeffs() if syms else [num])
    M = sp.Matrix([[sp.diff(e, u) for u in unknowns] for e in eqs]) if eqs else sp.zeros(1, len(unknowns))
    return len(unknowns) - M.rank()


def x_shift_parameter_map(p: DP1Params, s) -> DP1Params:
    """The flow x -> x + s rewrites the equation with beta -> beta - alpha*s."""
    return DP1Params(p.alpha, p.beta - p.alpha * sp.sympify(s), p.gamma, p.h, p.x0)


# --------------------------------------------------------------------------
# flow of the extended equation

@dataclass
class FlowSolution:
    """Closed forms of the transformed variable and of F along the flow (no x-shift).

    ``phi0``, ``phi0_plus``, ``phi0_minus`` are values at sites n, n+1, n-1;
    ``phi1`` and ``phi1_minus`` likewise.
    """

    params: DP1Params
    u_hat: sp.Expr
    F: sp.Expr
    phi0: sp.Expr = PHI0
    phi0_plus: sp.Expr = PHI0_PLUS
    phi0_minus: sp.Expr = PHI0_MINUS
    phi1: sp.Expr = K1 + K2 * (-1) ** N
    phi1_minus: sp.Expr = K1 + K2 * (-1) ** (N - 1)

    def F0(self) -> sp.Expr:
        """F at lam = 0 in closed form."""
        p = self.params
        return -U + (p.alpha * X + p.beta) / U + p.gamma

    def specialize(self, e: sp.Expr, phi0=None, k2=None) -> sp.Expr:
        """Substitute phi0 = phi0(n) (a function of the site index) and/or a value of K2."""
        out = e
        if k2 is not None:
            out = out.xreplace({K2: k2})
        if phi0 is not None:
            out = out.xreplace({PHI0: phi0(N), PHI0_PLUS: phi0(N + 1), PHI0_MINUS: phi0(N - 1)})
        return out

    def pde_residual(self) -> sp.Expr:
        """``F_lam + phi(x,u) F_u - phi(x+, u+) - phi(x-, F - u+)`` with phi = phi0 + u phi1."""
        phi1_plus = self.phi1.xreplace({N: N + 1})
        lhs = sp.diff(self.F, LAM) + (self.phi0 + U * self.phi1) * sp.diff(self.F, U)
        rhs = (self.phi0_plus + U_PLUS * phi1_plus) + (self.phi0_minus + (self.F - U_PLUS) * self.phi1_minus)
        return lhs - rhs


def flow_solution(p: DP1Params) -> FlowSolution:
    """u^(lam) and F(x^, u^; lam) for the generator phi0 + u phi1 with K0 = 0."""
    phi1 = K1 + K2 * (-1) ** N
    phi1m = K1 + K2 * (-1) ** (N - 1)
    E = sp.exp(LAM * phi1)
    Einv = sp.exp(-LAM * phi1)
    ratio = PHI0 / phi1
    u_hat = E * (U + ratio * (1 - Einv))
    F = (sp.exp(LAM * phi1m) * (ratio * (1 - Einv) + (p.alpha * X + p.beta) / (U * Einv - ratio * (1 - Einv))
                                + p.gamma)
         - U * sp.exp(LAM * (phi1m - phi1))
         - (PHI0_PLUS + PHI0_MINUS) / phi1m * (1 - sp.exp(LAM * phi1m)))
    sol = FlowSolution(p, u_hat, F)
    if not is_identically_zero(F.xreplace({LAM: 0}) - sol.F0(), singular=(U,)):
        raise AssertionError("flow does not start at the original equation")
    return sol


def u_hat_value(u, lam, phi0, phi1) -> complex:
    """Numeric value of the transformed variable."""
    e = cmath.exp(lam * phi1)
    return e * (u + phi0 / phi1 * (1 - 1 / e))


# --------------------------------------------------------------------------
# discrete symmetries by periodicity of the flow

@dataclass
class DiscreteChain:
    steps: list = field(default_factory=list)
    transformations: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"steps": self.steps, "discrete": [T.to_json() for T in self.transformations]}


def _periodic(sol: FlowSolution, lam0) -> bool:
    """Does F at lam0 coincide with F at 0, with phi0 = 0, K2 = 0, K1 = 1?"""
    F = sol.specialize(sol.F, phi0=lambda n: 0, k2=0).xreplace({K1: 1})
    diff = F.xreplace({LAM: lam0}) - F.xreplace({LAM: 0})
    return is_identically_zero(diff, singular=(U,), trials=30)


def discrete_chain(p: DP1Params) -> DiscreteChain:
    """Periodicity conditions on the flow, followed step by step."""
    chain = DiscreteChain()
    sol = flow_solution(p)
    chain.steps.append("u^ coefficient of F must return to -u^ for every site: K2 = 0, phi1 = K1")
    chain.steps.append("phi0 (1 - exp(-lam0 K1)) = 0: either lam0 K1 = 2 pi i N (identity) or phi0 = 0")
    # lam0 K1 = 2 pi i N returns the identity map: nothing new
    if not _periodic(sol, 2 * sp.pi * sp.I):
        raise AssertionError("full period of the flow should be trivially periodic")
    # with phi0 = 0 the flow is u^ = exp(lam K1) u; the half period gives u^ = -u
    if _periodic(sol, sp.pi * sp.I):
        chain.steps.append("phi0 = 0 and lam0 K1 = i pi N is a period of F: u^ = -u")
        T = PointTransformation({"x": X, "u": -U}, [("x", X), ("u", U)], tag="discrete")
        chain.transformations.append(T)
    else:
        chain.steps.append("phi0 = 0 forces lam0 K1 = 2 pi i N since gamma != 0: no discrete symmetry")
    return chain


def discrete_symmetries_dp1(p: DP1Params, check: bool = True, seed: int = 42, trials: int = 100):
    """Nontrivial discrete symmetries from the periodicity chain, each checked on the equation."""
    chain = discrete_chain(p)
    out = []
    S = dp1_system(p)
    for T in chain.transformations:
        if check:
            report = check_form_invariance(T, S, trials=trials, seed=seed)
            if not report.admissible:
                raise AssertionError(f"{T.describe()} fails form invariance")
        out.append(T)
    return out


# --------------------------------------------------------------------------
# Volterra lattice

T_SYM = sp.Symbol("t")


def volterra_determining_equation() -> dict:
    """Determining equation for F = u_t = u (u+ - u-) with unknown tau(t), phi(t, u)."""
    u, up, um = sp.symbols("u u_plus u_minus")
    tau = sp.Function("tau")(T_SYM)
    phi = sp.Function("phi")
    F = u * (up - um)
    lhs = (sp.diff(F, LAM) + tau * sp.diff(F, T_SYM) + phi(T_SYM, u) * sp.diff(F, u)
           + phi(T_SYM, up) * sp.diff(F, up) + phi(T_SYM, um) * sp.diff(F, um))
    rhs = sp.diff(phi(T_SYM, u), T_SYM) + (sp.diff(phi(T_SYM, u), u) - sp.diff(tau, T_SYM)) * F
    eq = sp.expand(lhs - rhs)
    return {
        "equation": f"{eq} = 0",
        "unknowns": ["tau(t)", "phi(t, u)"],
        "underdetermined": True,
        "note": "one functional equation for an unrestricted function phi(t, u); no ansatz is attempted",
    }
