"""Command line front end: ``lattice-lie <command> ...``.

Exit codes: 0 ok, 1 invalid input (e.g. Jacobi violation), 2 unreadable input,
3-7 failure in the verify, aut, normalize, realize, form stages.
"""
from __future__ import annotations

import json
import sys
import time
from fractions import Fraction
from importlib import resources
from pathlib import Path

import click
import sympy as sp

from . import dseq
from .autosolve import (automorphism_families, generate_automorphism_system, normalize_inner, propagate,
                        unknown_matrix)
from .exprsym import to_json
from .latfield import DifferenceSystem, load_fields, verify_symmetry_algebra
from .liealg import LieAlgebra, adjoint, check_lie_algebra
from .realize import STAGES, StageError, run_pipeline

EXIT_INVALID = 1
EXIT_PARSE = 2
STAGE_EXIT = {stage: 3 + k for k, stage in enumerate(STAGES)}

DEMOS = {
    "toda": ("toda_algebra.json", "toda_fields.json", "toda_equation.json"),
    "volterra": ("volterra_algebra.json", "volterra_fields.json", "volterra_equation.json"),
}
DP1_DEMO = [(1, 3, 6), (0, 3, 6), (0, 0, 6), (1, 3, 0)]


class Config:
    def __init__(self, seed, trials, tol, h, fmt, out):
        if trials < 1:
            raise click.BadParameter("trials must be at least 1")
        if tol <= 0:
            raise click.BadParameter("tol must be positive")
        try:
            self.h = sp.Rational(h)
        except (TypeError, ValueError, sp.SympifyError) as err:
            raise click.BadParameter(f"--h must be rational, got {h!r}") from err
        if self.h <= 0:
            raise click.BadParameter("--h must be positive")
        self.seed, self.trials, self.tol, self.fmt, self.out = seed, trials, tol, fmt, out

    def emit(self, data: dict, lines: list[str]):
        text = json.dumps(data, indent=2) if self.fmt == "json" else "\n".join(lines)
        if self.out:
            Path(self.out).write_text(text + "\n")
        else:
            click.echo(text)


def data_path(name: str) -> Path:
    """A path on disk, or the name of a bundled example file."""
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("lattice_lie") / "data" / name
    if bundled.is_file():
        return Path(str(bundled))
    return p


def _load(loader, path):
    try:
        return loader(data_path(path))
    except (OSError, ValueError, KeyError, TypeError) as err:
        click.echo(f"error: cannot read {path}: {err}", err=True)
        sys.exit(EXIT_PARSE)


def _run(cfg: Config, algebra, fields, equation, until):
    A = _load(LieAlgebra.load, algebra)
    X = _load(load_fields, fields)
    S = _load(DifferenceSystem.load, equation)
    try:
        return run_pipeline(A, X, S, h_value=cfg.h, trials=cfg.trials, tol=cfg.tol, seed=cfg.seed, until=until)
    except StageError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(STAGE_EXIT[err.stage])


def _matrix_lines(M: sp.Matrix) -> list[str]:
    cells = [[str(M[i, j]) for j in range(M.cols)] for i in range(M.rows)]
    w = max(len(c) for row in cells for c in row)
    return ["[" + "  ".join(c.rjust(w) for c in row) + "]" for row in cells]


def _family_lines(F, k) -> list[str]:
    out = [f"family {k}: {F.branch}"]
    out += ["  " + line for line in _matrix_lines(F.matrix)]
    out.append("  free: " + ", ".join(str(p) for p in F.free))
    if F.nonvanishing:
        out.append("  nonzero: " + ", ".join(str(f) for f in F.nonvanishing))
    for e in F.eliminated:
        out.append(f"  removed {e['parameter']} with exp(lam ad X{e['generator']}), lam = {e['lam']}")
    if F.warning:
        out.append(f"  warning: {F.warning}")
    return out


@click.group()
@click.option("--seed", type=int, default=42, envvar="LATTICE_LIE_SEED", show_default=True)
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--tol", type=float, default=1e-9, show_default=True)
@click.option("--h", "h", default="7/3", show_default=True, help="lattice spacing used for exact solving")
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="text", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="write output to FILE")
@click.pass_context
def main(ctx, seed, trials, tol, h, fmt, out):
    """Discrete symmetries of lattice equations from automorphisms of their symmetry algebras."""
    ctx.obj = Config(seed, trials, tol, h, fmt, out)


# ---------------------------------------------------------------- algebra

@main.group()
def algebra():
    """Structure constants."""


@algebra.command("check")
@click.argument("path")
@click.pass_obj
def algebra_check(cfg: Config, path):
    """Antisymmetry and Jacobi identity."""
    A = _load(LieAlgebra.load, path)
    try:
        report = check_lie_algebra(A, cfg.h)
    except ValueError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(EXIT_PARSE)
    lines = [f"dimension {A.dim}: " + ("valid Lie algebra" if report.valid else "not a Lie algebra")]
    lines += [f"  antisymmetry fails at (i, j, k) = {t}" for t in report.antisymmetry]
    lines += [f"  Jacobi fails at (i, j, k, l) = {t}" for t in report.jacobi]
    cfg.emit({"dim": A.dim, **report.to_json()}, lines)
    sys.exit(0 if report.valid else EXIT_INVALID)


@algebra.command("adjoint")
@click.argument("path")
@click.option("-i", "generator", type=int, required=True, help="1-based generator index")
@click.pass_obj
def algebra_adjoint(cfg: Config, path, generator):
    """Matrix of ad X_i."""
    A = _load(LieAlgebra.load, path)
    try:
        C = adjoint(A, generator)
    except IndexError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(EXIT_INVALID)
    data = {"generator": generator, "matrix": [[to_json(C[i, j]) for j in range(C.cols)] for i in range(C.rows)]}
    cfg.emit(data, [f"ad X{generator}:"] + _matrix_lines(C))


# ---------------------------------------------------------------- automorphisms

@main.group()
def aut():
    """Automorphism equations and their solution families."""


@aut.command("system")
@click.argument("path")
@click.pass_obj
def aut_system(cfg: Config, path):
    """Quadratic equations on the automorphism matrix, before and after propagation."""
    A = _load(LieAlgebra.load, path)
    try:
        eqs = generate_automorphism_system(A, cfg.h)
        assigned, rest = propagate(eqs, list(unknown_matrix(A.dim)))
    except Exception as err:  # noqa: BLE001
        click.echo(f"error: {err}", err=True)
        sys.exit(STAGE_EXIT["aut"])
    data = {
        "equations": [to_json(e) for e in eqs],
        "propagated": [{"unknown": str(k), "value": to_json(v)} for k, v in assigned],
        "remaining": [to_json(e) for e in rest],
    }
    lines = [f"{len(eqs)} equations"]
    lines += [f"  {k} = {v}" for k, v in assigned]
    lines += [f"  {e} = 0" for e in rest]
    cfg.emit(data, lines)


def _aut_families(cfg: Config, path, until):
    A = _load(LieAlgebra.load, path)
    stage = "aut"
    try:
        fams = automorphism_families(A, cfg.h)
        if until == "normalize":
            stage = "normalize"
            fams = [normalize_inner(F, A, h_value=cfg.h, seed=cfg.seed) for F in fams]
    except Exception as err:  # noqa: BLE001
        click.echo(f"error: [{stage}] {err}", err=True)
        sys.exit(STAGE_EXIT[stage])
    lines = []
    for k, F in enumerate(fams, 1):
        lines += _family_lines(F, k)
    cfg.emit({"families": [F.to_json() for F in fams]}, lines)


@aut.command("solve")
@click.argument("path")
@click.pass_obj
def aut_solve(cfg: Config, path):
    """All families of automorphisms, by case splitting."""
    _aut_families(cfg, path, "aut")


@aut.command("normalize")
@click.argument("path")
@click.pass_obj
def aut_normalize(cfg: Config, path):
    """Families with inner automorphism parameters removed."""
    _aut_families(cfg, path, "normalize")


# ---------------------------------------------------------------- fields and pipeline

@main.command()
@click.argument("fields")
@click.argument("equation")
@click.pass_obj
def verify(cfg: Config, fields, equation):
    """Check each field is a symmetry and recover the structure constants."""
    X = _load(load_fields, fields)
    S = _load(DifferenceSystem.load, equation)
    report = verify_symmetry_algebra(X, S, trials=cfg.trials, tol=cfg.tol, seed=cfg.seed)
    lines = [f"X{k}: " + ("symmetry" if ok else "NOT a symmetry") for k, ok in enumerate(report.symmetric, 1)]
    if report.algebra is not None:
        lines += [f"[X{i}, X{j}] = " + " + ".join(f"({v})*X{k}" for k, v in c.items())
                  for (i, j), c in report.algebra.nonzero_brackets().items()] or ["abelian"]
    else:
        lines.append(f"no closure: {report.failure}")
    cfg.emit(report.to_json(), lines)
    if not (all(report.symmetric) and report.algebra is not None):
        sys.exit(STAGE_EXIT["verify"])


@main.command()
@click.argument("algebra_path", metavar="ALGEBRA")
@click.argument("fields")
@click.argument("equation")
@click.pass_obj
def realize(cfg: Config, algebra_path, fields, equation):
    """Point transformations realizing each normalized automorphism family."""
    report = _run(cfg, algebra_path, fields, equation, "realize")
    data = report.to_json()
    cfg.emit({k: data[k] for k in ("families", "realizations", "notes")}, _realize_lines(report))


def _realize_lines(report) -> list[str]:
    lines = []
    for k, res in report.realizations:
        lines.append(f"family {k + 1} ({report.normalized[k].branch}):")
        lines += [f"  {T.describe()}" for T in res.transformations]
        if res.diagnostic:
            lines.append(f"  {res.diagnostic}")
    return lines


def _discrete_payload(report, fields_path):
    data = report.to_json()
    X = [f.to_json() for f in load_fields(data_path(fields_path))]
    return {
        "continuous": {"dim": report.algebra.dim, "algebra": data["algebra"], "fields": X},
        "discrete": data["discrete"],
        "families": data["families"],
        "realizations": data["realizations"],
        "form_invariance": data["form_invariance"],
        "notes": data["notes"],
    }


def _discrete_lines(report) -> list[str]:
    lines = [f"continuous symmetry algebra: dimension {report.algebra.dim}"]
    lines += _realize_lines(report)
    for rep in report.invariance:
        for a in rep.admissible:
            lines.append(f"  admissible [{a.tag}]: {a.transformation.describe()}")
    lines.append(f"discrete symmetries modulo the continuous group: {len(report.discrete)}")
    lines += [f"  {T.describe()}" for T in report.discrete]
    lines += [f"note: {n}" for n in report.notes]
    return lines


@main.command()
@click.argument("algebra_path", metavar="ALGEBRA")
@click.argument("fields")
@click.argument("equation")
@click.pass_obj
def discrete(cfg: Config, algebra_path, fields, equation):
    """Full pipeline: discrete symmetries modulo the continuous group."""
    report = _run(cfg, algebra_path, fields, equation, "form")
    cfg.emit(_discrete_payload(report, fields), _discrete_lines(report))


# ---------------------------------------------------------------- dPI

def _number(text: str):
    try:
        return sp.Rational(str(Fraction(text)))
    except (ValueError, ZeroDivisionError) as err:
        raise click.BadParameter(f"expected a rational number, got {text!r}") from err


def _dp1_report(cfg: Config, alpha, beta, gamma):
    p = dseq.DP1Params(alpha, beta, gamma, h=cfg.h)
    cont = dseq.classify_continuous(p, seed=cfg.seed)
    disc = dseq.discrete_symmetries_dp1(p, seed=cfg.seed, trials=max(cfg.trials, 100))
    chain = dseq.discrete_chain(p)
    data = {"params": {"alpha": str(alpha), "beta": str(beta), "gamma": str(gamma), "h": str(cfg.h)},
            "continuous": cont.to_json(),
            "discrete": [T.to_json() for T in disc],
            "steps": chain.steps}
    lines = [f"alpha={alpha} beta={beta} gamma={gamma}",
             f"  continuous: dim {cont.dim} ({cont.regime})"]
    lines += [f"    {n}" for n in cont.names]
    lines += [f"  discrete: {T.describe()}" for T in disc] or ["  discrete: none"]
    return data, lines


@main.command()
@click.option("--alpha", required=True)
@click.option("--beta", required=True)
@click.option("--gamma", required=True)
@click.pass_obj
def dp1(cfg: Config, alpha, beta, gamma):
    """Continuous and discrete symmetries of u[n+1] + u[n] + u[n-1] = (alpha x + beta)/u + gamma."""
    data, lines = _dp1_report(cfg, _number(alpha), _number(beta), _number(gamma))
    cfg.emit(data, lines)


# ---------------------------------------------------------------- demos

@main.command()
@click.argument("name", type=click.Choice(["toda", "dp1", "volterra"]))
@click.pass_obj
def demo(cfg: Config, name):
    """Canned runs on the bundled examples."""
    start = time.perf_counter()
    if name == "dp1":
        runs = [_dp1_report(cfg, *map(sp.Integer, abg)) for abg in DP1_DEMO]
        data = {"runs": [d for d, _ in runs]}
        lines = [line for _, ls in runs for line in ls]
    else:
        alg, fields, eq = DEMOS[name]
        report = _run(cfg, alg, fields, eq, "form")
        data = _discrete_payload(report, fields)
        lines = _discrete_lines(report)
        if name == "volterra":
            det = dseq.volterra_determining_equation()
            data["determining_equation"] = det
            lines.append(f"general point symmetry condition: {det['equation']}")
    lines.append(f"({time.perf_counter() - start:.1f} s)")
    cfg.emit(data, lines)


if __name__ == "__main__":
    main()
