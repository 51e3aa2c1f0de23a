from functools import lru_cache
from pathlib import Path

import pytest
import sympy as sp

from lattice_lie.latfield import DifferenceSystem, load_fields
from lattice_lie.liealg import LieAlgebra

DATA = Path(__file__).resolve().parents[1] / "src" / "lattice_lie" / "data"
H73 = sp.Rational(7, 3)


def data(name: str) -> Path:
    return DATA / name


@lru_cache(maxsize=None)
def toda_algebra() -> LieAlgebra:
    return LieAlgebra.load(data("toda_algebra.json"))


@lru_cache(maxsize=None)
def toda_pipeline():
    from lattice_lie.realize import run_pipeline

    return run_pipeline(toda_algebra(), load_fields(data("toda_fields.json")),
                        DifferenceSystem.load(data("toda_equation.json")))


@lru_cache(maxsize=None)
def toda_normalized():
    from lattice_lie.autosolve import automorphism_families, normalize_inner

    A = toda_algebra()
    return [normalize_inner(F, A) for F in automorphism_families(A)]


@pytest.fixture
def toda():
    return toda_algebra()


ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, ok: bool, detail: str = "") -> bool:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
