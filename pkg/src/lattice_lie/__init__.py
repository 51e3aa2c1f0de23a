"""Lie point symmetries of differential-difference equations on lattices."""
from .exprsym import index, is_identically_zero, parse, var
from .liealg import LieAlgebra, adjoint, check_lie_algebra, matrix_exp

__all__ = ["LieAlgebra", "adjoint", "check_lie_algebra", "index", "is_identically_zero",
           "matrix_exp", "parse", "var"]
__version__ = "0.1.0"
