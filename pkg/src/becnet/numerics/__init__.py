from .linalg import DegenerateMaskError, dot, lp_norm, matmul, normalize
from .rng import RngStream
from .tape import PRIMITIVES, Tape, UnregisteredPrimitiveError, Var, finite_difference, grad

__all__ = [
    "DegenerateMaskError",
    "PRIMITIVES",
    "RngStream",
    "Tape",
    "UnregisteredPrimitiveError",
    "Var",
    "dot",
    "finite_difference",
    "grad",
    "lp_norm",
    "matmul",
    "normalize",
]
