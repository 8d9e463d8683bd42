"""Complete verifier for the robustness properties on small ReLU/clamp networks."""
from .bab import (
    TAU, Budget, Clause, Status, VerifierStats, VerifierVerdict, compile_clauses,
    encode_leaf, verify, verify_by_enumeration,
)
from .bounds import Box, LayerBounds, Phase, ibp
from .lp import LinearProgram, LPIterationLimit, LPResult, lp_feasible

__all__ = [
    "TAU", "Budget", "Box", "Clause", "LayerBounds", "LinearProgram", "LPIterationLimit",
    "LPResult", "Phase", "Status", "VerifierStats", "VerifierVerdict", "compile_clauses",
    "encode_leaf", "ibp", "lp_feasible", "verify", "verify_by_enumeration",
]
