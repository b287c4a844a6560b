"""Coherence protection by repeated projection onto error-orthogonal codes."""

__version__ = "0.1.0"

from .quantum_core import HermitianOperator, ValidationError  # noqa: E402
from .code_search import CodeBasis, CodeSearch, SearchFailure, SearchParams, find_code  # noqa: E402
from .control import ControlFailure, ControlPair, ControlSolveParams, TimingSolver, solve_timings  # noqa: E402
from .zeno import ErrorModel, FidelityTrace, Signal, run_protection  # noqa: E402

__all__ = [
    "__version__",
    "HermitianOperator", "ValidationError",
    "CodeBasis", "CodeSearch", "SearchFailure", "SearchParams", "find_code",
    "ControlFailure", "ControlPair", "ControlSolveParams", "TimingSolver", "solve_timings",
    "ErrorModel", "FidelityTrace", "Signal", "run_protection",
]
