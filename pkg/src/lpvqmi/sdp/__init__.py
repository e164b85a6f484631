"""Block-diagonal LMI problems: modelling, interior-point solving, SDPA export."""
from .problem import (AffineExpr, LmiBlock, ProblemBuilder, ResidualReport, SdpProblem,
                      Sign, VariableInfo, bmat, kron, problems_equal, residual_report, trace)
from .sdpa import export_sdpa, parse_sdpa, problem_from_json, problem_to_json
from .solver import SdpSolution, SolverSettings, Status, solve

__all__ = [
    "AffineExpr", "LmiBlock", "ProblemBuilder", "ResidualReport", "SdpProblem", "Sign",
    "VariableInfo", "bmat", "kron", "problems_equal", "residual_report", "trace",
    "export_sdpa", "parse_sdpa", "problem_from_json", "problem_to_json",
    "SdpSolution", "SolverSettings", "Status", "solve",
]
