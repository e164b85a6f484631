"""Vertex LMIs for data-driven gain-scheduled stabilisation and H2 control.

Every plant ``Z = [A_1 ... A_L  B]`` consistent with the data satisfies
``[I; Zᵀ]ᵀ Ψ [I; Zᵀ] ⪰ 0``. At each vertex ``ω_v`` the closed-loop Lyapunov
condition is itself a QMI in ``Z``; a multiplier ``α_v >= 0`` and margin
``β_v > 0`` make it hold on the whole consistent set. Decision variables are
``P ≻ 0`` (the Lyapunov shape) and ``S_v = K_v P``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .data import ConsistencyQmi, DataRecord, NoiseBound, build_psi, slemma_precondition_check
from .lpv import GainScheduledController, ParamPolytope, TimeDomain
from .sdp import ProblemBuilder, Sign, SdpProblem, SdpSolution, SolverSettings, Status, bmat, kron, solve
from .sdp import trace as expr_trace

P_COND_MAX = 1e12


class Mode(str, Enum):
    CT_STAB = "ct-stab"
    DT_STAB = "dt-stab"
    CT_H2 = "ct-h2"
    DT_H2 = "dt-h2"

    @property
    def domain(self):
        return TimeDomain.CONTINUOUS if self.value.startswith("ct") else TimeDomain.DISCRETE

    @property
    def is_h2(self):
        return self.value.endswith("h2")


class NotInformativeError(RuntimeError):
    """The synthesis LMIs are infeasible: the data do not certify stabilisation."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class SynthesisFailed(RuntimeError):
    """The solver could not decide feasibility (numerical trouble)."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True, eq=False)
class PerformanceSpec:
    """Regulated output ``z = C x + D u`` and noise input matrix ``F``."""

    C: np.ndarray
    D: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        if D.shape[0] != C.shape[0]:
            raise ValueError("C and D need the same number of rows")
        if F.shape[0] != C.shape[1]:
            raise ValueError("F needs one row per state")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "F", F)

    def check(self, n, m):
        if self.C.shape[1] != n or self.D.shape[1] != m or self.F.shape[0] != n:
            raise ValueError(f"performance matrices do not fit n={n}, m={m}")

    def to_json(self):
        return {"C": self.C.tolist(), "D": self.D.tolist(), "F": self.F.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.array(data["C"]), np.array(data["D"]), np.array(data["F"]))


@dataclass(eq=False)
class StabilizationCertificate:
    P: np.ndarray
    S_list: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    K_list: np.ndarray
    mode: Mode
    residuals: np.ndarray
    polytope: ParamPolytope
    solution: Optional[SdpSolution] = field(default=None, repr=False)

    @property
    def domain(self):
        return self.mode.domain

    def controller(self) -> GainScheduledController:
        return GainScheduledController(self.K_list, self.polytope, self.P)

    def to_json(self):
        return {"mode": self.mode.value, "P": self.P.tolist(), "K_list": self.K_list.tolist(),
                "S_list": self.S_list.tolist(), "alpha": self.alpha.tolist(),
                "beta": self.beta.tolist(), "residuals": self.residuals.tolist(),
                "polytope": self.polytope.to_json()}


@dataclass(eq=False)
class H2Certificate(StabilizationCertificate):
    Z: np.ndarray = None
    gamma: float = np.nan

    def to_json(self):
        out = super().to_json()
        out.update(Z=self.Z.tolist(), gamma=self.gamma)
        return out


def certificate_from_json(data):
    """Rebuild a certificate (without solver output) from :meth:`to_json`."""
    common = dict(
        P=np.array(data["P"]), S_list=np.array(data.get("S_list", [])),
        alpha=np.array(data["alpha"]), beta=np.array(data["beta"]),
        K_list=np.array(data["K_list"]), mode=Mode(data["mode"]),
        residuals=np.array(data["residuals"]),
        polytope=ParamPolytope.from_json(data["polytope"]),
    )
    if "gamma" in data:
        return H2Certificate(**common, Z=np.array(data["Z"]), gamma=float(data["gamma"]))
    return StabilizationCertificate(**common)


def _declare(b: ProblemBuilder, n, m, Nv, common, trace_normalize):
    P = b.symmetric("P", n, trace_one=trace_normalize)
    if common:
        S_shared = b.matrix("S", m, n)
        S = [S_shared] * Nv
    else:
        S = [b.matrix(f"S{v}", m, n) for v in range(Nv)]
    alpha = [b.scalar(f"alpha{v}", Sign.NONNEG) for v in range(Nv)]
    beta = [b.scalar(f"beta{v}", Sign.POSITIVE) for v in range(Nv)]
    b.add_block(P, "P", strict=True)
    return P, S, alpha, beta


def _normalised_psi(psi: ConsistencyQmi):
    scale = float(np.linalg.norm(psi.Psi, 2))
    if not scale > 0:
        raise ValueError("Ψ is identically zero")
    return psi.Psi / scale, scale


def _check_dims(psi, polytope):
    if polytope.L != psi.L:
        raise ValueError(f"polytope has L={polytope.L}, Ψ was built for L={psi.L}")


def ct_vertex_block(P, S, alpha, beta, omega, Psi, FFt=None):
    """``[[-βI - FFᵀ, *, *], [-ω⊗P, 0, *], [-S, 0, 0]] - α Ψ``."""
    n = P.shape[0]
    m = S.shape[0]
    Ln = n * len(omega)
    wP = -kron(np.reshape(omega, (-1, 1)), P)
    corner = kron(-np.eye(n), beta)
    if FFt is not None:
        corner = corner - FFt
    N = bmat([[corner, wP.T, -S.T],
              [wP, np.zeros((Ln, Ln)), np.zeros((Ln, m))],
              [-S, np.zeros((m, Ln)), np.zeros((m, m))]])
    return N - kron(Psi, alpha)


def dt_vertex_block(P, S, alpha, beta, omega, Psi, FFt=None):
    """Schur-complemented discrete-time vertex matrix minus ``α blkdiag(Ψ, 0_n)``.

    Rows are partitioned ``(n, L n, m, n)``; the trailing ``P`` block replaces
    the ``-S P⁻¹ Sᵀ`` term.
    """
    n = P.shape[0]
    m = S.shape[0]
    Ln = n * len(omega)
    w = np.reshape(omega, (-1, 1))
    corner = P - kron(np.eye(n), beta)
    if FFt is not None:
        corner = corner - FFt
    mid = -kron(w @ w.T, P)
    cross = -kron(w, S.T)  # (Ln, m)
    Zn, Zln, Zm = np.zeros((n, n)), np.zeros((n, Ln)), np.zeros((n, m))
    G = bmat([[corner, Zln, Zm, Zn],
              [Zln.T, mid, cross, np.zeros((Ln, n))],
              [Zm.T, cross.T, np.zeros((m, m)), S],
              [Zn, np.zeros((n, Ln)), S.T, P]])
    size = n + Ln + m
    Psi_pad = np.zeros((size + n, size + n))
    Psi_pad[:size, :size] = Psi
    return G - kron(Psi_pad, alpha)


def _assemble(psi: ConsistencyQmi, polytope: ParamPolytope, mode: Mode,
              perf: Optional[PerformanceSpec] = None, common=False, trace_normalize=False):
    _check_dims(psi, polytope)
    n, m, Nv = psi.n, psi.m, polytope.num_vertices
    Psi, scale = _normalised_psi(psi)
    b = ProblemBuilder()
    P, S, alpha, beta = _declare(b, n, m, Nv, common, trace_normalize)
    FFt = None
    Zvar = None
    if mode.is_h2:
        if perf is None:
            raise ValueError("H2 modes need a PerformanceSpec")
        perf.check(n, m)
        FFt = perf.F @ perf.F.T
        Zvar = b.symmetric("Z", perf.C.shape[0])
    vertex = ct_vertex_block if mode.domain is TimeDomain.CONTINUOUS else dt_vertex_block
    for v, omega in enumerate(polytope.vertices):
        b.add_block(vertex(P, S[v], alpha[v], beta[v], omega, Psi, FFt), f"vertex{v}")
    if mode.is_h2:
        for v in range(Nv):
            out = perf.C @ P + perf.D @ S[v]
            b.add_block(bmat([[Zvar, out], [out.T, P]]), f"output{v}")
        b.minimize(expr_trace(Zvar))
    meta = {"mode": mode.value, "psi_scale": scale, "n": n, "m": m, "L": psi.L,
            "num_vertices": Nv, "common": bool(common), "trace_normalize": bool(trace_normalize)}
    return b.build(meta)


def assemble_ct_stab(psi, polytope, common=False, trace_normalize=False) -> SdpProblem:
    """Continuous-time stabilisation: ``N_v`` blocks of size ``n(L+1)+m`` plus ``P``."""
    return _assemble(psi, polytope, Mode.CT_STAB, common=common, trace_normalize=trace_normalize)


def assemble_dt_stab(psi, polytope, common=False, trace_normalize=False) -> SdpProblem:
    """Discrete-time stabilisation: ``N_v`` blocks of size ``n(L+2)+m`` plus ``P``."""
    return _assemble(psi, polytope, Mode.DT_STAB, common=common, trace_normalize=trace_normalize)


def assemble_h2(psi, polytope, perf: PerformanceSpec, domain, common=False,
                trace_normalize=False) -> SdpProblem:
    """Worst-case H2: vertex blocks carry ``-FFᵀ`` in the corner, output blocks
    ``[[Z, C P + D S_v], [*, P]] ⪰ 0``, objective ``trace Z``."""
    mode = Mode.CT_H2 if TimeDomain(domain) is TimeDomain.CONTINUOUS else Mode.DT_H2
    return _assemble(psi, polytope, mode, perf=perf, common=common,
                     trace_normalize=trace_normalize)


def assemble(psi, polytope, mode, perf: Optional[PerformanceSpec] = None, common=False,
             trace_normalize=False) -> SdpProblem:
    """Assemble the program for any :class:`Mode`; ``perf`` is required for H2 modes."""
    return _assemble(psi, polytope, Mode(mode), perf=perf, common=common,
                     trace_normalize=trace_normalize)


def recover(solution: SdpSolution, problem: SdpProblem, polytope: ParamPolytope):
    """Extract ``P, S_v, α, β`` (and ``Z, γ``) and form ``K_v = S_v P⁻¹``."""
    if solution.status not in (Status.OPTIMAL, Status.FEASIBLE):
        raise ValueError(f"cannot recover a certificate from status {solution.status.value}")
    meta = problem.meta
    x = solution.decision
    var = problem.variables
    Nv = meta["num_vertices"]
    P = var["P"].value(x)
    P = 0.5 * (P + P.T)
    if np.linalg.cond(P) > P_COND_MAX:
        raise SynthesisFailed("recovered P is numerically singular", solution)
    if meta["common"]:
        S = np.array([var["S"].value(x)] * Nv)
    else:
        S = np.array([var[f"S{v}"].value(x) for v in range(Nv)])
    K = np.linalg.solve(P, S.transpose(0, 2, 1)).transpose(0, 2, 1)
    alpha = np.array([var[f"alpha{v}"].value(x)[0, 0] for v in range(Nv)]) / meta["psi_scale"]
    beta = np.array([var[f"beta{v}"].value(x)[0, 0] for v in range(Nv)])
    labels = problem.block_labels
    residuals = np.array([solution.block_min_eigs[labels.index(f"vertex{v}")] for v in range(Nv)])
    mode = Mode(meta["mode"])
    common = dict(P=P, S_list=S, alpha=alpha, beta=beta, K_list=K, mode=mode,
                  residuals=residuals, polytope=polytope, solution=solution)
    if mode.is_h2:
        Z = var["Z"].value(x)
        Z = 0.5 * (Z + Z.T)
        return H2Certificate(**common, Z=Z, gamma=float(np.sqrt(max(np.trace(Z), 0.0))))
    return StabilizationCertificate(**common)


def synthesize(record: DataRecord, bound: NoiseBound, polytope: ParamPolytope, mode,
               perf: Optional[PerformanceSpec] = None, settings: Optional[SolverSettings] = None,
               common=False, trace_normalize=False):
    """Build Ψ, assemble the vertex LMIs for ``mode``, solve and recover.

    Raises :class:`NotInformativeError` when the LMIs are infeasible and
    :class:`SynthesisFailed` when the solver cannot decide.
    """
    mode = Mode(mode)
    settings = settings or SolverSettings()
    if polytope.L != record.L:
        raise ValueError("polytope and record disagree on L")
    psi = build_psi(record, bound)
    diag = slemma_precondition_check(psi)
    if not diag.passed:
        warnings.warn(f"S-procedure preconditions not met: {diag}", RuntimeWarning, stacklevel=2)
    if mode.is_h2:
        problem = assemble_h2(psi, polytope, perf, mode.domain, common, trace_normalize)
    else:
        problem = _assemble(psi, polytope, mode, common=common, trace_normalize=trace_normalize)
    sol = solve(problem, settings)
    if sol.status is Status.INFEASIBLE:
        raise NotInformativeError(
            f"data not informative for LPV quadratic stabilization ({mode.value}, "
            f"margin {sol.margin:.3e})", sol)
    if sol.status not in (Status.OPTIMAL, Status.FEASIBLE):
        raise SynthesisFailed(f"solver returned {sol.status.value} after {sol.iterations} "
                              "iterations", sol)
    return recover(sol, problem, polytope)


def synthesize_common(record, bound, polytope, mode, perf=None, settings=None,
                      trace_normalize=False):
    """As :func:`synthesize` with one θ-independent gain shared by all vertices."""
    return synthesize(record, bound, polytope, mode, perf=perf, settings=settings,
                      common=True, trace_normalize=trace_normalize)
