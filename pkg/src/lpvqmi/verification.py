"""Independent checks of certificates: model LMIs, sampled plants, H2 bounds.

Nothing here reuses the synthesis LMIs. Closed-loop stability is tested on
explicit plants with the Lyapunov shape ``P`` (``V = xᵀ P⁻¹ x``), H2 bounds
come from separate analysis programs, and the Monte-Carlo estimator simulates
the stochastic closed loop directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .data import DataRecord, NoiseBound, build_psi, sample_consistent_plants
from .lpv import (GainScheduledController, LpvaPlant, SimulationDiverged, StateTrajectory,
                  TimeDomain, make_rng, sample_param_trajectory, schedule_gain, spawn_seeds)
from .sdp import ProblemBuilder, SolverSettings, Status, solve
from .sdp import trace as expr_trace


class NoH2Certificate(RuntimeError):
    """No common quadratic bound exists for the given vertex matrices."""


@dataclass
class StabilityReport:
    vertex_min_eigs: np.ndarray
    passed: bool
    tol: float

    @property
    def margin(self):
        return float(np.min(self.vertex_min_eigs))

    def to_json(self):
        return {"vertex_min_eigs": self.vertex_min_eigs.tolist(), "passed": self.passed,
                "tol": self.tol, "margin": self.margin}


def _check_pd(P):
    P = np.asarray(P, dtype=float)
    if not np.allclose(P, P.T, atol=1e-12) or np.linalg.eigvalsh(0.5 * (P + P.T))[0] <= 0:
        raise ValueError("P must be symmetric positive definite")
    return 0.5 * (P + P.T)


def closed_loop_vertex_matrices(plant: LpvaPlant, controller: GainScheduledController):
    return np.array([plant.A(w) + plant.B @ K
                     for w, K in zip(controller.polytope.vertices, controller.K_list)])


def check_quadratic_stability(plant: LpvaPlant, controller: GainScheduledController,
                              domain=None, tol=1e-9) -> StabilityReport:
    """Vertex Lyapunov test with the controller's ``P``.

    Continuous time: ``-(A_cl P + P A_clᵀ) ⪰ 0``. Discrete time:
    ``[[P, A_cl P], [*, P]] ⪰ 0``. Passes iff every minimum eigenvalue is at
    least ``-tol``.
    """
    domain = TimeDomain(domain or plant.domain)
    P = _check_pd(controller.P)
    eigs = []
    for Acl in closed_loop_vertex_matrices(plant, controller):
        if domain is TimeDomain.CONTINUOUS:
            M = -(Acl @ P + P @ Acl.T)
        else:
            M = np.block([[P, Acl @ P], [P @ Acl.T, P]])
        eigs.append(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    eigs = np.array(eigs)
    return StabilityReport(eigs, bool(np.all(eigs >= -tol)), tol)


@dataclass
class SampledStabilityReport:
    reports: list
    worst_margin: float
    passed: bool
    failing: list = field(default_factory=list)

    def to_json(self):
        return {"worst_margin": self.worst_margin, "passed": self.passed,
                "failing_plants": self.failing,
                "plants": [r.to_json() for r in self.reports]}


def check_certificate_against_samples(certificate, record: DataRecord, bound: NoiseBound,
                                      num_plants, seed, tol=1e-9, plants=None):
    """Run :func:`check_quadratic_stability` on plants drawn from the consistency set."""
    controller = certificate.controller() if hasattr(certificate, "controller") else certificate
    domain = certificate.domain if hasattr(certificate, "domain") else record.domain
    if plants is None:
        plants = sample_consistent_plants(build_psi(record, bound), num_plants, seed, domain)
    reports = [check_quadratic_stability(p, controller, domain, tol) for p in plants]
    failing = [i for i, r in enumerate(reports) if not r.passed]
    worst = min(r.margin for r in reports)
    return SampledStabilityReport(reports, float(worst), not failing, failing)


def _h2_bound(A_list, C_cl, F, domain, settings):
    A_list = np.asarray(A_list, dtype=float)
    if A_list.ndim == 2:
        A_list = A_list[None]
    if A_list.ndim != 3 or A_list.shape[1] != A_list.shape[2]:
        raise ValueError("vertex matrices must be square and of one size")
    n = A_list.shape[1]
    F = np.atleast_2d(np.asarray(F, dtype=float))
    C_cl = np.asarray(C_cl, dtype=float)
    C_list = C_cl[None] if C_cl.ndim == 2 else C_cl
    if C_list.ndim != 3 or C_list.shape[2] != n or F.shape[0] != n:
        raise ValueError("C_cl and F must have n columns / rows")
    if len(C_list) not in (1, len(A_list)):
        raise ValueError("give one C_cl or one per vertex")
    if not np.any(F):
        return 0.0
    FFt = F @ F.T
    b = ProblemBuilder()
    M = b.symmetric("M", n)
    b.add_block(M, "M")
    for v, A in enumerate(A_list):
        if domain is TimeDomain.CONTINUOUS:
            b.add_block(-(A @ M) - (A @ M).T - FFt, f"lyap{v}")
        else:
            b.add_block(M - A @ M @ A.T - FFt, f"stein{v}")
    if len(C_list) == 1:
        b.minimize(expr_trace(C_list[0] @ M @ C_list[0].T))
    else:
        s = b.scalar("s")
        for v, C in enumerate(C_list):
            b.add_block(s - expr_trace(C @ M @ C.T), f"out{v}")
        b.minimize(s)
    sol = solve(b.build(), settings or SolverSettings())
    if sol.status is Status.INFEASIBLE:
        raise NoH2Certificate("no common M satisfies the vertex inequalities")
    if sol.status is not Status.OPTIMAL:
        raise NoH2Certificate(f"bound program ended with status {sol.status.value}")
    return float(np.sqrt(max(sol.objective_value, 0.0)))


def h2_bound_ct(A_list, C_cl, F, settings: Optional[SolverSettings] = None) -> float:
    """``sqrt(min trace(C M Cᵀ))`` over ``M ⪰ 0`` with ``A_v M + M A_vᵀ + FFᵀ ⪯ 0``.

    ``C_cl`` may be one matrix or one per vertex; with several the worst
    vertex trace is minimised.
    """
    return _h2_bound(A_list, C_cl, F, TimeDomain.CONTINUOUS, settings)


def h2_bound_dt(A_list, C_cl, F, settings: Optional[SolverSettings] = None) -> float:
    """As :func:`h2_bound_ct` with ``A_v M A_vᵀ - M + FFᵀ ⪯ 0``."""
    return _h2_bound(A_list, C_cl, F, TimeDomain.DISCRETE, settings)


@dataclass
class H2Estimate:
    estimate: float
    rms: np.ndarray  # per parameter trajectory
    half_width: float
    num_trials: int
    horizon: float
    burn_in: int

    def to_json(self):
        return {"estimate": self.estimate, "half_width": self.half_width,
                "rms": self.rms.tolist(), "num_trials": self.num_trials,
                "horizon": self.horizon, "burn_in": self.burn_in}


def estimate_h2_monte_carlo(plant: LpvaPlant, controller: Optional[GainScheduledController],
                            perf, num_param_trajs, num_noise_trials, horizon, seed,
                            mean_dwell=None, step=0.01, burn_in=None, polytope=None,
                            use_numba=None) -> H2Estimate:
    """Worst sampled RMS of ``z = C x + D u`` under unit white noise through ``F``.

    Discrete time runs ``horizon`` steps; continuous time integrates to time
    ``horizon`` by Euler-Maruyama at ``step`` (per-step noise covariance I/h).
    States start at zero and the first ``burn_in`` samples (default a quarter
    of the run) are discarded so the average targets the stationary regime.
    The half-width is a 95% normal interval on the maximising trajectory's
    RMS (delta method from the mean square).
    """
    domain = plant.domain
    ct = domain is TimeDomain.CONTINUOUS
    polytope = polytope if polytope is not None else controller.polytope
    mean_dwell = mean_dwell if mean_dwell is not None else (0.05 if ct else 1.0)
    N = int(round(horizon / step)) if ct else int(horizon)
    if N < 2:
        raise ValueError("horizon too short")
    burn_in = N // 4 if burn_in is None else int(burn_in)
    C, D, F = perf.C, perf.D, perf.F
    G = np.sqrt(step) * F if ct else F
    times = step * np.arange(N + 1) if ct else np.arange(N + 1, dtype=float)

    rms, halfs = [], []
    for child in spawn_seeds(seed, num_param_trajs):
        traj_seed, noise_seed = child.spawn(2)
        traj = sample_param_trajectory(polytope, mean_dwell, times[-1] + (step if ct else 1.0),
                                       traj_seed, domain)
        seg = traj.segment_at(times)
        Acl, Ccl = [], []
        for th in traj.values:
            K = schedule_gain(controller, th) if controller is not None else np.zeros((plant.m, plant.n))
            A = plant.A(th) + plant.B @ K
            Acl.append(np.eye(plant.n) + step * A if ct else A)
            Ccl.append(C + D @ K)
        noise = make_rng(noise_seed).standard_normal((num_noise_trials, N, F.shape[1]))
        with np.errstate(over="ignore", invalid="ignore"):
            energy = kernels.output_energy(np.array(Acl), seg, G, np.array(Ccl), noise,
                                           burn_in, use_numba=use_numba)
        if not np.all(np.isfinite(energy)):
            raise SimulationDiverged("closed loop diverged during H2 estimation")
        q = float(np.mean(energy))
        se = float(np.std(energy, ddof=1) / np.sqrt(num_noise_trials)) if num_noise_trials > 1 else np.inf
        rms.append(np.sqrt(q))
        halfs.append(1.96 * se / (2 * np.sqrt(q)) if q > 0 else 0.0)
    rms = np.array(rms)
    i = int(np.argmax(rms))
    return H2Estimate(float(rms[i]), rms, float(halfs[i]), num_noise_trials, horizon, burn_in)


@dataclass
class LyapunovReport:
    max_increase: float  # DT: max V(k+1) - V(k); CT: max difference quotient
    max_relative_increase: float
    passed: bool

    def to_json(self):
        return {"max_increase": self.max_increase,
                "max_relative_increase": self.max_relative_increase, "passed": self.passed}


def lyapunov_decrease_check(trajectory: StateTrajectory, P, domain, rtol=1e-6) -> LyapunovReport:
    """Monotone decrease of ``V = xᵀ P⁻¹ x`` along a simulated trajectory.

    Discrete time requires strict decrease at every nonzero state. Continuous
    time allows a relative increase of ``rtol`` per step for integrator error.
    """
    P = _check_pd(P)
    X = np.asarray(trajectory.x, dtype=float)
    V = np.einsum("ki,ki->k", X, np.linalg.solve(P, X.T).T)
    dV = np.diff(V)
    live = V[:-1] > 0
    if not np.any(live):
        return LyapunovReport(0.0, 0.0, True)
    rel = dV[live] / V[:-1][live]
    if TimeDomain(domain) is TimeDomain.DISCRETE:
        return LyapunovReport(float(dV[live].max()), float(rel.max()), bool(np.all(dV[live] < 0)))
    quotient = dV / np.diff(trajectory.times)
    return LyapunovReport(float(quotient[live].max()), float(rel.max()), bool(np.all(rel <= rtol)))
