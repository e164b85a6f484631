"""End-to-end experiment steps shared by the command line and the tests.

Every step draws randomness from ``spawn_seeds(config.seed, 4)`` in a fixed
order (data parameter path, data excitation and noise, consistent-plant
sampling, verification parameter paths), so runs are reproducible.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import builtin
from .config import ExperimentConfig
from .data import DataRecord, ball_noise, build_psi, collect_data, discrepancy, sample_consistent_plants
from .lpv import (GainScheduledController, LpvaPlant, SimulationDiverged, TimeDomain,
                  sample_param_trajectory, simulate, spawn_seeds)
from .synthesis import H2Certificate, Mode, NotInformativeError, synthesize
from .synthesis import assemble as assemble_mode
from .verification import (check_certificate_against_samples, check_quadratic_stability,
                           closed_loop_vertex_matrices, estimate_h2_monte_carlo, h2_bound_ct,
                           h2_bound_dt, lyapunov_decrease_check)


def _streams(config: ExperimentConfig):
    return spawn_seeds(config.seed, 4)


def generate(config: ExperimentConfig, T=None):
    """Collect one noisy record from the configured ground truth.

    Returns ``(record, noise_norms)`` with the realised per-sample noise norms.
    """
    T = T or config.T
    traj_seed, data_seed, _, _ = _streams(config)
    ct = config.domain is TimeDomain.CONTINUOUS
    horizon = T * config.sample_time if ct else T
    traj = sample_param_trajectory(config.polytope, config.data_mean_dwell, horizon,
                                   traj_seed, config.domain)
    amp = config.excitation
    eps = config.noise_eps
    record = collect_data(config.plant, traj, T, data_seed,
                          excitation=lambda rng, m: amp * rng.uniform(-1.0, 1.0, m),
                          noise_sampler=ball_noise(eps) if eps > 0 else None,
                          sample_time=config.sample_time)
    norms = np.linalg.norm(discrepancy(record, config.plant).W, axis=0)
    return record, norms


def assemble(config: ExperimentConfig, record: DataRecord, common=None):
    """The SDP that :func:`synth` would solve, for export."""
    common = config.common_gain if common is None else common
    psi = build_psi(record, config.noise_bound(record.T))
    return assemble_mode(psi, config.polytope, config.mode, perf=config.performance,
                         common=common, trace_normalize=config.trace_normalize)


def synth(config: ExperimentConfig, record: DataRecord, common=None):
    common = config.common_gain if common is None else common
    return synthesize(record, config.noise_bound(record.T), config.polytope, config.mode,
                      perf=config.performance, common=common,
                      trace_normalize=config.trace_normalize)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}" + (f": {self.detail}" if self.detail else "")

    def to_json(self):
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class VerificationResult:
    checks: list
    trajectories: list = field(default_factory=list)  # (plant label, sequence, StateTrajectory)
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_json(self):
        return {"passed": self.passed, "checks": [c.to_json() for c in self.checks],
                "details": self.details}

    def trajectories_csv(self):
        """Long format: ``plant, sequence, t, variable, value``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["plant", "sequence", "t", "variable", "value"])
        for label, seq, tr in self.trajectories:
            for i, t in enumerate(tr.times):
                for name, arr in (("x", tr.x), ("u", tr.u), ("theta", tr.theta)):
                    for j, val in enumerate(arr[i]):
                        w.writerow([label, seq, repr(float(t)), f"{name}{j + 1}", repr(float(val))])
        return buf.getvalue()


def verify(config: ExperimentConfig, record: DataRecord, certificate, keep_trajectories=False):
    """Model check, sampled-plant check, closed-loop simulations, and for H2 the bounds.

    Simulations cover the ground truth plus ``plants`` consistent samples,
    each under the same ``sequences`` parameter paths from ``x0``.
    """
    _, _, plant_seed, sim_seed = _streams(config)
    controller: GainScheduledController = certificate.controller()
    domain = certificate.domain
    truth = config.plant
    checks, details = [], {}

    model = check_quadratic_stability(truth, controller, domain)
    checks.append(Check("ground-truth vertex LMIs", model.passed, f"margin {model.margin:.3e}"))
    details["ground_truth"] = model.to_json()

    psi = build_psi(record, config.noise_bound(record.T))
    plants = sample_consistent_plants(psi, config.sim("plants"), plant_seed, domain)
    sampled = check_certificate_against_samples(certificate, record, None, 0, None, plants=plants)
    detail = f"worst margin {sampled.worst_margin:.3e}"
    if sampled.failing:
        detail += f"; failing plants {sampled.failing}"
    checks.append(Check(f"sampled plants vertex LMIs ({len(plants)})", sampled.passed, detail))
    details["sampled"] = sampled.to_json()

    ct = domain is TimeDomain.CONTINUOUS
    horizon = config.sim("horizon")
    x0 = np.array(config.sim("x0"), dtype=float)
    seq_seeds = spawn_seeds(sim_seed, config.sim("sequences"))
    paths = [sample_param_trajectory(config.polytope, config.sim("mean_dwell"), horizon, s, domain)
             for s in seq_seeds]
    labelled = [("truth", truth)] + [(f"plant{i}", p) for i, p in enumerate(plants)]
    failures, worst = [], -np.inf
    trajectories = []
    for label, plant in labelled:
        for j, path in enumerate(paths):
            try:
                tr = simulate(plant, path, x0, controller=controller, step=config.sim("step"))
                rep = lyapunov_decrease_check(tr, controller.P, domain)
            except SimulationDiverged:
                failures.append(f"{label}/seq{j} (diverged)")
                continue
            worst = max(worst, rep.max_relative_increase)
            if not rep.passed:
                failures.append(f"{label}/seq{j}")
            if keep_trajectories:
                trajectories.append((label, j, tr))
    n_runs = len(labelled) * len(paths)
    detail = f"{n_runs} runs, worst relative step change {worst:.3e}"
    if failures:
        detail += f"; failing {', '.join(failures[:10])}" + (" ..." if len(failures) > 10 else "")
    checks.append(Check("Lyapunov decrease along simulations", not failures, detail))
    details["simulation"] = {"runs": n_runs, "failures": failures,
                             "worst_relative_step_change": float(worst)}

    if isinstance(certificate, H2Certificate):
        perf = config.performance
        Acl = closed_loop_vertex_matrices(truth, controller)
        Ccl = np.array([perf.C + perf.D @ K for K in controller.K_list])
        bound_fn = h2_bound_ct if ct else h2_bound_dt
        bound = bound_fn(Acl, Ccl, perf.F)
        checks.append(Check("analysis bound on ground truth <= gamma",
                            bound <= certificate.gamma * (1 + 1e-6),
                            f"bound {bound:.4f}, gamma {certificate.gamma:.4f}"))
        est = estimate_h2_monte_carlo(truth, controller, perf, config.h2("param_trajs"),
                                      config.h2("noise_trials"), config.h2("horizon"),
                                      sim_seed, step=config.sim("step"))
        checks.append(Check("Monte-Carlo RMS <= gamma + half-width",
                            est.estimate <= certificate.gamma + est.half_width,
                            f"estimate {est.estimate:.4f} ± {est.half_width:.4f}"))
        details["h2"] = {"gamma": certificate.gamma, "analysis_bound": bound,
                         "monte_carlo": est.to_json()}
    return VerificationResult(checks, trajectories, details)


def reference_checks(config: ExperimentConfig):
    """Vertex checks of the stored two-state reference certificates on the ground truth."""
    if config.raw["plant"] != "two-state" or config.mode.is_h2:
        return []
    out = []
    for dom, K, P in ((TimeDomain.CONTINUOUS, builtin.REFERENCE_CT_GAINS, builtin.REFERENCE_CT_P),
                      (TimeDomain.DISCRETE, builtin.REFERENCE_DT_GAINS, builtin.REFERENCE_DT_P)):
        if dom is not config.domain:
            continue
        plant = LpvaPlant(builtin.TWO_STATE_A, builtin.TWO_STATE_B, dom)
        rep = check_quadratic_stability(plant, GainScheduledController(K, config.polytope, P),
                                        dom, tol=1e-4)
        out.append(Check(f"reference {dom.value} certificate on ground truth (tol 1e-4)",
                         rep.passed, f"margin {rep.margin:.3e}"))
    return out


@dataclass
class ReproResult:
    name: str
    checks: list
    record: DataRecord = None
    certificate: object = None
    verification: VerificationResult = None
    timings: dict = field(default_factory=dict)
    error: str = ""

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed for c in self.checks)

    def summary(self):
        lines = [f"repro {self.name}"] + [c.line() for c in self.checks]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_json(self):
        out = {"name": self.name, "passed": self.passed,
               "checks": [c.to_json() for c in self.checks], "timings": self.timings}
        if self.error:
            out["error"] = self.error
        if self.verification is not None:
            out["verification"] = self.verification.to_json()
        return out


def repro(config: ExperimentConfig, keep_trajectories=False) -> ReproResult:
    """generate -> synth -> verify with a pass/fail summary."""
    result = ReproResult(config.name, reference_checks(config))
    t0 = time.perf_counter()
    record, norms = generate(config)
    result.record = record
    eps = config.noise_eps
    result.checks.append(Check("realised noise within bound",
                               bool(np.all(norms <= eps * (1 + 1e-12))),
                               f"max |w| {norms.max():.4f} vs eps {eps}"))
    t1 = time.perf_counter()
    try:
        cert = synth(config, record)
    except NotInformativeError as exc:
        result.checks.append(Check(f"{config.mode.value} synthesis feasible", False, str(exc)))
        result.error = str(exc)
        return result
    t2 = time.perf_counter()
    result.certificate = cert
    detail = f"{t2 - t1:.2f} s, {cert.solution.iterations} iterations"
    if isinstance(cert, H2Certificate):
        detail += (f", gamma {cert.gamma:.4f} (reference realisation "
                   f"{builtin.REFERENCE_DT_H2_GAMMA})")
    result.checks.append(Check(f"{config.mode.value} synthesis feasible", True, detail))
    if isinstance(cert, H2Certificate):
        result.checks.append(Check("gamma finite and in [1, 100]",
                                   bool(np.isfinite(cert.gamma) and 1 <= cert.gamma <= 100),
                                   f"gamma {cert.gamma:.4f}"))
    if config.mode is Mode.DT_STAB and config.raw["plant"] == "two-state":
        try:
            synth(config, record, common=True)
            result.checks.append(Check("common gain infeasible", False, "common gain was feasible"))
        except NotInformativeError as exc:
            result.checks.append(Check("common gain infeasible", True,
                                       f"margin {exc.solution.margin:.3e}"))
    ver = verify(config, record, cert, keep_trajectories)
    t3 = time.perf_counter()
    result.verification = ver
    result.checks.extend(ver.checks)
    result.timings = {"generate": t1 - t0, "synth": t2 - t1, "verify": t3 - t2}
    return result
