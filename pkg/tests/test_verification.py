import copy

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_continuous_lyapunov, solve_discrete_lyapunov

from lpvqmi import builtin
from lpvqmi.data import build_psi, collect_data, phi_per_sample, sample_consistent_plants
from lpvqmi.lpv import (GainScheduledController, LpvaPlant, ParamPolytope, StateTrajectory,
                        make_rng, sample_param_trajectory, simulate)
from lpvqmi.synthesis import PerformanceSpec, synthesize
from lpvqmi.verification import (NoH2Certificate, check_certificate_against_samples,
                                 check_quadratic_stability, closed_loop_vertex_matrices,
                                 estimate_h2_monte_carlo, h2_bound_ct, h2_bound_dt,
                                 lyapunov_decrease_check)

POINT = ParamPolytope(np.array([[1.0]]))


def _two_state(domain):
    return LpvaPlant(builtin.TWO_STATE_A, builtin.TWO_STATE_B, domain)


@pytest.fixture(scope="module")
def dt_h2_cert(dt_data):
    _, poly, rec, bound = dt_data
    return synthesize(rec, bound, poly, "dt-h2", perf=PerformanceSpec(*builtin.two_state_h2_spec()))


# Model-based vertex checks -----------------------------------------------------------

@pytest.mark.parametrize("domain,K,P", [
    ("continuous", builtin.REFERENCE_CT_GAINS, builtin.REFERENCE_CT_P),
    ("discrete", builtin.REFERENCE_DT_GAINS, builtin.REFERENCE_DT_P),
])
def test_reference_certificates_pass(domain, K, P, two_state_poly):
    rep = check_quadratic_stability(_two_state(domain), GainScheduledController(K, two_state_poly, P),
                                    tol=1e-4)
    assert rep.passed and rep.vertex_min_eigs.shape == (4,)


@pytest.mark.parametrize("domain", ["continuous", "discrete"])
def test_zero_gains_fail(domain, two_state_poly):
    ctrl = GainScheduledController(np.zeros((4, 2, 2)), two_state_poly, np.eye(2))
    assert not check_quadratic_stability(_two_state(domain), ctrl).passed


def test_vertex_check_matches_eigen_definition(two_state_poly):
    plant = _two_state("discrete")
    ctrl = GainScheduledController(builtin.REFERENCE_DT_GAINS, two_state_poly, builtin.REFERENCE_DT_P)
    rep = check_quadratic_stability(plant, ctrl)
    P = builtin.REFERENCE_DT_P
    for v, Acl in enumerate(closed_loop_vertex_matrices(plant, ctrl)):
        # [P, AP; *, P] ⪰ 0 iff P - A P Aᵀ ⪰ 0 (Schur complement); compare signs.
        assert (rep.vertex_min_eigs[v] >= 0) == (np.linalg.eigvalsh(P - Acl @ P @ Acl.T)[0] >= 0)


def test_samples_pass_and_corruptions_fail(ct_data):
    _, poly, rec, bound = ct_data
    cert = synthesize(rec, bound, poly, "ct-stab")
    rep = check_certificate_against_samples(cert, rec, bound, 50, 0)
    assert rep.passed and len(rep.reports) == 50
    flipped = copy.copy(cert)
    flipped.K_list = -cert.K_list
    rep = check_certificate_against_samples(flipped, rec, bound, 50, 0)
    assert not rep.passed and rep.failing == list(range(50))
    negated = copy.copy(cert)
    negated.P = -cert.P
    with pytest.raises(ValueError, match="positive definite"):
        check_certificate_against_samples(negated, rec, bound, 50, 0)


def test_tight_data_samples_match_ground_truth(two_state_poly):
    plant = _two_state("continuous")
    rec = collect_data(plant, sample_param_trajectory(two_state_poly, 0.05, 1.75, 0), 35, 1)
    bound = phi_per_sample(1e-9, 35, 2)
    ctrl = GainScheduledController(builtin.REFERENCE_CT_GAINS, two_state_poly, builtin.REFERENCE_CT_P)
    truth = check_quadratic_stability(plant, ctrl).vertex_min_eigs
    for p in sample_consistent_plants(build_psi(rec, bound), 5, 0):
        assert np.allclose(check_quadratic_stability(p, ctrl).vertex_min_eigs, truth, atol=1e-6)


# H2 analysis bounds ----------------------------------------------------------------------

def test_scalar_ct_bound():
    assert h2_bound_ct([[-1.0]], [[1.0]], [[1.0]]) == pytest.approx(np.sqrt(0.5), abs=1e-6)
    a, f = -3.0, 2.0
    assert h2_bound_ct([[a]], [[1.0]], [[f]]) ** 2 == pytest.approx(f ** 2 / (2 * abs(a)), rel=1e-6)


@pytest.mark.parametrize("a", [0.3, 0.5, 0.9])
def test_scalar_dt_bound(a):
    assert h2_bound_dt([[a]], [[1.0]], [[1.0]]) ** 2 == pytest.approx(1 / (1 - a * a), rel=1e-6)


def test_zero_dynamics_dt_bound_and_zero_noise():
    for n in (1, 3):
        assert h2_bound_dt(np.zeros((n, n)), np.eye(n), np.eye(n)) ** 2 == pytest.approx(n, rel=1e-6)
    assert h2_bound_ct([[-1.0]], [[1.0]], [[0.0]]) == 0.0


def test_unstable_vertex_has_no_bound():
    with pytest.raises(NoH2Certificate):
        h2_bound_dt([[[1.2]]], [[1.0]], [[1.0]])
    with pytest.raises(NoH2Certificate):
        h2_bound_ct([[[-1.0]], [[0.5]]], [[1.0]], [[1.0]])


def _stable_system(seed, n, domain):
    rng = make_rng(seed)
    A = rng.standard_normal((n, n))
    if domain == "continuous":
        A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.2, 1.0)) * np.eye(n)
    else:
        A *= rng.uniform(0.3, 0.9) / max(np.abs(np.linalg.eigvals(A)))
    return A, rng.standard_normal((2, n)), rng.standard_normal((n, 2))


@pytest.mark.parametrize("seed", range(20))
def test_single_vertex_bounds_match_lyapunov_oracle(seed):
    n = 2 + seed % 3
    A, C, F = _stable_system(seed, n, "continuous")
    X = solve_continuous_lyapunov(A, -F @ F.T)
    assert h2_bound_ct(A, C, F) == pytest.approx(np.sqrt(np.trace(C @ X @ C.T)), rel=1e-6)
    A, C, F = _stable_system(seed, n, "discrete")
    X = solve_discrete_lyapunov(A, F @ F.T)
    assert h2_bound_dt(A, C, F) == pytest.approx(np.sqrt(np.trace(C @ X @ C.T)), rel=1e-6)


def test_certificate_bound_below_gamma(dt_h2_cert, dt_data):
    plant, *_ = dt_data
    perf = PerformanceSpec(*builtin.two_state_h2_spec())
    ctrl = dt_h2_cert.controller()
    C_cl = np.array([perf.C + perf.D @ K for K in ctrl.K_list])
    bound = h2_bound_dt(closed_loop_vertex_matrices(plant, ctrl), C_cl, perf.F)
    assert np.isfinite(bound) and bound <= dt_h2_cert.gamma * (1 + 1e-6)


def test_gamma_monotone_in_noise_bound(dt_data):
    _, poly, rec, _ = dt_data
    perf = PerformanceSpec(*builtin.two_state_h2_spec())
    gammas = [synthesize(rec, phi_per_sample(eps, 35, 2), poly, "dt-h2", perf=perf).gamma
              for eps in (0.06, 0.08, 0.1)]
    assert all(b >= a * (1 - 1e-5) for a, b in zip(gammas, gammas[1:]))


# Monte-Carlo estimate -----------------------------------------------------------------------

def test_monte_carlo_scalar_stationary_variance():
    plant = LpvaPlant(np.array([[[0.5]]]), np.zeros((1, 1)), "discrete")
    perf = PerformanceSpec([[1.0]], [[0.0]], [[1.0]])
    ctrl = GainScheduledController(np.zeros((1, 1, 1)), POINT, np.eye(1))
    est = estimate_h2_monte_carlo(plant, ctrl, perf, 1, 10_000, 200, 0)
    assert abs(est.estimate - np.sqrt(4 / 3)) <= est.half_width
    assert est.half_width < 5e-3


def test_monte_carlo_zero_noise_gain():
    plant = LpvaPlant(np.array([[[0.5]]]), np.zeros((1, 1)), "discrete")
    perf = PerformanceSpec([[1.0]], [[0.0]], [[0.0]])
    ctrl = GainScheduledController(np.zeros((1, 1, 1)), POINT, np.eye(1))
    assert estimate_h2_monte_carlo(plant, ctrl, perf, 2, 10, 50, 0).estimate == 0.0


def test_monte_carlo_continuous_scalar():
    # Euler-Maruyama on dx = -x dt + dW: stationary variance 1/2 up to O(h).
    plant = LpvaPlant(np.array([[[-1.0]]]), np.zeros((1, 1)), "continuous")
    perf = PerformanceSpec([[1.0]], [[0.0]], [[1.0]])
    ctrl = GainScheduledController(np.zeros((1, 1, 1)), POINT, np.eye(1))
    est = estimate_h2_monte_carlo(plant, ctrl, perf, 1, 2000, 20.0, 1, step=0.01)
    assert est.estimate == pytest.approx(np.sqrt(0.5), rel=0.02)


def test_monte_carlo_below_gamma(dt_h2_cert, dt_data):
    plant, *_ = dt_data
    perf = PerformanceSpec(*builtin.two_state_h2_spec())
    est = estimate_h2_monte_carlo(plant, dt_h2_cert.controller(), perf, 30, 200, 200, 3)
    assert est.rms.shape == (30,)
    assert est.estimate <= dt_h2_cert.gamma + est.half_width


def test_monte_carlo_reports_divergence():
    from lpvqmi.lpv import SimulationDiverged
    plant = LpvaPlant(np.array([[[1e3]]]), np.zeros((1, 1)), "discrete")
    perf = PerformanceSpec([[1.0]], [[0.0]], [[1.0]])
    ctrl = GainScheduledController(np.zeros((1, 1, 1)), POINT, np.eye(1))
    with pytest.raises(SimulationDiverged):
        estimate_h2_monte_carlo(plant, ctrl, perf, 1, 5, 400, 0)


# Lyapunov decrease along trajectories ----------------------------------------------------------

def _traj(x):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    k = len(x)
    return StateTrajectory(np.arange(k, dtype=float), x, np.zeros((k, 1)), np.zeros_like(x),
                           np.ones((k, 1)))


def test_lyapunov_zero_trajectory():
    rep = lyapunov_decrease_check(_traj(np.zeros(5)), np.eye(1), "discrete")
    assert rep.passed and rep.max_increase == 0.0


def test_lyapunov_geometric_decrease():
    rep = lyapunov_decrease_check(_traj(0.5 ** np.arange(8)), np.eye(1), "discrete")
    assert rep.passed
    assert rep.max_relative_increase == pytest.approx(-0.75)


def test_lyapunov_unstable_vertex_fails(two_state_poly):
    plant = _two_state("continuous")
    traj = sample_param_trajectory(ParamPolytope(np.array([[0.0, 1.0]])), 10.0, 2.0, 0)
    tr = simulate(plant, traj, [0.6, 1.0])
    assert not lyapunov_decrease_check(tr, np.eye(2), "continuous").passed


@given(st.integers(0, 10_000))
def test_lyapunov_dt_matches_explicit_values(seed):
    rng = make_rng(seed)
    x = rng.standard_normal((6, 2))
    G = rng.standard_normal((2, 2))
    P = G @ G.T + 0.5 * np.eye(2)
    V = np.array([xi @ np.linalg.solve(P, xi) for xi in x])
    rep = lyapunov_decrease_check(_traj(x), P, "discrete")
    assert rep.passed == bool(np.all(np.diff(V) < 0))
    assert rep.max_increase == pytest.approx(np.max(np.diff(V)), rel=1e-10, abs=1e-12)
