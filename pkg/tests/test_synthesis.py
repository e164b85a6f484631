import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpvqmi import builtin
from lpvqmi.data import (DataRecord, build_psi, collect_data, phi_per_sample,
                         sample_consistent_plants)
from lpvqmi.lpv import LpvaPlant, ParamPolytope, make_rng, sample_param_trajectory
from lpvqmi.sdp import AffineExpr, Status
from lpvqmi.synthesis import (H2Certificate, Mode, NotInformativeError, PerformanceSpec,
                              assemble, assemble_ct_stab, assemble_dt_stab, assemble_h2,
                              certificate_from_json, ct_vertex_block, dt_vertex_block,
                              synthesize, synthesize_common)
from lpvqmi.verification import check_quadratic_stability

from conftest import two_state_record


def _const(a):
    return AffineExpr(np.atleast_2d(a))


def _census(problem):
    sizes = problem.block_sizes()
    return sorted(sizes, reverse=True)


@pytest.fixture(scope="module")
def ct_cert(ct_data):
    _, poly, rec, bound = ct_data
    return synthesize(rec, bound, poly, "ct-stab")


@pytest.fixture(scope="module")
def dt_cert(dt_data):
    _, poly, rec, bound = dt_data
    return synthesize(rec, bound, poly, "dt-stab")


# Assembly bookkeeping ------------------------------------------------------------

def test_two_state_census(ct_data, dt_data):
    _, poly, rec, bound = ct_data
    assert _census(assemble_ct_stab(build_psi(rec, bound), poly)) == [8, 8, 8, 8, 2]
    _, poly, rec, bound = dt_data
    assert _census(assemble_dt_stab(build_psi(rec, bound), poly)) == [10, 10, 10, 10, 2]
    spec = PerformanceSpec(*builtin.two_state_h2_spec())
    h2 = assemble_h2(build_psi(rec, bound), poly, spec, "discrete")
    assert _census(h2) == [10] * 4 + [6] * 4 + [2]
    assert not h2.is_feasibility


def _five_state_psi(T, seed=0):
    plant, poly = builtin.builtin_plant("five-state", "discrete")
    traj = sample_param_trajectory(poly, 1.0, T, seed, "discrete")
    rec = collect_data(plant, traj, T, seed + 1, excitation=lambda r, m: 3 * r.uniform(-1, 1, m))
    return build_psi(rec, phi_per_sample(0.1, T, 5)), poly


def test_five_state_census_independent_of_T():
    problems = [assemble_dt_stab(*_five_state_psi(T)) for T in (50, 500)]
    for p in problems:
        assert _census(p) == [28] * 8 + [5]
    assert problems[0].num_scalars == problems[1].num_scalars
    assert problems[0].block_sizes() == problems[1].block_sizes()


def test_polytope_needs_vertices():
    with pytest.raises(ValueError):
        ParamPolytope(np.zeros((0, 2)))


def test_dimension_mismatch_rejected(ct_data):
    _, _, rec, bound = ct_data
    with pytest.raises(ValueError):
        assemble_ct_stab(build_psi(rec, bound), ParamPolytope(np.array([[1.0]])))
    with pytest.raises(ValueError):
        assemble(build_psi(rec, bound), ParamPolytope(builtin.TWO_STATE_VERTICES), "ct-h2")


def test_empty_record_rejected():
    with pytest.raises(ValueError):
        DataRecord(np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((2, 0)))


@pytest.mark.parametrize("domain", ["continuous", "discrete"])
def test_h2_with_zero_noise_gain_matches_stabilisation(ct_data, domain):
    _, poly, rec, bound = ct_data
    psi = build_psi(rec, bound)
    spec = PerformanceSpec(np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    h2 = assemble_h2(psi, poly, spec, domain)
    stab = assemble(psi, poly, Mode.CT_STAB if domain == "continuous" else Mode.DT_STAB)
    for v in range(4):
        a = h2.blocks[h2.block_labels.index(f"vertex{v}")]
        b = stab.blocks[stab.block_labels.index(f"vertex{v}")]
        assert np.array_equal(a.const, b.const)
        assert np.array_equal(a.index, b.index) and np.array_equal(a.coefs, b.coefs)


# Vertex blocks against hand-built matrices -----------------------------------------

def _random_instance(seed, n=2, m=2, L=2):
    rng = make_rng(seed)
    G = rng.standard_normal((n, n))
    P = G @ G.T + n * np.eye(n)
    S = rng.standard_normal((m, n))
    omega = rng.uniform(-1, 2, L)
    k = n + L * n + m
    H = rng.standard_normal((k, k))
    return P, S, omega, 0.5 * (H + H.T), rng.uniform(0, 2), rng.uniform(0.1, 1)


@given(st.integers(0, 10_000))
def test_dt_block_schur_complement(seed):
    P, S, omega, Psi, alpha, beta = _random_instance(seed)
    n, m, L = 2, 2, 2
    G = dt_vertex_block(_const(P), _const(S), _const(alpha), _const(beta), omega, Psi).evaluate([])
    size = n + L * n + m
    # Eliminate the trailing P block.
    reduced = G[:size, :size] - G[:size, size:] @ np.linalg.solve(P, G[size:, :size])
    # Unreduced matrix written directly: closed-loop DT Lyapunov QMI minus α Ψ.
    w = omega.reshape(-1, 1)
    M = np.block([[np.kron(w @ w.T, P), np.kron(w, S.T)],
                  [np.kron(w, S.T).T, S @ np.linalg.solve(P, S.T)]])
    direct = np.zeros((size, size))
    direct[:n, :n] = P - beta * np.eye(n)
    direct[n:, n:] = -M
    direct -= alpha * Psi
    assert np.max(np.abs(reduced - direct)) <= 1e-10 * max(1.0, np.abs(direct).max())


@given(st.integers(0, 10_000))
def test_vertex_blocks_encode_closed_loop_lyapunov(seed):
    # With α = 0, [I; Zᵀ]ᵀ N [I; Zᵀ] must equal the closed-loop Lyapunov expression.
    P, S, omega, Psi, _, beta = _random_instance(seed)
    n, m, L = 2, 2, 2
    rng = make_rng(seed + 1)
    A = rng.standard_normal((L, n, n))
    B = rng.standard_normal((n, m))
    K = S @ np.linalg.inv(P)
    Acl = np.tensordot(omega, A, axes=1) + B @ K
    Zt = np.vstack([np.eye(n), np.hstack(list(A) + [B]).T])
    N = ct_vertex_block(_const(P), _const(S), _const(0.0), _const(beta), omega, Psi).evaluate([])
    ct = -(Acl @ P + P @ Acl.T) - beta * np.eye(n)
    assert np.allclose(Zt.T @ N @ Zt, ct, atol=1e-9)
    G = dt_vertex_block(_const(P), _const(S), _const(0.0), _const(beta), omega, Psi).evaluate([])
    size = n + L * n + m
    red = G[:size, :size] - G[:size, size:] @ np.linalg.solve(P, G[size:, :size])
    dt = P - beta * np.eye(n) - Acl @ P @ Acl.T
    assert np.allclose(Zt.T @ red @ Zt, dt, atol=1e-9)


def test_single_vertex_lti_blocks():
    # L = 1 at θ = 1: the blocks collapse to the LTI data-driven forms.
    P, S, _, _, alpha, beta = _random_instance(3, L=1)
    Psi = np.diag([1.0, -2.0, -3.0, -4.0, -5.0, -6.0])
    n = 2
    Z2 = np.zeros((n, n))
    ct = ct_vertex_block(_const(P), _const(S), _const(alpha), _const(beta), [1.0], Psi).evaluate([])
    ct_ref = np.block([[-beta * np.eye(n), -P, -S.T], [-P, Z2, Z2], [-S, Z2, Z2]]) - alpha * Psi
    assert np.array_equal(ct, ct_ref)
    dt = dt_vertex_block(_const(P), _const(S), _const(alpha), _const(beta), [1.0], Psi).evaluate([])
    dt_ref = np.block([[P - beta * np.eye(n), Z2, Z2, Z2], [Z2, -P, -S.T, Z2],
                       [Z2, -S, Z2, S], [Z2, Z2, S.T, P]])
    dt_ref[:6, :6] -= alpha * Psi
    assert np.array_equal(dt, dt_ref)


# End-to-end synthesis -------------------------------------------------------------

def test_ct_certificate_contract(ct_cert, ct_data):
    plant, poly, _, _ = ct_data
    assert ct_cert.solution.status in (Status.OPTIMAL, Status.FEASIBLE)
    assert np.all(ct_cert.residuals >= -1e-8)
    assert np.all(ct_cert.alpha >= 0) and np.all(ct_cert.beta > 0)
    assert np.allclose(ct_cert.K_list @ ct_cert.P, ct_cert.S_list, atol=1e-10)
    assert check_quadratic_stability(plant, ct_cert.controller()).passed


def test_dt_certificate_contract(dt_cert, dt_data):
    plant, *_ = dt_data
    assert np.all(dt_cert.residuals >= -1e-8)
    assert check_quadratic_stability(plant, dt_cert.controller()).passed


@pytest.mark.parametrize("which", ["ct", "dt"])
def test_s_procedure_soundness(which, ct_cert, dt_cert, ct_data, dt_data):
    cert, (_, _, rec, bound) = (ct_cert, ct_data) if which == "ct" else (dt_cert, dt_data)
    plants = sample_consistent_plants(build_psi(rec, bound), 50, 11, cert.domain)
    for p in plants:
        assert check_quadratic_stability(p, cert.controller(), tol=1e-6).passed


def test_common_gain_infeasible_on_two_state_dt(dt_data):
    _, poly, rec, bound = dt_data
    with pytest.raises(NotInformativeError) as info:
        synthesize_common(rec, bound, poly, "dt-stab")
    assert "not informative" in str(info.value)
    assert info.value.solution.margin < 0


def test_common_gain_feasible_for_stable_plant():
    poly = ParamPolytope(builtin.TWO_STATE_VERTICES)
    plant = LpvaPlant(np.array([0.2 * np.eye(2), [[0.1, 0.2], [0.0, -0.1]]]), np.eye(2), "discrete")
    traj = sample_param_trajectory(poly, 1.0, 30, 0, "discrete")
    rec = collect_data(plant, traj, 30, 1)
    cert = synthesize_common(rec, phi_per_sample(1e-3, 30, 2), poly, "dt-stab")
    assert np.allclose(cert.K_list, cert.K_list[0])
    assert check_quadratic_stability(plant, cert.controller()).passed


def test_single_point_polytope_common_equals_scheduled():
    poly = ParamPolytope(np.array([[1.0]]))
    plant = LpvaPlant(np.array([[[1.1, 0.3], [0.0, 0.8]]]), np.array([[0.0], [1.0]]), "discrete")
    traj = sample_param_trajectory(poly, 1.0, 20, 0, "discrete")
    rec = collect_data(plant, traj, 20, 2, noise_sampler=None)
    bound = phi_per_sample(0.01, 20, 2)
    a = synthesize(rec, bound, poly, "dt-stab")
    b = synthesize_common(rec, bound, poly, "dt-stab")
    assert np.allclose(a.K_list, b.K_list, rtol=1e-8, atol=1e-8)
    assert np.allclose(a.P, b.P, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("mode,flip", [("ct-stab", False), ("dt-stab", False), ("dt-stab", True)])
def test_trace_normalisation_keeps_feasibility(ct_data, dt_data, mode, flip):
    _, poly, rec, bound = ct_data if mode == "ct-stab" else dt_data
    outcomes = []
    for tn in (False, True):
        try:
            cert = synthesize(rec, bound, poly, mode, common=flip, trace_normalize=tn)
            outcomes.append(True)
            if tn:
                assert np.trace(cert.P) == pytest.approx(1.0, abs=1e-9)
        except NotInformativeError:
            outcomes.append(False)
    assert outcomes[0] == outcomes[1] == (not flip)


def test_h2_certificate_gamma(dt_data):
    _, poly, rec, bound = dt_data
    cert = synthesize(rec, bound, poly, "dt-h2", perf=PerformanceSpec(*builtin.two_state_h2_spec()))
    assert isinstance(cert, H2Certificate)
    assert cert.gamma == pytest.approx(np.sqrt(np.trace(cert.Z)), abs=1e-12)
    assert 1 <= cert.gamma <= 100
    assert np.all(cert.residuals >= -1e-8)


def test_certificate_json_round_trip(ct_cert, dt_data):
    back = certificate_from_json(ct_cert.to_json())
    for f in ("P", "K_list", "S_list", "alpha", "beta", "residuals"):
        assert np.array_equal(getattr(back, f), getattr(ct_cert, f))
    assert back.mode is ct_cert.mode
    _, poly, rec, bound = dt_data
    h2 = synthesize(rec, bound, poly, "dt-h2", perf=PerformanceSpec(*builtin.two_state_h2_spec()))
    back = certificate_from_json(h2.to_json())
    assert isinstance(back, H2Certificate) and back.gamma == h2.gamma


def test_noise_level_too_high_is_not_informative():
    _, poly, rec, _ = two_state_record("discrete", 3, eps=0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(NotInformativeError):
            synthesize(rec, phi_per_sample(5.0, 35, 2), poly, "dt-stab")
