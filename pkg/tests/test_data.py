import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import null_space

from lpvqmi import builtin
from lpvqmi.data import (ConsistencyQmi, DataRecord, DegenerateDataError, NoiseBound, ball_noise,
                         build_psi, collect_data, concatenate_bounds, concatenate_records,
                         consistency_radius, discrepancy, phi_energy, phi_per_sample,
                         plant_in_consistency_set, qbp_membership, qbp_value,
                         sample_consistent_plants, slemma_precondition_check)
from lpvqmi.lpv import LpvaPlant, ParamPolytope, make_rng, sample_param_trajectory


def _random_record(seed, n=3, m=2, L=2, T=12):
    rng = make_rng(seed)
    return DataRecord(rng.standard_normal((n, T)), rng.standard_normal((m, T)),
                      rng.standard_normal((L, T)), rng.standard_normal((n, T)), "discrete")


def _random_plant(seed, n=3, m=2, L=2, domain="discrete"):
    rng = make_rng(seed)
    return LpvaPlant(rng.standard_normal((L, n, n)), rng.standard_normal((n, m)), domain)


# Data collection ----------------------------------------------------------------

@pytest.mark.parametrize("domain", ["continuous", "discrete"])
def test_noiseless_lti_record_is_exact(domain, rng):
    plant = LpvaPlant(0.3 * rng.standard_normal((1, 3, 3)), rng.standard_normal((3, 2)), domain)
    traj = sample_param_trajectory(ParamPolytope(np.array([[1.0]])), 1.0, 20, 0, domain)
    rec = collect_data(plant, traj, 20, 1)
    assert np.allclose(rec.Theta, 1.0)
    assert np.allclose(rec.X_delta, plant.A_list[0] @ rec.X_minus + plant.B @ rec.U,
                       rtol=0, atol=1e-12)


def test_two_state_record_shape_and_noise_bound(ct_data, dt_data):
    for plant, _, rec, _ in (ct_data, dt_data):
        assert rec.X_minus.shape == rec.X_delta.shape == (2, 35)
        assert rec.U.shape == rec.Theta.shape == (2, 35)
        W = discrepancy(rec, plant).W
        assert np.all(np.linalg.norm(W, axis=0) <= 0.1 + 1e-12)
        assert np.max(np.linalg.norm(W, axis=0)) > 0.05


def test_discrete_record_continues_the_trajectory(dt_data):
    _, _, rec, _ = dt_data
    assert np.array_equal(rec.X_minus[:, 1:], rec.X_delta[:, :-1])


def test_record_validation_and_json():
    with pytest.raises(ValueError):
        DataRecord(np.zeros((2, 3)), np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((2, 3)))
    rec = _random_record(0)
    back = DataRecord.from_json(rec.to_json())
    assert all(np.array_equal(getattr(rec, f), getattr(back, f))
               for f in ("X_minus", "U", "Theta", "X_delta"))
    assert back.domain is rec.domain
    bad = rec.to_json() | {"T": 99}
    with pytest.raises(ValueError):
        DataRecord.from_json(bad)


# Discrepancy -----------------------------------------------------------------

def test_discrepancy_scalar_example():
    rec = DataRecord([[3.0]], [[1.0]], [[2.0]], [[4.0]], "discrete")
    plant = LpvaPlant(np.array([[[0.5]]]), np.array([[1.0]]), "discrete")
    assert discrepancy(rec, plant).W == pytest.approx(0.0, abs=1e-15)


def test_discrepancy_noiseless_is_zero(rng):
    plant = _random_plant(3, domain="continuous")
    traj = sample_param_trajectory(ParamPolytope.box([0, 0], [1, 1]), 0.2, 1.0, 0)
    rec = collect_data(plant, traj, 15, 2, sample_time=0.05)
    assert np.max(np.abs(discrepancy(rec, plant).W)) <= 1e-12


def test_discrepancy_is_linear_in_the_plant(ct_data, rng):
    plant, _, rec, _ = ct_data
    dA = rng.standard_normal((2, 2))
    shifted = LpvaPlant(plant.A_list + np.stack([dA, np.zeros((2, 2))]), plant.B, plant.domain)
    W0 = discrepancy(rec, plant).W
    W1 = discrepancy(rec, shifted).W
    # Only the first parameter block moves, so the change is -dA θ₁(t) x(t).
    assert np.allclose(W1 - W0, -dA @ (rec.X_minus * rec.Theta[0]), rtol=0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_regressor_matches_per_sample_sum(seed):
    rec = _random_record(seed)
    plant = _random_plant(seed + 1)
    W = discrepancy(rec, plant).W
    for t in range(rec.T):
        A_t = sum(th * A for th, A in zip(rec.Theta[:, t], plant.A_list))
        w = rec.X_delta[:, t] - A_t @ rec.X_minus[:, t] - plant.B @ rec.U[:, t]
        assert np.max(np.abs(W[:, t] - w)) <= 1e-12


# Noise bounds and QBP membership ------------------------------------------------

def test_phi_per_sample_partitions():
    phi = phi_per_sample(0.1, 35, 2)
    assert np.allclose(phi.Phi11, 0.35 * np.eye(2), rtol=0, atol=1e-15)
    assert np.array_equal(phi.Phi12, np.zeros((2, 35)))
    assert np.array_equal(phi.Phi22, -np.eye(35))
    assert phi_per_sample(1.0, 1, 1).Phi11 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        phi_per_sample(0.0, 3, 2)


def test_noise_bound_rejects_indefinite_phi22():
    with pytest.raises(ValueError):
        NoiseBound(np.eye(2), np.zeros((2, 2)), np.eye(2))


def test_energy_bound_membership():
    bound = phi_energy(np.eye(2), 5)
    rng = make_rng(0)
    for _ in range(20):
        W = rng.standard_normal((2, 5))
        W /= np.linalg.norm(W)
        assert qbp_membership(W * (1 - 1e-9), bound)
        # Eigenvalue oracle: admissible iff the largest singular value is at most 1.
        W11 = 1.1 * W
        assert qbp_membership(W11, bound) == (np.linalg.eigvalsh(np.eye(2) - W11 @ W11.T)[0] >= -1e-9)
    u, v = np.array([0.6, 0.8]), np.ones(5) / np.sqrt(5)
    rank_one = 1.1 * np.outer(u, v)
    assert np.linalg.norm(rank_one) == pytest.approx(1.1)
    assert not qbp_membership(rank_one, bound)


def test_qbp_membership_cases():
    phi = NoiseBound(np.eye(2), np.zeros((2, 3)), -np.eye(3))
    assert np.array_equal(qbp_value(np.zeros((2, 3)), phi), np.eye(2))
    assert qbp_membership(np.zeros((2, 3)), phi)
    # Aggregated per-sample bound with ε = 1 and T = 3: trace budget 3 < 4.
    W = np.zeros((2, 3))
    W[:, 0] = [0.0, 2.0]
    bound = phi_per_sample(1.0, 3, 2)
    assert np.linalg.eigvalsh(3 * np.eye(2) - W @ W.T)[0] < 0
    assert not qbp_membership(W, bound)
    # Boundary: I - ZZᵀ is exactly singular.
    edge = NoiseBound(np.eye(1), np.zeros((1, 2)), -np.eye(2))
    Z = np.array([[1.0, 0.0]])
    assert qbp_membership(Z, edge) and not qbp_membership(Z, edge, strict=True)
    with pytest.raises(ValueError):
        qbp_membership(np.zeros((2, 2)), phi)


# Consistency QMI ---------------------------------------------------------------

def test_psi_dimensions_and_ground_truth(ct_data):
    plant, _, rec, bound = ct_data
    psi = build_psi(rec, bound)
    assert psi.Psi.shape == (8, 8) and (psi.n, psi.L, psi.m) == (2, 2, 2)
    assert plant_in_consistency_set(plant, psi)
    with pytest.raises(ValueError):
        build_psi(rec, phi_per_sample(0.1, 34, 2))


def test_shifted_plant_is_not_consistent(ct_data):
    plant, _, rec, bound = ct_data
    psi = build_psi(rec, bound)
    far = LpvaPlant(plant.A_list + np.stack([100 * np.eye(2), np.zeros((2, 2))]), plant.B,
                    plant.domain)
    lam = np.linalg.eigvalsh(qbp_value(far.stacked(), psi))[0]
    assert lam < 0
    assert not plant_in_consistency_set(far, psi)


@given(st.integers(0, 10_000))
def test_psi_symmetric_with_negative_semidefinite_lower_block(seed):
    rec = _random_record(seed)
    rng = make_rng(seed)
    G = rng.standard_normal((rec.T, rec.T))
    phi = NoiseBound(np.eye(rec.n), rng.standard_normal((rec.n, rec.T)), -G @ G.T)
    psi = build_psi(rec, phi)
    assert np.array_equal(psi.Psi, psi.Psi.T)
    assert np.linalg.eigvalsh(-psi.Psi22)[0] >= -1e-10 * np.abs(psi.Psi22).max()


def _scalar_case(points, eps):
    """Scalar plant x+ = a x + b u + w; returns (record, bound)."""
    x, u, xp = (np.array([p[i] for p in points], dtype=float)[None] for i in range(3))
    rec = DataRecord(x, u, np.ones_like(x), xp, "discrete")
    return rec, phi_per_sample(eps, len(points), 1)


def _scalar_excess(points, eps, a, b):
    """Hand-derived quadratic: sum_t (x+_t - a x_t - b u_t)² - T ε²."""
    return sum((xp - a * x - b * u) ** 2 for x, u, xp in points) - len(points) * eps ** 2


def test_scalar_disc_oracle():
    # Data x = 1, u = 0, x+ = 0.7 and x = 0, u = 1, x+ = -0.2: the set is the disc
    # centred at (0.7, -0.2) with radius ε√2.
    points, eps = [(1.0, 0.0, 0.7), (0.0, 1.0, -0.2)], 0.1
    psi = build_psi(*_scalar_case(points, eps))
    r = eps * np.sqrt(2)

    def member(a, b, **kw):
        return plant_in_consistency_set(LpvaPlant(np.array([[[a]]]), np.array([[b]]), "discrete"),
                                        psi, **kw)
    assert psi.Psi.shape == (3, 3)
    assert member(0.7, -0.2, strict=True, tol=1e-6)
    for phi in np.linspace(0, 2 * np.pi, 12, endpoint=False):
        c, s = np.cos(phi), np.sin(phi)
        assert member(0.7 + r * c, -0.2 + r * s)
        assert member(0.7 + 0.99 * r * c, -0.2 + 0.99 * r * s, strict=True, tol=1e-6)
        assert not member(0.7 + 1.01 * r * c, -0.2 + 1.01 * r * s)


@given(st.integers(0, 10_000))
def test_scalar_ellipse_oracle(seed):
    rng = make_rng(seed)
    points = [tuple(p) for p in rng.uniform(-2, 2, (3, 3))]
    eps = 0.3
    psi = build_psi(*_scalar_case(points, eps))
    for a, b in rng.uniform(-4, 4, (100, 2)):
        excess = _scalar_excess(points, eps, a, b)
        if abs(excess) < 1e-6:
            continue
        plant = LpvaPlant(np.array([[[a]]]), np.array([[b]]), "discrete")
        assert plant_in_consistency_set(plant, psi) == (excess < 0)


def test_ball_contains_scalar_ellipse():
    points, eps = [(1.0, 0.5, 1.05), (-0.5, 1.0, 0.65), (2.0, -1.0, 0.08)], 0.2
    psi = build_psi(*_scalar_case(points, eps))
    ball = consistency_radius(psi)
    # Boundary of {(a, b): |y - H (a, b)|² <= Tε²} from the normal equations.
    H = np.array([[x, u] for x, u, _ in points])
    y = np.array([xp for _, _, xp in points])
    ls = np.linalg.lstsq(H, y, rcond=None)[0]
    assert np.allclose(ball.center.ravel(), ls, atol=1e-12)
    level = len(points) * eps ** 2 - np.sum((y - H @ ls) ** 2)
    L = np.linalg.cholesky(H.T @ H)
    for phi in np.linspace(0, 2 * np.pi, 100, endpoint=False):
        d = np.linalg.solve(L.T, np.sqrt(level) * np.array([np.cos(phi), np.sin(phi)]))
        edge = ls + d
        assert abs(_scalar_excess(points, eps, *edge)) <= 1e-10
        assert ball.contains(edge.reshape(1, 2))


def test_ball_invariant_under_phi_scaling(ct_data):
    _, _, rec, bound = ct_data
    b1 = consistency_radius(build_psi(rec, bound))
    b4 = consistency_radius(build_psi(rec, bound.scaled(4.0)))
    assert np.allclose(b1.center, b4.center, rtol=1e-10, atol=1e-12)
    assert np.allclose(b4.schur, 4 * b1.schur, rtol=1e-9, atol=1e-12)
    assert b4.radius_sq == pytest.approx(b1.radius_sq, rel=1e-9)


def test_ball_shrinks_with_noise(ct_data):
    plant, _, rec, _ = ct_data
    noiseless = collect_data(plant, sample_param_trajectory(ParamPolytope(builtin.TWO_STATE_VERTICES),
                                                            0.05, 35 * 0.05, 0), 35, 100)
    ball = consistency_radius(build_psi(noiseless, phi_per_sample(1e-8, 35, 2)))
    assert ball.radius_sq < 1e-10
    assert np.allclose(ball.center, plant.stacked(), atol=1e-6)


def test_unbounded_marker_for_singular_psi22():
    rec = DataRecord(np.ones((1, 4)), np.ones((1, 4)), np.ones((1, 4)), np.ones((1, 4)), "discrete")
    psi = build_psi(rec, phi_per_sample(0.1, 4, 1))
    assert not consistency_radius(psi).bounded
    with pytest.raises(DegenerateDataError):
        sample_consistent_plants(psi, 3, 0)


# Sampling -----------------------------------------------------------------------

def test_sampled_two_state_plants_are_members(ct_data):
    _, _, rec, bound = ct_data
    psi = build_psi(rec, bound)
    plants = sample_consistent_plants(psi, 15, 7)
    assert len(plants) == 15
    assert all(plant_in_consistency_set(p, psi, tol=1e-9) for p in plants)
    again = sample_consistent_plants(psi, 15, 7)
    assert all(np.array_equal(p.stacked(), q.stacked()) for p, q in zip(plants, again))
    assert len({p.stacked().tobytes() for p in plants}) == 15


@given(st.integers(0, 10_000))
def test_sampling_membership_soundness(seed):
    rng = make_rng(seed)
    plant = _random_plant(seed, n=2, m=1, L=2)
    rec = DataRecord(rng.standard_normal((2, 10)), rng.standard_normal((1, 10)),
                     rng.uniform(0, 1, (2, 10)), np.zeros((2, 10)), "discrete")
    W = np.array([ball_noise(0.2)(rng, 2) for _ in range(10)]).T
    rec = DataRecord(rec.X_minus, rec.U, rec.Theta,
                     np.hstack(list(plant.A_list)) @ rec.regressor() + plant.B @ rec.U + W, "discrete")
    psi = build_psi(rec, phi_per_sample(0.2, 10, 2))
    assert plant_in_consistency_set(plant, psi)
    for p in sample_consistent_plants(psi, 3, seed):
        assert plant_in_consistency_set(p, psi, tol=1e-9)


def test_scalar_samples_inside_ellipse():
    points, eps = [(1.0, 0.5, 1.05), (-0.5, 1.0, 0.65), (2.0, -1.0, 0.08)], 0.2
    psi = build_psi(*_scalar_case(points, eps))
    for p in sample_consistent_plants(psi, 50, 3, "discrete"):
        a, b = p.A_list[0, 0, 0], p.B[0, 0]
        assert _scalar_excess(points, eps, a, b) <= 1e-9


def test_tight_bound_samples_collapse_to_least_squares(ct_data):
    plant, poly, _, _ = ct_data
    rec = collect_data(plant, sample_param_trajectory(poly, 0.05, 35 * 0.05, 1), 35, 5)
    psi = build_psi(rec, phi_per_sample(1e-9, 35, 2))
    for p in sample_consistent_plants(psi, 5, 0):
        assert np.max(np.abs(p.stacked() - plant.stacked())) <= 1e-6


def test_concatenated_records_accept_ground_truth():
    plant = LpvaPlant(builtin.TWO_STATE_A, builtin.TWO_STATE_B, "continuous")
    poly = ParamPolytope(builtin.TWO_STATE_VERTICES)
    recs, bounds = [], []
    for seed, T in ((0, 20), (1, 15)):
        traj = sample_param_trajectory(poly, 0.05, T * 0.05, seed)
        recs.append(collect_data(plant, traj, T, seed + 50, noise_sampler=ball_noise(0.1)))
        bounds.append(phi_per_sample(0.1, T, 2))
        assert plant_in_consistency_set(plant, build_psi(recs[-1], bounds[-1]))
    joint = build_psi(concatenate_records(*recs), concatenate_bounds(*bounds))
    assert joint.Psi.shape == (8, 8)
    assert plant_in_consistency_set(plant, joint)


# S-lemma diagnostics --------------------------------------------------------------

def test_slemma_diagnostics_on_two_state_data(ct_data):
    _, _, rec, bound = ct_data
    diag = slemma_precondition_check(build_psi(rec, bound))
    assert diag.passed and diag.null_dim == 0
    assert diag.neg_psi22_min_eig > 0 and diag.schur_min_eig > 0


def test_slemma_diagnostics_rank_deficient_data():
    rng = make_rng(4)
    col = [rng.standard_normal((k, 1)) for k in (2, 2, 2, 2)]
    rec = DataRecord(*(np.repeat(c, 6, axis=1) for c in col), "continuous")
    psi = build_psi(rec, phi_per_sample(0.1, 6, 2))
    diag = slemma_precondition_check(psi)
    # Independent kernel: null space of the stacked data [R; U]ᵀ.
    kernel = null_space(np.vstack([rec.regressor(), rec.U]).T)
    assert kernel.shape[1] == diag.null_dim == 5
    assert np.allclose(psi.Psi22 @ kernel, 0, atol=1e-12)
    assert np.allclose(psi.Psi12 @ kernel, 0, atol=1e-12)
    assert diag.kernel_inclusion


def test_slemma_diagnostics_detect_kernel_violation():
    Psi = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    diag = slemma_precondition_check(ConsistencyQmi(Psi, 1, 1, 1))
    assert diag.null_dim == 1 and not diag.kernel_inclusion and not diag.passed
