"""Noisy data records, quadratic noise models and the plant consistency set.

A record ``(X_minus, U, Theta, X_delta)`` and a noise bound ``Φ`` define the
set of plants ``Z = [A_1 ... A_L  B]`` whose discrepancy
``W = X_delta - Z [R; U]`` satisfies ``[I; Wᵀ]ᵀ Φ [I; Wᵀ] ⪰ 0``, where the
regressor ``R`` has columns ``θ(t) ⊗ x(t)``. Substituting ``W`` gives one
QMI in ``Z`` with matrix ``Ψ = M Φ Mᵀ``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .lpv import (LpvaPlant, ParamTrajectory, TimeDomain, khatri_rao_columns, make_rng,
                  simulate, spawn_seeds)

PSD_TOL = 1e-12


class DegenerateDataError(ValueError):
    """Data do not bound the consistency set (singular or indefinite partitions)."""


@dataclass(frozen=True, eq=False)
class DataRecord:
    X_minus: np.ndarray
    U: np.ndarray
    Theta: np.ndarray
    X_delta: np.ndarray
    domain: TimeDomain = TimeDomain.CONTINUOUS

    def __post_init__(self):
        arrs = [np.atleast_2d(np.asarray(a, dtype=float))
                for a in (self.X_minus, self.U, self.Theta, self.X_delta)]
        T = arrs[0].shape[1]
        if T < 1 or any(a.shape[1] != T for a in arrs):
            raise ValueError("all data matrices need the same number T >= 1 of columns")
        if arrs[3].shape[0] != arrs[0].shape[0]:
            raise ValueError("X_delta and X_minus need the same row count")
        for name, a in zip(("X_minus", "U", "Theta", "X_delta"), arrs):
            object.__setattr__(self, name, a)
        object.__setattr__(self, "domain", TimeDomain(self.domain))

    @property
    def T(self):
        return self.X_minus.shape[1]

    @property
    def n(self):
        return self.X_minus.shape[0]

    @property
    def m(self):
        return self.U.shape[0]

    @property
    def L(self):
        return self.Theta.shape[0]

    def regressor(self):
        """``(L n, T)`` matrix with column ``t`` equal to ``θ(t) ⊗ x(t)``."""
        return khatri_rao_columns(self.X_minus, self.Theta)

    def to_json(self):
        return {"domain": self.domain.value, "T": self.T, "X_minus": self.X_minus.tolist(),
                "U": self.U.tolist(), "Theta": self.Theta.tolist(),
                "X_delta": self.X_delta.tolist()}

    @classmethod
    def from_json(cls, data):
        rec = cls(np.array(data["X_minus"]), np.array(data["U"]), np.array(data["Theta"]),
                  np.array(data["X_delta"]), data.get("domain", "continuous"))
        if "T" in data and int(data["T"]) != rec.T:
            raise ValueError("declared T does not match the matrices")
        return rec


def concatenate_records(*records: DataRecord) -> DataRecord:
    """Side-by-side concatenation of several experiments on one plant."""
    if len({r.domain for r in records}) != 1:
        raise ValueError("records from different time domains")
    return DataRecord(*(np.hstack([getattr(r, f) for r in records])
                        for f in ("X_minus", "U", "Theta", "X_delta")), records[0].domain)


@dataclass(frozen=True, eq=False)
class DiscrepancyMatrix:
    W: np.ndarray


@dataclass(frozen=True, eq=False)
class NoiseBound:
    """Partitioned ``Φ``; noise ``W`` (n×k) is admissible iff
    ``Φ11 + Φ12 Wᵀ + W Φ21 + W Φ22 Wᵀ ⪰ 0``."""

    Phi11: np.ndarray
    Phi12: np.ndarray
    Phi22: np.ndarray

    def __post_init__(self):
        P11 = np.atleast_2d(np.asarray(self.Phi11, dtype=float))
        P22 = np.atleast_2d(np.asarray(self.Phi22, dtype=float))
        P12 = np.asarray(self.Phi12, dtype=float).reshape(P11.shape[0], P22.shape[0])
        for name, P in (("Phi11", P11), ("Phi22", P22)):
            if P.shape[0] != P.shape[1] or not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1, np.abs(P).max())):
                raise ValueError(f"{name} must be square symmetric")
        if np.linalg.eigvalsh(-P22)[0] < -PSD_TOL * max(1.0, np.abs(P22).max()):
            raise ValueError("-Phi22 must be positive semidefinite")
        object.__setattr__(self, "Phi11", 0.5 * (P11 + P11.T))
        object.__setattr__(self, "Phi12", P12)
        object.__setattr__(self, "Phi22", 0.5 * (P22 + P22.T))

    @property
    def n(self):
        return self.Phi11.shape[0]

    @property
    def k(self):
        return self.Phi22.shape[0]

    @property
    def matrix(self):
        return np.block([[self.Phi11, self.Phi12], [self.Phi12.T, self.Phi22]])

    def scaled(self, factor):
        return NoiseBound(factor * self.Phi11, factor * self.Phi12, factor * self.Phi22)

    def to_json(self):
        return {"Phi11": self.Phi11.tolist(), "Phi12": self.Phi12.tolist(),
                "Phi22": self.Phi22.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.array(data["Phi11"]), np.array(data["Phi12"]), np.array(data["Phi22"]))


def phi_per_sample(eps, T, n) -> NoiseBound:
    """Aggregate of ``|w(t)|_2 <= eps`` for each of ``T`` samples: ``WWᵀ ⪯ eps² T I``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return NoiseBound(eps ** 2 * T * np.eye(n), np.zeros((n, T)), -np.eye(T))


def phi_energy(Q, T) -> NoiseBound:
    """Energy bound ``W Wᵀ ⪯ Q``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] < -PSD_TOL:
        raise ValueError("Q must be positive semidefinite")
    return NoiseBound(Q, np.zeros((Q.shape[0], T)), -np.eye(T))


def concatenate_bounds(*bounds: NoiseBound) -> NoiseBound:
    """Bound for concatenated records: the sum of the individual QMIs."""
    return NoiseBound(sum(b.Phi11 for b in bounds), np.hstack([b.Phi12 for b in bounds]),
                      linalg.block_diag(*[b.Phi22 for b in bounds]))


def qbp_value(Z, bound) -> np.ndarray:
    """``[I; Zᵀ]ᵀ Φ [I; Zᵀ]`` for a partition-like ``bound`` (Phi11/Phi12/Phi22 or Psi)."""
    P11, P12, P22 = _parts(bound)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape != P12.shape:
        raise ValueError(f"Z has shape {Z.shape}, partition expects {P12.shape}")
    out = P11 + P12 @ Z.T + Z @ P12.T + Z @ P22 @ Z.T
    return 0.5 * (out + out.T)


def qbp_membership(Z, bound, strict=False, tol=1e-9) -> bool:
    """Non-strict: min eig ≥ -tol. Strict: min eig ≥ +tol."""
    lam = np.linalg.eigvalsh(qbp_value(Z, bound))[0]
    return bool(lam >= tol) if strict else bool(lam >= -tol)


def _parts(bound):
    if isinstance(bound, ConsistencyQmi):
        return bound.Psi11, bound.Psi12, bound.Psi22
    return bound.Phi11, bound.Phi12, bound.Phi22


def ball_noise(eps) -> Callable:
    """Sampler of vectors uniform in the Euclidean ball of radius ``eps``."""
    def sample(rng, n):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        return eps * rng.uniform() ** (1.0 / n) * d
    return sample


def uniform_excitation(rng, m):
    return rng.uniform(-1.0, 1.0, size=m)


def collect_data(plant: LpvaPlant, param_traj: ParamTrajectory, T, seed,
                 excitation: Optional[Callable] = None, noise_sampler: Optional[Callable] = None,
                 x0=None, sample_time=0.05, step=0.01) -> DataRecord:
    """Run one noisy experiment and record ``T`` samples.

    Discrete time records ``x(k), u(k), θ(k)`` and the noisy next state for
    ``k < T``. Continuous time integrates with inputs and noise held between
    sample instants ``k * sample_time`` and records the exact noisy vector
    field ``A(θ)x + Bu + w`` at each instant.

    ``excitation(rng, m)`` and ``noise_sampler(rng, n)`` draw one column;
    defaults are uniform inputs on [-1, 1]^m and zero noise.
    """
    rng = make_rng(seed)
    excitation = excitation or uniform_excitation
    n, m = plant.n, plant.m
    x0 = rng.uniform(-1.0, 1.0, size=n) if x0 is None else np.asarray(x0, dtype=float)
    U = np.array([excitation(rng, m) for _ in range(T)]).reshape(T, m)
    if noise_sampler is None:
        Wn = np.zeros((T, n))
    else:
        Wn = np.array([noise_sampler(rng, n) for _ in range(T)]).reshape(T, n)

    if plant.domain is TimeDomain.DISCRETE:
        if param_traj.end < T:
            raise ValueError("parameter trajectory shorter than the experiment")
        sub = ParamTrajectory(param_traj.times[param_traj.times < T],
                              param_traj.values[param_traj.times < T], float(T))
        sim = simulate(plant, sub, x0, input_fn=lambda t: U[min(T - 1, int(round(t)))],
                       disturbance=lambda t: Wn[min(T - 1, int(round(t)))])
        X = sim.x[:T]
        Theta = sim.theta[:T]
        Xd = sim.x[1:T + 1]
    else:
        ts = sample_time * np.arange(T)
        end = sample_time * T
        if param_traj.end < end - 1e-12:
            raise ValueError("parameter trajectory shorter than the experiment")
        keep = param_traj.times < end
        sub = ParamTrajectory(param_traj.times[keep], param_traj.values[keep], end)

        def held(arr):
            return lambda t: arr[min(T - 1, int(np.searchsorted(ts, t + 1e-12 * sample_time,
                                                                 side="right")) - 1)]
        sim = simulate(plant, sub, x0, input_fn=held(U), disturbance=held(Wn),
                       step=step, breakpoints=ts)
        idx = np.array([np.argmin(np.abs(sim.times - t)) for t in ts])
        X = sim.x[idx]
        Theta = np.array([sub.value_at(t) for t in ts])
        Xd = np.array([plant.A(th) @ x for th, x in zip(Theta, X)]) + U @ plant.B.T + Wn
    return DataRecord(X.T, U.T, Theta.T, Xd.T, plant.domain)


def discrepancy(record: DataRecord, plant: LpvaPlant) -> DiscrepancyMatrix:
    """``W = X_delta - [A_1 ... A_L] R - B U``."""
    if (plant.n, plant.m, plant.L) != (record.n, record.m, record.L):
        raise ValueError("plant and record dimensions differ")
    W = record.X_delta - np.hstack(list(plant.A_list)) @ record.regressor() - plant.B @ record.U
    return DiscrepancyMatrix(W)


@dataclass(frozen=True, eq=False)
class ConsistencyQmi:
    """``Ψ`` of size ``n + L n + m``; plant ``Z`` is consistent iff
    ``[I; Zᵀ]ᵀ Ψ [I; Zᵀ] ⪰ 0``."""

    Psi: np.ndarray
    n: int
    L: int
    m: int

    def __post_init__(self):
        Psi = np.asarray(self.Psi, dtype=float)
        size = self.n + self.L * self.n + self.m
        if Psi.shape != (size, size):
            raise ValueError(f"Psi must be {size}×{size}")
        object.__setattr__(self, "Psi", 0.5 * (Psi + Psi.T))

    @property
    def k(self):
        return self.L * self.n + self.m

    @property
    def Psi11(self):
        return self.Psi[: self.n, : self.n]

    @property
    def Psi12(self):
        return self.Psi[: self.n, self.n:]

    @property
    def Psi22(self):
        return self.Psi[self.n:, self.n:]

    def to_json(self):
        return {"Psi": self.Psi.tolist(), "n": self.n, "L": self.L, "m": self.m}

    @classmethod
    def from_json(cls, data):
        return cls(np.array(data["Psi"]), data["n"], data["L"], data["m"])


def build_psi(record: DataRecord, bound: NoiseBound) -> ConsistencyQmi:
    """``Ψ = M Φ Mᵀ`` with ``M = [[I, X_delta], [0, -R], [0, -U]]``."""
    n, T = record.n, record.T
    if bound.n != n or bound.k != T:
        raise ValueError(f"bound sized for (n={bound.n}, T={bound.k}), record has ({n}, {T})")
    R = record.regressor()
    k = R.shape[0] + record.m
    M = np.block([[np.eye(n), record.X_delta],
                  [np.zeros((k, n)), -np.vstack([R, record.U])]])
    return ConsistencyQmi(M @ bound.matrix @ M.T, n, record.L, record.m)


def plant_in_consistency_set(plant: LpvaPlant, psi: ConsistencyQmi, tol=1e-9, strict=False):
    if (plant.n, plant.L, plant.m) != (psi.n, psi.L, psi.m):
        raise ValueError("plant dimensions do not match Ψ")
    return qbp_membership(plant.stacked(), psi, strict=strict, tol=tol)


@dataclass(frozen=True, eq=False)
class ConsistencyBall:
    """Frobenius ball ``|Z - center|_F² <= radius_sq`` containing the set.

    ``bounded`` is False (and the other fields None) when ``-Ψ22`` is singular.
    """

    bounded: bool
    center: Optional[np.ndarray]
    radius_sq: Optional[float]
    schur: Optional[np.ndarray]

    def contains(self, Z, rtol=1e-9):
        if not self.bounded:
            return True
        d = np.sum((np.asarray(Z) - self.center) ** 2)
        return bool(d <= self.radius_sq * (1 + rtol) + rtol)


def _center_and_schur(psi: ConsistencyQmi):
    N = -psi.Psi22
    lam = np.linalg.eigvalsh(N)
    if lam[0] <= 1e-12 * max(1.0, lam[-1]):
        return None
    fac = linalg.cho_factor(N, lower=True)
    center = linalg.cho_solve(fac, psi.Psi12.T).T  # -Ψ12 Ψ22⁻¹
    schur = psi.Psi11 + psi.Psi12 @ center.T
    return center, 0.5 * (schur + schur.T), lam[0]


def consistency_radius(psi: ConsistencyQmi) -> ConsistencyBall:
    """Centre ``-Ψ12 Ψ22⁻¹`` and squared radius ``k λmax(Ψ|Ψ22) / λmin(-Ψ22)``."""
    cs = _center_and_schur(psi)
    if cs is None:
        return ConsistencyBall(False, None, None, None)
    center, schur, lam_min = cs
    radius_sq = psi.k * max(0.0, np.linalg.eigvalsh(schur)[-1]) / lam_min
    return ConsistencyBall(True, center, float(radius_sq), schur)


def _sym_sqrt(S):
    lam, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def sample_consistent_plants(psi: ConsistencyQmi, count, seed, domain=TimeDomain.CONTINUOUS,
                             burn_in=None, tol=1e-9, max_rounds=20):
    """Draw ``count`` plants from the consistency set by hit-and-run.

    With ``S = Ψ|Ψ22`` and ``N = -Ψ22`` the set is
    ``{Zc + S^½ Υ N^-½ : |Υ|_2 <= 1}`` (all of it when ``S`` is nonsingular),
    so the walk runs on the spectral-norm unit ball where chord endpoints
    are exact generalised eigenvalues. Each plant uses its own substream
    and its own chain started at the centre.
    """
    cs = _center_and_schur(psi)
    if cs is None:
        raise DegenerateDataError("-Ψ22 is singular; the consistency set is unbounded")
    center, S, _ = cs
    if np.linalg.eigvalsh(S)[0] < -1e-10 * max(1.0, np.abs(S).max()):
        raise DegenerateDataError("Ψ|Ψ22 is indefinite; no plant is consistent")
    n, k = psi.n, psi.k
    left = _sym_sqrt(S)
    lam, V = np.linalg.eigh(-psi.Psi22)
    right = (V / np.sqrt(lam)) @ V.T
    steps = burn_in if burn_in is not None else max(100, 5 * n * k)

    plants = []
    for child in spawn_seeds(seed, count):
        rng = make_rng(child)
        for _ in range(max_rounds):
            Y = _hit_and_run(np.zeros((n, k)), steps, rng)
            plant = LpvaPlant.from_stacked(center + left @ Y @ right, psi.L, domain)
            if plant_in_consistency_set(plant, psi, tol=tol):
                plants.append(plant)
                break
        else:
            raise DegenerateDataError("sampling kept producing non-members; set is near-degenerate")
    return plants


def _hit_and_run(Y, steps, rng):
    n, k = Y.shape
    eye = np.eye(n + k)
    for _ in range(steps):
        D = rng.standard_normal((n, k))
        D /= np.linalg.norm(D)
        # |Y + sD|_2 <= 1  <=>  [[I, Y + sD], [*, I]] ⪰ 0: a pencil G0 + s E.
        G0 = eye.copy()
        G0[:n, n:] = Y
        G0[n:, :n] = Y.T
        E = np.zeros_like(G0)
        E[:n, n:] = D
        E[n:, :n] = D.T
        mu = linalg.eigh(E, G0, eigvals_only=True)
        lo = -1.0 / mu[-1] if mu[-1] > 0 else -np.inf
        hi = -1.0 / mu[0] if mu[0] < 0 else np.inf
        s = rng.uniform(lo, hi)
        Y = Y + s * D
    return Y


@dataclass(frozen=True)
class SLemmaDiagnostics:
    kernel_inclusion: bool
    kernel_margin: float  # |Ψ12 V0| for an orthonormal basis V0 of ker Ψ22
    null_dim: int
    schur_min_eig: float  # of the generalised Schur complement Ψ|Ψ22
    neg_psi22_min_eig: float

    @property
    def passed(self):
        return self.kernel_inclusion and self.schur_min_eig >= -1e-9 and self.neg_psi22_min_eig >= -1e-9

    def to_json(self):
        return {"kernel_inclusion": self.kernel_inclusion, "kernel_margin": self.kernel_margin,
                "null_dim": self.null_dim, "schur_min_eig": self.schur_min_eig,
                "neg_psi22_min_eig": self.neg_psi22_min_eig, "passed": self.passed}


def slemma_precondition_check(psi: ConsistencyQmi, rtol=1e-10) -> SLemmaDiagnostics:
    """Check the hypotheses that make the data-side QMI usable as an S-procedure multiplier."""
    P12, P22 = psi.Psi12, psi.Psi22
    scale = max(1.0, np.abs(psi.Psi).max())
    _, sv, Vt = np.linalg.svd(P22)
    null = Vt[sv <= rtol * max(sv[0], 1e-300)] if len(sv) else Vt
    margin = float(np.linalg.norm(P12 @ null.T, 2)) if len(null) else 0.0
    schur = psi.Psi11 - P12 @ np.linalg.pinv(P22, rcond=rtol, hermitian=True) @ P12.T
    return SLemmaDiagnostics(
        kernel_inclusion=margin <= 1e-8 * scale,
        kernel_margin=margin,
        null_dim=int(len(null)),
        schur_min_eig=float(np.linalg.eigvalsh(0.5 * (schur + schur.T))[0]),
        neg_psi22_min_eig=float(np.linalg.eigvalsh(-P22)[0]),
    )
