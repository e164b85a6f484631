"""LPVA plants, parameter polytopes, gain scheduling and simulation.

An LPVA plant has dynamics ``δx = (sum_l θ_l A_l) x + B u + w`` where ``δx``
is the derivative in continuous time and the next state in discrete time.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from . import kernels

COORD_TOL = 1e-9


class TimeDomain(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


class OutsidePolytopeError(ValueError):
    """Raised when a parameter value is not a convex combination of vertices."""


class SimulationDiverged(FloatingPointError):
    pass


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; ``seed`` may be an int, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed, count):
    """Independent child seeds, stable under a fixed parent seed."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(count)


def khatri_rao_columns(A, B):
    """Column-wise Khatri-Rao product: column ``t`` is ``B[:, t] ⊗ A[:, t]``.

    Parameters
    ----------
    A : (m, T) array_like
    B : (p, T) array_like

    Returns
    -------
    (m*p, T) ndarray
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    return np.einsum("it,jt->ijt", B, A).reshape(A.shape[0] * B.shape[0], A.shape[1])


def _as_matrix(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be a finite 2-D array")
    return a


@dataclass(frozen=True, eq=False)
class LpvaPlant:
    """``A(θ) = sum_l θ_l A_l`` with constant ``B``."""

    A_list: np.ndarray
    B: np.ndarray
    domain: TimeDomain = TimeDomain.CONTINUOUS

    def __post_init__(self):
        A = np.asarray(self.A_list, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[0] < 1 or A.shape[1] != A.shape[2]:
            raise ValueError("A_list must hold L >= 1 square matrices of equal size")
        B = _as_matrix(self.B, "B")
        if B.shape[0] != A.shape[1]:
            raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[1]}")
        object.__setattr__(self, "A_list", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "domain", TimeDomain(self.domain))

    @property
    def n(self):
        return self.A_list.shape[1]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def L(self):
        return self.A_list.shape[0]

    def A(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.L,):
            raise ValueError(f"θ has dimension {theta.size}, expected {self.L}")
        return np.tensordot(theta, self.A_list, axes=1)

    def stacked(self):
        """``[A_1 ... A_L  B]``, the unknown in data-consistency QMIs."""
        return np.hstack(list(self.A_list) + [self.B])

    @classmethod
    def from_stacked(cls, Z, L, domain):
        Z = np.asarray(Z, dtype=float)
        n = Z.shape[0]
        return cls(np.array([Z[:, l * n:(l + 1) * n] for l in range(L)]), Z[:, L * n:], domain)

    def to_json(self):
        return {"A_list": self.A_list.tolist(), "B": self.B.tolist(), "domain": self.domain.value}

    @classmethod
    def from_json(cls, data):
        return cls(np.array(data["A_list"]), np.array(data["B"]), data.get("domain", "continuous"))


@dataclass(frozen=True, eq=False)
class ParamPolytope:
    """Θ = conv(vertices); vertices are the rows of an ``(N_v, L)`` array."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if V.shape[0] < 1 or V.shape[1] < 1:
            raise ValueError("need at least one vertex of dimension >= 1")
        if not np.all(np.isfinite(V)):
            raise ValueError("vertices must be finite")
        if len(np.unique(V, axis=0)) != len(V):
            raise ValueError("duplicate vertices")
        object.__setattr__(self, "vertices", V)

    @classmethod
    def box(cls, lower, upper):
        """Axis-aligned box; vertices in lexicographic (lower-first) order."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or np.any(upper < lower):
            raise ValueError("box bounds must have equal shape with lower <= upper")
        axes = [sorted({lo, hi}) for lo, hi in zip(lower, upper)]
        return cls(np.array(list(itertools.product(*axes))))

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def L(self):
        return self.vertices.shape[1]

    def box_bounds(self):
        """``(lower, upper)`` if the vertices are exactly a box's corners, else None."""
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        axes = [sorted({a, b}) for a, b in zip(lo, hi)]
        corners = np.array(list(itertools.product(*axes)))
        if len(corners) != self.num_vertices:
            return None
        have = {tuple(v) for v in self.vertices}
        if all(tuple(c) in have for c in corners):
            return lo, hi
        return None

    def to_json(self):
        return {"vertices": self.vertices.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.array(data["vertices"]))


def vertex_matrix(plant: LpvaPlant, polytope: ParamPolytope, v: int):
    """``A_v = sum_l ω_{lv} A_l`` for the 0-based vertex index ``v``."""
    if not 0 <= v < polytope.num_vertices:
        raise IndexError(f"vertex index {v} out of range [0, {polytope.num_vertices})")
    return plant.A(polytope.vertices[v])


def interpolate_coordinates(polytope: ParamPolytope, theta):
    """Convex coordinates ``c`` with ``sum c_v ω_v = θ``.

    Among feasible ``c`` the minimum-norm one is returned, which makes the
    answer reproducible. Raises :class:`OutsidePolytopeError` if θ ∉ Θ.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape != (polytope.L,):
        raise ValueError(f"θ has dimension {theta.size}, expected {polytope.L}")
    V = polytope.vertices
    E = np.vstack([V.T, np.ones(len(V))])
    target = np.append(theta, 1.0)
    scale = max(1.0, float(np.max(np.abs(E))))
    # Tiny ridge term picks the minimum-norm point among nonnegative solutions.
    mu = 1e-10 * scale
    c, _ = nnls(np.vstack([E, np.sqrt(mu) * np.eye(len(V))]),
                np.concatenate([target, np.zeros(len(V))]))
    # Polish on the support: exact minimum-norm solve of the equality system.
    support = c > 1e-8
    cs = np.zeros_like(c)
    cs[support] = np.linalg.lstsq(E[:, support], target, rcond=None)[0]
    if np.all(cs >= 0) and _coord_residual(E, cs, target) <= _coord_residual(E, c, target):
        c = cs
    res = _coord_residual(E, c, target)
    if res > COORD_TOL * scale:
        raise OutsidePolytopeError(f"θ = {theta} lies outside the polytope (residual {res:.2e})")
    return c


def _coord_residual(E, c, target):
    return float(np.max(np.abs(E @ c - target)))


@dataclass(frozen=True, eq=False)
class GainScheduledController:
    """Vertex gains ``K_v`` blended by convex coordinates, plus the Lyapunov shape ``P``."""

    K_list: np.ndarray
    polytope: ParamPolytope
    P: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K_list, dtype=float)
        if K.ndim == 2:
            K = K[None]
        if K.ndim != 3 or K.shape[0] != self.polytope.num_vertices:
            raise ValueError("need one gain per polytope vertex")
        P = _as_matrix(self.P, "P")
        if P.shape != (K.shape[2], K.shape[2]) or not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("P must be symmetric n×n")
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P)[0] <= 0:
            raise ValueError("P must be positive definite")
        object.__setattr__(self, "K_list", K)
        object.__setattr__(self, "P", P)

    def gain(self, theta):
        return schedule_gain(self, theta)

    def to_json(self):
        return {"K_list": self.K_list.tolist(), "polytope": self.polytope.to_json(),
                "P": self.P.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.array(data["K_list"]), ParamPolytope.from_json(data["polytope"]),
                   np.array(data["P"]))


def schedule_gain(controller: GainScheduledController, theta):
    """``K(θ) = sum_v c_v K_v`` with ``c`` from :func:`interpolate_coordinates`."""
    c = interpolate_coordinates(controller.polytope, theta)
    return np.tensordot(c, controller.K_list, axes=1)


def eval_dynamics(plant: LpvaPlant, theta, x, u=None, w=None):
    """``δx = A(θ) x + B u + w``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (plant.n,):
        raise ValueError(f"x has dimension {x.size}, expected {plant.n}")
    u = np.zeros(plant.m) if u is None else np.asarray(u, dtype=float).reshape(-1)
    w = np.zeros(plant.n) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if u.shape != (plant.m,) or w.shape != (plant.n,):
        raise ValueError("u or w has the wrong dimension")
    return plant.A(theta) @ x + plant.B @ u + w


@dataclass(frozen=True, eq=False)
class ParamTrajectory:
    """Piecewise-constant θ: ``values[i]`` is held on ``[times[i], times[i+1])``.

    ``times[0] == 0`` and the last segment ends at ``end``.
    """

    times: np.ndarray
    values: np.ndarray
    end: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(t) == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("switch times must start at 0 and increase strictly")
        if v.shape[0] != len(t):
            raise ValueError("one held value per switch time required")
        if not self.end > t[-1]:
            raise ValueError("end must exceed the last switch time")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "end", float(self.end))

    @property
    def num_segments(self):
        return len(self.times)

    def segment_at(self, t):
        return np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)

    def value_at(self, t):
        return self.values[self.segment_at(t)]

    def check_inside(self, polytope: ParamPolytope):
        for v in self.values:
            interpolate_coordinates(polytope, v)


def sample_param_trajectory(polytope: ParamPolytope, mean_dwell, horizon, seed,
                            domain=TimeDomain.CONTINUOUS) -> ParamTrajectory:
    """Random piecewise-constant parameter path.

    Dwell times are exponential with mean ``mean_dwell`` (geometric on the
    integers in discrete time). Held values are uniform over the box when Θ
    is an axis-aligned box and Dirichlet(1) mixtures of vertices otherwise.
    """
    if not mean_dwell > 0 or not horizon > 0:
        raise ValueError("mean_dwell and horizon must be positive")
    domain = TimeDomain(domain)
    rng = make_rng(seed)
    times = [0.0]
    while True:
        if domain is TimeDomain.CONTINUOUS:
            dwell = rng.exponential(mean_dwell)
        else:
            dwell = float(rng.geometric(min(1.0, 1.0 / mean_dwell)))
        nxt = times[-1] + dwell
        if nxt >= horizon:
            break
        if nxt > times[-1]:
            times.append(nxt)
    values = sample_params(polytope, len(times), rng)
    return ParamTrajectory(np.array(times), values, float(horizon))


def sample_params(polytope: ParamPolytope, count, rng):
    """``count`` points of Θ: uniform on boxes, Dirichlet(1) vertex mixtures otherwise."""
    rng = make_rng(rng)
    bounds = polytope.box_bounds()
    if bounds is not None:
        return rng.uniform(bounds[0], bounds[1], size=(count, polytope.L))
    w = rng.dirichlet(np.ones(polytope.num_vertices), size=count)
    return w @ polytope.vertices


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Samples ``x[i]`` at ``times[i]``; ``u[i]``, ``w[i]``, ``theta[i]`` act from ``times[i]``."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        k = len(self.times)
        if not all(len(a) == k for a in (self.x, self.u, self.w, self.theta)):
            raise ValueError("trajectory fields must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase")

    def to_csv(self) -> str:
        n, m, L = self.x.shape[1], self.u.shape[1], self.theta.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                        + [f"theta{i + 1}" for i in range(L)])
        for row in zip(self.times, self.x, self.u, self.theta):
            writer.writerow([repr(float(row[0]))] + [repr(float(v)) for v in np.concatenate(row[1:])])
        return buf.getvalue()


def _time_grid(end, step, breaks):
    grid = np.union1d(np.arange(0.0, end, step), np.asarray(breaks, dtype=float))
    grid = np.union1d(grid[(grid >= 0) & (grid < end)], [end])
    # Drop sliver steps created by floating-point near-coincidences.
    keep = np.concatenate([[True], np.diff(grid) > 1e-9 * step])
    grid = grid[keep]
    grid[-1] = end
    return grid


def simulate(plant: LpvaPlant, param_traj: ParamTrajectory, x0,
             controller: Optional[GainScheduledController] = None,
             input_fn: Optional[Callable] = None,
             disturbance: Optional[Callable] = None,
             step=0.01, breakpoints=(), use_numba=None) -> StateTrajectory:
    """Simulate the plant under a parameter path.

    Continuous time uses classical RK4 at fixed ``step``, with extra steps
    inserted at parameter switches and ``breakpoints`` so that θ and held
    signals are constant inside every step. Discrete time iterates
    ``x+ = A(θ_k) x + B u_k + w_k`` for ``k < end``.

    ``controller`` closes the loop with ``u = K(θ) x``; otherwise
    ``input_fn(t)`` is held over each step (zero if absent). ``disturbance(t)``
    is held likewise.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (plant.n,):
        raise ValueError(f"x0 has dimension {x0.size}, expected {plant.n}")
    if param_traj.values.shape[1] != plant.L:
        raise ValueError("parameter trajectory dimension differs from plant L")
    if controller is not None and input_fn is not None:
        raise ValueError("give a controller or an input function, not both")
    if plant.domain is TimeDomain.CONTINUOUS:
        if not step > 0:
            raise ValueError("step must be positive")
        times = _time_grid(param_traj.end, step, np.concatenate([param_traj.times, breakpoints]))
    else:
        times = np.arange(0.0, np.floor(param_traj.end) + 1.0)
    starts = times[:-1]
    seg = param_traj.segment_at(starts)
    gains = None
    mats = np.array([plant.A(v) for v in param_traj.values])
    if controller is not None:
        gains = np.array([schedule_gain(controller, v) for v in param_traj.values])
        mats = mats + plant.B @ gains
    u_open = np.zeros((len(times), plant.m))
    if input_fn is not None:
        u_open = np.array([np.asarray(input_fn(t), dtype=float).reshape(plant.m) for t in times])
    w = np.zeros((len(times), plant.n))
    if disturbance is not None:
        w = np.array([np.asarray(disturbance(t), dtype=float).reshape(plant.n) for t in times])
    g = u_open[:-1] @ plant.B.T + w[:-1]

    with np.errstate(over="ignore", invalid="ignore"):
        if plant.domain is TimeDomain.CONTINUOUS:
            x = kernels.rk4_affine(x0, mats, seg, np.diff(times), g, use_numba=use_numba)
        else:
            x = kernels.affine_recursion(x0, mats, seg, g, use_numba=use_numba)
    if not np.all(np.isfinite(x)):
        bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
        raise SimulationDiverged(f"state became non-finite at t = {times[bad]:g}")
    seg_all = param_traj.segment_at(times)
    if gains is not None:
        u = np.einsum("kij,kj->ki", gains[seg_all], x)
    else:
        u = u_open
    return StateTrajectory(times, x, u, w, param_traj.values[seg_all])
