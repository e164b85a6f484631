"""Dense primal-dual interior-point solver for block-diagonal LMIs.

Standard form used internally (decision ``x``, ``nv`` scalars)::

    minimise  c @ x
    s.t.      S_j = C_j + sum_k x[idx_j[k]] F_j[k]  ⪰ 0     (dense blocks)
              s   = a + G @ x                       >= 0     (linear rows)

The dual is ``max -sum <C_j, X_j> - a @ z`` subject to
``sum_j F_j^*(X_j) + G^T z = c``, ``X_j ⪰ 0``, ``z >= 0``. Iterates follow
the HKM search direction with a Mehrotra predictor-corrector, started from
an infeasible point. 1x1 blocks and sign constraints become linear rows.

Feasibility problems are solved by maximising a uniform margin ``t`` with
every block ⪰ t·I and ``t <= 1``. Every decision variable is boxed by
``|x_i| <= var_bound`` in both phases so that homogeneous feasibility
problems (all LMI constants zero) still have a bounded central path.
A run that ends on the box is reported unbounded only when the box rows
carry a real dual price; otherwise the infimum is merely unattained within
the box and the point is returned as feasible with that price in the gap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import linalg

from .problem import Sign, SdpProblem, residual_report

STALL_GAP = 1e-5  # largest relative gap accepted for a stalled but feasible optimisation
BOX_PRICE_TOL = 1e-1  # largest relative box price (about the excess over the unboxed infimum) tolerated


class Status(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and limits.

    Parameters
    ----------
    feas_tol : float
        Accepted negative PSD residual and primal/dual infeasibility.
    gap_tol : float
        Relative duality gap for optimality.
    max_iters : int
        Iteration cap per phase.
    strict_floor : float
        Shift applied to strict blocks and strictly positive scalars.
    var_bound : float
        Box ``|x_i| <= var_bound`` placed on every scalar.
    """

    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    strict_floor: float = 1e-6
    var_bound: float = 1e4

    def __post_init__(self):
        for name in ("feas_tol", "gap_tol", "strict_floor", "var_bound"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SdpSolution:
    status: Status
    decision: np.ndarray
    block_min_eigs: np.ndarray
    objective_value: float
    iterations: int
    margin: Optional[float]
    gap: float = np.nan
    history: list = field(default_factory=list, repr=False)

    @property
    def ok(self):
        return self.status in (Status.OPTIMAL, Status.FEASIBLE)


@dataclass
class _Block:
    C: np.ndarray
    idx: np.ndarray
    F: np.ndarray  # (k, d, d)

    def value(self, x):
        return self.C + np.tensordot(x[self.idx], self.F, axes=1)

    def adjoint(self, X):
        return self.F.reshape(len(self.idx), -1) @ X.reshape(-1)


@dataclass
class _Standard:
    nv: int
    c: np.ndarray
    blocks: list
    G: np.ndarray
    a: np.ndarray
    box_vars: int = 0  # the 2 * box_vars box rows precede ``tail`` trailing rows
    tail: int = 0


def _standard_form(problem: SdpProblem, settings: SolverSettings, margin: bool) -> _Standard:
    n = problem.num_scalars
    nv = n + 1 if margin else n
    t = n  # index of the margin variable when present
    floor = settings.strict_floor
    blocks, rows, rhs = [], [], []

    def lp_row(coef, const):
        r = np.zeros(nv)
        r[: len(coef)] = coef
        if margin:
            r[t] -= 1.0
        rows.append(r)
        rhs.append(const)

    for blk in problem.blocks:
        C = blk.const - (floor * np.eye(blk.dim) if blk.strict else 0.0)
        if blk.dim == 1:
            coef = np.zeros(n)
            coef[blk.index] = blk.coefs[:, 0, 0]
            lp_row(coef, C[0, 0])
            continue
        idx, F = blk.index, blk.coefs
        if margin:
            idx = np.append(idx, t)
            F = np.concatenate([F, -np.eye(blk.dim)[None]])
        blocks.append(_Block(C, idx, F))
    for i, sign in enumerate(problem.scalar_signs):
        if sign is Sign.FREE:
            continue
        e = np.zeros(n)
        e[i] = 1.0
        lp_row(e, -floor if sign is Sign.POSITIVE else 0.0)
    box = np.zeros((2 * n, nv))
    box[np.arange(n), np.arange(n)] = -1.0
    box[n + np.arange(n), np.arange(n)] = 1.0
    G = np.vstack([np.array(rows).reshape(-1, nv), box])
    a = np.concatenate([np.array(rhs, dtype=float), np.full(2 * n, settings.var_bound)])
    if margin:
        cap = np.zeros(nv)
        cap[t] = -1.0
        G = np.vstack([G, cap])
        a = np.append(a, 1.0)
        c = np.zeros(nv)
        c[t] = -1.0
    else:
        c = np.array(problem.objective, dtype=float)
    return _Standard(nv, c, blocks, G, a, n, 1 if margin else 0)


def _max_step(X, dX):
    """Largest ``a`` with ``X + a dX ⪰ 0`` for ``X ≻ 0``."""
    L = np.linalg.cholesky(X)
    W = linalg.solve_triangular(L, dX, lower=True)
    W = linalg.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _is_pd(M):
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass
class _Result:
    x: np.ndarray
    pobj: float
    dobj: float
    pinf: float
    dinf: float
    converged: bool
    iterations: int
    history: list
    box_price: float = 0.0  # var_bound * total dual weight on the box rows

    @property
    def relgap(self):
        return abs(self.pobj - self.dobj) / (1 + abs(self.pobj) + abs(self.dobj))


def _box_price(z, sf: _Standard, settings):
    nbox = 2 * sf.box_vars
    rows = slice(len(z) - nbox - sf.tail, len(z) - sf.tail)
    return float(settings.var_bound * np.sum(z[rows]))


def _ipm(sf: _Standard, settings: SolverSettings, stop=None) -> _Result:
    """Infeasible-start HKM predictor-corrector; ``stop(x, pobj, dobj, pinf)``
    may end the run early (returns True)."""
    nv, c, blocks, G, a = sf.nv, sf.c, sf.blocks, sf.G, sf.a
    dims = [b.C.shape[0] for b in blocks]
    nu = sum(dims) + len(a)
    normc = np.linalg.norm(c)
    normC = np.sqrt(sum(np.sum(b.C ** 2) for b in blocks) + a @ a)

    # Start: scaled identities sized to the data.
    x = np.zeros(nv)
    Xs, Ss = [], []
    for b, d in zip(blocks, dims):
        fn = np.sqrt(np.sum(b.F ** 2, axis=(1, 2)))
        cb = np.abs(c[b.idx])
        eta = max(10.0, np.sqrt(d), np.max(np.sqrt(d) * (1 + cb) / (1 + fn), initial=0.0))
        xi = max(10.0, np.sqrt(d), np.linalg.norm(b.C), np.max(fn, initial=0.0))
        Xs.append(eta * np.eye(d))
        Ss.append(xi * np.eye(d))
    gn = np.linalg.norm(G, axis=1)
    z = np.full(len(a), max(10.0, np.max(np.abs(c), initial=0.0)))
    s = np.maximum(10.0, np.maximum(np.abs(a), gn))

    history = []
    converged = False
    pobj = dobj = pinf = dinf = np.nan
    it = 0
    stalls = 0
    best, best_merit, since_best, best_price = None, np.inf, 0, 0.0
    for it in range(1, settings.max_iters + 1):
        Rd = [S - b.value(x) for b, S in zip(blocks, Ss)]
        rd = s - (a + G @ x)
        rp = c - G.T @ z
        for b, X in zip(blocks, Xs):
            rp[b.idx] -= b.adjoint(X)
        gap = sum(np.sum(X * S) for X, S in zip(Xs, Ss)) + z @ s
        mu = gap / nu
        pobj = c @ x
        dobj = -(sum(np.sum(b.C * X) for b, X in zip(blocks, Xs)) + a @ z)
        pinf = np.linalg.norm(rp) / (1 + normc)
        dinf = np.sqrt(sum(np.sum(R ** 2) for R in Rd) + rd @ rd) / (1 + normC)
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        history.append(dict(iter=it, pobj=pobj, dobj=dobj, pinf=pinf, dinf=dinf, mu=mu))
        if pinf <= settings.feas_tol and dinf <= settings.feas_tol and relgap <= settings.gap_tol:
            converged = True
            break
        if stop is not None and stop(x, pobj, dobj, pinf, dinf):
            break
        # Near the limit of double precision the iterates can wander; keep the
        # best one and give up after a run of iterations without improvement.
        merit = max(pinf, dinf, relgap)
        since_best += 1
        if merit < best_merit:
            if merit < 0.95 * best_merit:
                since_best = 0
            best, best_merit = (x.copy(), pobj, dobj, pinf, dinf), merit
            best_price = _box_price(z, sf, settings)
        if since_best >= 15:
            break

        # Schur complement M dx = rhs.
        try:
            Sinvs = [linalg.cho_solve(linalg.cho_factor(S, lower=True), np.eye(S.shape[0]))
                     for S in Ss]
        except linalg.LinAlgError:
            break
        M = np.zeros((nv, nv))
        for b, X, Si in zip(blocks, Xs, Sinvs):
            k = len(b.idx)
            W = X @ b.F @ Si  # (k, d, d)
            loc = b.F.reshape(k, -1) @ W.transpose(0, 2, 1).reshape(k, -1).T
            M[np.ix_(b.idx, b.idx)] += loc
        M += G.T @ ((z / s)[:, None] * G)
        M = 0.5 * (M + M.T)
        scale = max(1.0, np.max(np.abs(np.diag(M))))
        fac = None
        for reg in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
            try:
                fac = linalg.cho_factor(M + reg * scale * np.eye(nv), lower=True)
                break
            except linalg.LinAlgError:
                continue
        if fac is None:
            break

        def direction(Rcs, rc):
            rhs = -rp.copy()
            for b, X, R, Rc, Si in zip(blocks, Xs, Rd, Rcs, Sinvs):
                rhs[b.idx] += b.adjoint((Rc + X @ R) @ Si)
            rhs += G.T @ ((rc + z * rd) / s)
            dx = linalg.cho_solve(fac, rhs)
            dSs, dXs = [], []
            for b, X, R, Rc, Si in zip(blocks, Xs, Rd, Rcs, Sinvs):
                dS = np.tensordot(dx[b.idx], b.F, axes=1) - R
                dX = (Rc - X @ dS) @ Si
                dSs.append(dS)
                dXs.append(0.5 * (dX + dX.T))
            ds = G @ dx - rd
            dz = (rc - z * ds) / s
            return dx, dXs, dSs, dz, ds

        def steps(dXs, dSs, dz, ds):
            ap = min([_max_step(X, dX) for X, dX in zip(Xs, dXs)] + [_max_step_lp(z, dz)])
            ad = min([_max_step(S, dS) for S, dS in zip(Ss, dSs)] + [_max_step_lp(s, ds)])
            return ap, ad

        try:
            aff = direction([-X @ S for X, S in zip(Xs, Ss)], -z * s)
            ap, ad = steps(aff[1], aff[2], aff[3], aff[4])
            ap, ad = min(1.0, ap), min(1.0, ad)
            gap_aff = sum(np.sum((X + ap * dX) * (S + ad * dS))
                          for X, S, dX, dS in zip(Xs, Ss, aff[1], aff[2]))
            gap_aff += (z + ap * aff[3]) @ (s + ad * aff[4])
            sigma = float(np.clip((gap_aff / gap) ** 3, 0.0, 1.0))
            Rcs = [sigma * mu * np.eye(X.shape[0]) - X @ S - dX @ dS
                   for X, S, dX, dS in zip(Xs, Ss, aff[1], aff[2])]
            rc = sigma * mu - z * s - aff[3] * aff[4]
            dx, dXs, dSs, dz, ds = direction(Rcs, rc)
            ap, ad = steps(dXs, dSs, dz, ds)
        except (np.linalg.LinAlgError, linalg.LinAlgError):
            break
        ap = min(1.0, 0.95 * ap)
        ad = min(1.0, 0.95 * ad)
        history[-1].update(step_primal=ap, step_dual=ad)
        stalls = stalls + 1 if max(ap, ad) < 1e-8 else 0
        if stalls >= 3:
            break

        # ``x`` and ``S`` move with the dual step, ``X`` and ``z`` with the primal one.
        x = x + ad * dx
        Ss = [0.5 * (S + ad * dS + (S + ad * dS).T) for S, dS in zip(Ss, dSs)]
        s = s + ad * ds
        Xs = [0.5 * (X + ap * dX + (X + ap * dX).T) for X, dX in zip(Xs, dXs)]
        z = z + ap * dz
        # Once nearly consistent, snap slacks onto the affine map so the
        # returned x satisfies its constraints exactly rather than up to Rd.
        if dinf < 1e-6:
            Fx = [b.value(x) for b in blocks]
            sx = a + G @ x
            if np.all(sx > 0) and all(_is_pd(0.5 * (F + F.T)) for F in Fx):
                Ss = [0.5 * (F + F.T) for F in Fx]
                s = sx
    if not converged and best is not None and best_merit < max(pinf, dinf, abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))):
        return _Result(*best, False, it, history, best_price)
    return _Result(x, pobj, dobj, pinf, dinf, converged, it, history, _box_price(z, sf, settings))


def _finish(problem, settings, x, status, objective, iterations, margin, gap, history):
    report = residual_report(problem, x, strict_floor=settings.strict_floor)
    if status in (Status.OPTIMAL, Status.FEASIBLE):
        worst_block, worst_sign = report.worst()
        if worst_block < -settings.feas_tol or worst_sign > settings.feas_tol:
            status = Status.NUMERICAL_FAILURE
    return SdpSolution(status, x, report.block_min_eigs, objective, iterations, margin, gap, history)


def _margin_of(problem, settings, x):
    """Uniform slack of ``x`` after strict shifts; sign rows included."""
    rep = residual_report(problem, x, strict_floor=settings.strict_floor)
    shifted = [e - (settings.strict_floor if b.strict else 0.0)
               for e, b in zip(rep.block_min_eigs, problem.blocks)]
    worst = min(shifted, default=np.inf)
    if len(rep.sign_violations):
        worst = min(worst, -float(np.max(rep.sign_violations)))
    return float(worst)


def solve(problem: SdpProblem, settings: SolverSettings = SolverSettings()) -> SdpSolution:
    """Solve ``problem``; deterministic for identical inputs.

    Optimisation problems are attacked directly. Feasibility problems, and
    optimisation problems whose direct solve does not converge, go through
    margin maximisation, which decides feasible / infeasible.
    """
    n = problem.num_scalars
    history = []
    iters = 0
    if not problem.is_feasibility:
        res = _ipm(_standard_form(problem, settings, margin=False), settings)
        history += res.history
        iters += res.iterations
        at_box = np.max(np.abs(res.x), initial=0.0) >= 0.99 * settings.var_bound
        # Relative first-order gain from relaxing the box. A priced box means
        # the objective keeps improving; an unpriced one means the infimum is
        # approached only as some variable grows without bound.
        price = res.box_price / (1 + abs(res.pobj)) if at_box else 0.0
        margin = _margin_of(problem, settings, res.x)
        if res.converged and not at_box:
            return _finish(problem, settings, res.x, Status.OPTIMAL, float(res.pobj), iters,
                           margin, res.relgap, history)
        if res.converged and price > BOX_PRICE_TOL:
            return _finish(problem, settings, res.x, Status.UNBOUNDED, float(res.pobj), iters,
                           margin, res.relgap, history)
        if (res.relgap <= STALL_GAP and price <= BOX_PRICE_TOL
                and margin >= -settings.feas_tol):
            # Verified feasible point short of certified optimality: a stall
            # near gap_tol or an unattained infimum. Report it as feasible
            # together with the achieved gap.
            return _finish(problem, settings, res.x, Status.FEASIBLE, float(res.pobj), iters,
                           margin, max(res.relgap, price), history)

    sf = _standard_form(problem, settings, margin=True)

    def certified_infeasible(x, pobj, dobj, pinf, dinf):
        # -dobj bounds the achievable margin from above once the dual is feasible.
        return pinf <= settings.feas_tol and -dobj < -settings.feas_tol

    res = _ipm(sf, settings, stop=certified_infeasible)
    history += res.history
    iters += res.iterations
    x = res.x[:n]
    t = float(res.x[n])
    gap = abs(res.pobj - res.dobj) / (1 + abs(res.pobj) + abs(res.dobj))
    if certified_infeasible(res.x, res.pobj, res.dobj, res.pinf, res.dinf):
        status = Status.INFEASIBLE
    elif _margin_of(problem, settings, x) >= -settings.feas_tol:
        status = Status.FEASIBLE
    elif res.converged and t < -settings.feas_tol:
        status = Status.INFEASIBLE
    else:
        status = Status.NUMERICAL_FAILURE
    if status is Status.FEASIBLE and not problem.is_feasibility:
        # Direct solve failed but a feasible point exists: report it unoptimised.
        status = Status.NUMERICAL_FAILURE
    obj = 0.0 if problem.is_feasibility else float(problem.objective @ x)
    return _finish(problem, settings, x, status, obj, iters, t, gap, history)
