"""Inner loops for simulation and Monte-Carlo estimation.

Each kernel has a numba path and a numpy path with identical signatures.
``rk4_affine``, ``affine_recursion`` and ``output_energy`` dispatch on
:data:`lpvqmi._accel.USE_NUMBA`. The two paths agree to rounding error; the
numpy path is vectorised over trials where the recursion allows it.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


def _matvec_into(out, A, x, g):
    # out = A @ x + g without temporaries; matrices here are a few states wide.
    for i in range(A.shape[0]):
        acc = g[i]
        for j in range(A.shape[1]):
            acc += A[i, j] * x[j]
        out[i] = acc


def _rk4_affine_loop(x0, mats, seg, h, g):
    n = x0.shape[0]
    nsteps = seg.shape[0]
    out = np.empty((nsteps + 1, n))
    out[0] = x0
    x = x0.copy()
    k1, k2, k3, k4, y = np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n)
    for k in range(nsteps):
        A = mats[seg[k]]
        hk = h[k]
        gk = g[k]
        _matvec_into(k1, A, x, gk)
        for i in range(n):
            y[i] = x[i] + 0.5 * hk * k1[i]
        _matvec_into(k2, A, y, gk)
        for i in range(n):
            y[i] = x[i] + 0.5 * hk * k2[i]
        _matvec_into(k3, A, y, gk)
        for i in range(n):
            y[i] = x[i] + hk * k3[i]
        _matvec_into(k4, A, y, gk)
        for i in range(n):
            x[i] += (hk / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        out[k + 1] = x
    return out


def _affine_recursion_loop(x0, mats, seg, g):
    n = x0.shape[0]
    nsteps = seg.shape[0]
    out = np.empty((nsteps + 1, n))
    out[0] = x0
    for k in range(nsteps):
        _matvec_into(out[k + 1], mats[seg[k]], out[k], g[k])
    return out


def _output_energy_loop(mats, seg, G, Cs, noise, burn_in):
    ntrials = noise.shape[0]
    nsteps = noise.shape[1]
    n = mats.shape[1]
    r = Cs.shape[1]
    out = np.zeros(ntrials)
    count = nsteps - burn_in
    x = np.empty(n)
    y = np.empty(n)
    drive = np.empty(n)
    zero_n = np.zeros(n)
    zero_r = np.zeros(r)
    z = np.empty(r)
    for i in range(ntrials):
        x[:] = 0.0
        acc = 0.0
        for k in range(1, nsteps + 1):
            _matvec_into(drive, G, noise[i, k - 1], zero_n)
            _matvec_into(y, mats[seg[k - 1]], x, drive)
            x[:] = y
            if k > burn_in:
                _matvec_into(z, Cs[seg[k]], x, zero_r)
                for j in range(r):
                    acc += z[j] * z[j]
        out[i] = acc / count
    return out


_matvec_into = njit(_matvec_into)
_rk4_affine_numba = njit(_rk4_affine_loop)
_affine_recursion_numba = njit(_affine_recursion_loop)
_output_energy_numba = njit(_output_energy_loop)


def _rk4_affine_numpy(x0, mats, seg, h, g):
    # RK4 on a constant-coefficient affine field is the affine map
    # x+ = T4(hA) x + h T3(hA) g with truncated exponential series T4, T3.
    n = x0.shape[0]
    hA = h[:, None, None] * mats[seg]
    eye = np.eye(n)
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    prop = eye + hA + hA2 / 2.0 + hA3 / 6.0 + hA3 @ hA / 24.0
    gain = h[:, None, None] * (eye + hA / 2.0 + hA2 / 6.0 + hA3 / 24.0)
    drive = np.einsum("kij,kj->ki", gain, g)
    out = np.empty((seg.shape[0] + 1, n))
    out[0] = x0
    x = np.array(x0, dtype=float)
    for k in range(seg.shape[0]):
        x = prop[k] @ x + drive[k]
        out[k + 1] = x
    return out


def _affine_recursion_numpy(x0, mats, seg, g):
    out = np.empty((seg.shape[0] + 1, x0.shape[0]))
    out[0] = x0
    x = np.array(x0, dtype=float)
    for k in range(seg.shape[0]):
        x = mats[seg[k]] @ x + g[k]
        out[k + 1] = x
    return out


def _output_energy_numpy(mats, seg, G, Cs, noise, burn_in):
    ntrials, nsteps, _ = noise.shape
    X = np.zeros((ntrials, mats.shape[1]))
    acc = np.zeros(ntrials)
    drive = noise @ G.T
    for k in range(1, nsteps + 1):
        X = X @ mats[seg[k - 1]].T + drive[:, k - 1]
        if k > burn_in:
            Z = X @ Cs[seg[k]].T
            acc += np.einsum("ij,ij->i", Z, Z)
    return acc / (nsteps - burn_in)


def rk4_affine(x0, mats, seg, h, g, use_numba=None):
    """Classical RK4 for ``x' = mats[seg[k]] @ x + g[k]`` over steps ``h[k]``.

    Returns the ``(len(seg) + 1, n)`` array of states, starting with ``x0``.
    """
    x0, mats = _as_float(x0, mats)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    h = np.ascontiguousarray(h, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    if _pick(use_numba):
        return _rk4_affine_numba(x0, mats, seg, h, g)
    return _rk4_affine_numpy(x0, mats, seg, h, g)


def affine_recursion(x0, mats, seg, g, use_numba=None):
    """Iterate ``x[k+1] = mats[seg[k]] @ x[k] + g[k]``."""
    x0, mats = _as_float(x0, mats)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    g = np.ascontiguousarray(g, dtype=float)
    if _pick(use_numba):
        return _affine_recursion_numba(x0, mats, seg, g)
    return _affine_recursion_numpy(x0, mats, seg, g)


def output_energy(mats, seg, G, Cs, noise, burn_in=0, use_numba=None):
    """Time-averaged output energy per noise trial.

    Runs ``x[k] = mats[seg[k-1]] @ x[k-1] + G @ noise[:, k-1]`` from
    ``x[0] = 0`` and averages ``|Cs[seg[k]] @ x[k]|^2`` over
    ``k = burn_in + 1 .. N``. ``seg`` has ``N + 1`` entries.
    """
    mats = np.ascontiguousarray(mats, dtype=float)
    G = np.ascontiguousarray(G, dtype=float)
    Cs = np.ascontiguousarray(Cs, dtype=float)
    noise = np.ascontiguousarray(noise, dtype=float)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    if not 0 <= burn_in < noise.shape[1]:
        raise ValueError("burn_in must lie in [0, horizon)")
    if seg.shape[0] != noise.shape[1] + 1:
        raise ValueError("seg needs one entry per time point (horizon + 1)")
    if _pick(use_numba):
        return _output_energy_numba(mats, seg, G, Cs, noise, int(burn_in))
    return _output_energy_numpy(mats, seg, G, Cs, noise, int(burn_in))


def _pick(use_numba):
    if use_numba is None:
        return USE_NUMBA
    return bool(use_numba) and USE_NUMBA


def _as_float(x0, mats):
    return (np.ascontiguousarray(x0, dtype=float),
            np.ascontiguousarray(mats, dtype=float))
