"""Time the numba and numpy paths of the simulation kernels.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--trials N]

The Monte-Carlo row is end to end; most of its time goes to computing
scheduling coordinates per parameter segment, which both paths share.
Set LPVQMI_DISABLE_NUMBA=1 to confirm the fallback runs alone (numba rows are
then skipped).
"""
import argparse
import time

import numpy as np

from lpvqmi import builtin, kernels
from lpvqmi._accel import USE_NUMBA
from lpvqmi.lpv import GainScheduledController, LpvaPlant, ParamPolytope, sample_param_trajectory
from lpvqmi.synthesis import PerformanceSpec
from lpvqmi.verification import estimate_h2_monte_carlo


def best_of(fn, repeats):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(trials):
    rng = np.random.default_rng(0)
    n, nmats, nsteps = 2, 60, 3000
    mats = 0.3 * rng.standard_normal((nmats, n, n)) - np.eye(n)
    seg = np.sort(rng.integers(0, nmats, nsteps))
    h = np.full(nsteps, 0.001)
    g = rng.standard_normal((nsteps, n))
    x0 = np.ones(n)
    dmats = 0.5 * rng.standard_normal((30, n, n))
    noise = rng.standard_normal((trials, 200, n))
    dseg = rng.integers(0, 30, 201)
    Cs = rng.standard_normal((30, 4, n))
    return {
        "rk4_affine (3000 steps)": lambda u: kernels.rk4_affine(x0, mats, seg, h, g, use_numba=u),
        "affine_recursion (3000 steps)": lambda u: kernels.affine_recursion(x0, dmats, seg % 30, g,
                                                                            use_numba=u),
        f"output_energy ({trials} trials x 200)": lambda u: kernels.output_energy(
            dmats, dseg, np.eye(n), Cs, noise, 50, use_numba=u),
    }


def h2_case(trials):
    poly = ParamPolytope(builtin.TWO_STATE_VERTICES)
    plant = LpvaPlant(builtin.TWO_STATE_A, builtin.TWO_STATE_B, "discrete")
    ctrl = GainScheduledController(builtin.REFERENCE_DT_GAINS, poly, builtin.REFERENCE_DT_P)
    perf = PerformanceSpec(*builtin.two_state_h2_spec())
    return lambda u: estimate_h2_monte_carlo(plant, ctrl, perf, 5, trials, 200, 0, use_numba=u)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--trials", type=int, default=200)
    args = parser.parse_args()
    rows = dict(cases(args.trials))
    rows[f"H2 Monte-Carlo (5 paths x {args.trials} trials)"] = h2_case(args.trials)
    print(f"numba available and enabled: {USE_NUMBA}")
    print(f"{'kernel':42s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speed-up':>9s}")
    for name, fn in rows.items():
        t_np = best_of(lambda: fn(False), args.repeats)
        if USE_NUMBA:
            t_nb = best_of(lambda: fn(True), args.repeats)
            print(f"{name:42s} {t_np * 1e3:11.2f} {t_nb * 1e3:11.2f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:42s} {t_np * 1e3:11.2f} {'-':>11s} {'-':>9s}")


if __name__ == "__main__":
    main()
