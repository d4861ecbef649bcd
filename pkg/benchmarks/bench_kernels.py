"""Time the numba and numpy variants of each sequential kernel.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each numba kernel is called once before timing so compilation is excluded.
Outputs of both variants are compared; a mismatch is reported next to the
timing line.
"""
import argparse
import time

import numpy as np

from lstdkit import _kernels as K
from lstdkit.estimators import _td_window, design_system, td_step_size
from lstdkit.instances import random_instance, terminating_chain


def best_of(fn, args, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b, name):
    if name == "td_expected":
        # summation order differs, so the two loops may stop a few iterations apart
        return np.allclose(a[0], b[0], rtol=1e-8, atol=1e-10) and a[2] == b[2]
    if isinstance(a, tuple):
        return all(same(x, y, name) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-12)
    return a == b


def cases(scale):
    rng = np.random.default_rng(0)
    inst = random_instance(rng, 8, 4, gamma=0.99)
    cum = K.cumulative_rows(inst.mrp.transition)
    n = int(200_000 * scale)
    u = rng.random(n)
    states = K.walk_chain_numpy(cum, 0, u[:-1])

    emrp, _ = terminating_chain()
    cum_t = K.cumulative_rows(emrp.transition_t)
    n_eps = int(20_000 * scale)

    s = design_system(inst.mrp, inst.fmap, inst.xi)
    a, b = np.ascontiguousarray(s.cross), np.ascontiguousarray(s.moment)
    alpha, rate = td_step_size(a)
    tol = 1e-10
    window, gain = _td_window(rate, 100, 2_000_000)
    phi = inst.phi[states]
    x, y = np.ascontiguousarray(phi[:-1]), np.ascontiguousarray(phi[1:])
    r = inst.mrp.mean_reward[states[:-1]]

    return [
        ("walk_chain", (cum, 0, u)),
        ("draw_successors", (cum, states, u)),
        ("walk_episodes", (cum_t, 0, rng.random(n_eps * 8), n_eps)),
        ("td_expected", (a, b, np.zeros(4), alpha, 2_000_000, tol * (1 - rate) / rate, 100,
                         window, gain, tol, 5, 1e3)),
        ("td_sample", (x, y, r, 0.99, np.zeros(4), 1.0, 10.0)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()

    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy path can be timed")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}  agree")
    for name, kargs in cases(args.scale):
        t_np, out_np = best_of(getattr(K, f"{name}_numpy"), kargs, args.repeat)
        if not K.HAVE_NUMBA:
            print(f"{name:<16}{t_np * 1e3:>12.2f}{'-':>12}{'-':>10}")
            continue
        fn = getattr(K, f"{name}_numba")
        fn(*kargs)  # compile
        t_nb, out_nb = best_of(fn, kargs, args.repeat)
        print(f"{name:<16}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}"
              f"{t_np / t_nb:>9.1f}x  {same(out_np, out_nb, name)}")


if __name__ == "__main__":
    main()
