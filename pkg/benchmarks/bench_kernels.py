"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5] [--fit]

Each kernel is timed on representative shapes (best of ``--repeats``), and
with ``--fit`` a full SPTPR fit (L=1000, 300 inducing points, 20 epochs) is
timed under each backend as well.
"""
import argparse
import time

import numpy as np

from snlink import _backend, _fallback


def best_of(fn, repeats):
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    L, le, n_mc = 1000, 300, 8
    x, z = rng.normal(size=L), rng.normal(size=le)
    alpha, q = rng.normal(size=le), rng.normal(size=(le, le))
    q = q @ q.T
    mu, sd = rng.normal(size=L), np.abs(rng.normal(size=L)) + 0.1
    eps, y = rng.normal(size=(L, n_mc)), rng.normal(size=L)
    kxz = _fallback.se_cross(x, z, 1.3, 0.7)
    d2 = (x[:, None] - z[None, :]) ** 2
    a = rng.normal(size=(L, le))
    cmat = rng.normal(size=(L, le))
    w = rng.normal(size=L)
    g_mu = rng.normal(size=L)
    gain = rng.normal(-80, 10, size=(20, 20, 4))
    mask = rng.uniform(size=(20, 20)) < 0.3
    return {
        "se_cross": lambda k: k.se_cross(x, z, 1.3, 0.7),
        "se_predict": lambda k: k.se_predict(x, z, alpha, q, 1.3, 0.7),
        "student_t_mc_terms": lambda k: k.student_t_mc_terms(y, mu, sd, eps, 3.0, 0.5),
        "se_grad_contract": lambda k: k.se_grad_contract(g_mu, alpha, w, cmat, a, kxz, d2),
        "aggregate_power_dbm": lambda k: k.aggregate_power_dbm(gain, 0.0, mask, -200.0),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--fit", action="store_true", help="also time a full SPTPR fit per backend")
    args = parser.parse_args()

    if "cython" not in _backend.available():
        print("compiled kernels not built; only the fallback can be timed")
    backends = _backend.available()
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'kernel':<22}" + "".join(f"{b + ' [ms]':>16}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for b in backends:
            _backend.use_backend(b)
            times[b] = best_of(lambda: fn(_backend.kernels), args.repeats)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<22}" + "".join(f"{1e3 * times[b]:>16.3f}" for b in backends) + f"{speed:>10.2f}")

    if args.fit:
        from snlink.sptpr import TrainingSet, fit_sptpr

        x = rng.normal(-70, 8, size=1000)
        data = TrainingSet(x, 0.8 * x + rng.standard_t(3, size=1000))
        for b in backends:
            _backend.use_backend(b)
            t = best_of(lambda: fit_sptpr(data, 300, epochs=20, lr=0.01, learn_nu=False), 1)
            print(f"fit_sptpr L=1000 L_E=300 20 epochs [{b}]: {t:.2f} s")
    _backend.use_backend(backends[-1])


if __name__ == "__main__":
    main()
