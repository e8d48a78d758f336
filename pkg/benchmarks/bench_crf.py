"""Time the compiled CRF kernels against the numpy fallback.

    python3 benchmarks/bench_crf.py [--lengths 10 40 160] [--repeat 200]

Both backends run the same random instances; results are checked for
agreement before timings are printed.
"""

import argparse
import timeit

import numpy as np

from slavner import crf
from slavner.corpus import CATEGORIES

LABELS = ["O"] + [f"{p}-{c}" for c in CATEGORIES for p in "BI"]


def instance(T, seed=0):
    rng = np.random.default_rng(seed)
    params = crf.CrfParams.init_uniform(LABELS, seed=seed, scale=1.0, constrained=True)
    em = rng.normal(0, 3, (T, len(LABELS)))
    tags = list(rng.integers(0, len(LABELS), T))
    return em, tags, params


def ops(em, tags, params):
    return {
        "log_partition": lambda: crf.log_partition(em, params),
        "nll_and_grad": lambda: crf.nll_and_grad(em, tags, params),
        "viterbi": lambda: crf.viterbi(em, params),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", type=int, nargs="+", default=[10, 40, 160])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)

    backends = crf.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'T':>5} {'op':<14}" + "".join(f"{b + ' us':>14}" for b in backends) + f"{'speedup':>10}")
    for T in args.lengths:
        em, tags, params = instance(T)
        results, times = {}, {}
        for b in backends:
            crf.set_backend(b)
            results[b] = (crf.log_partition(em, params), crf.viterbi(em, params)[0])
            for name, fn in ops(em, tags, params).items():
                best = min(timeit.repeat(fn, number=args.repeat, repeat=3)) / args.repeat
                times[(b, name)] = best * 1e6
        if len(backends) == 2:
            a, c = results["python"], results["cython"]
            assert np.isclose(a[0], c[0], rtol=1e-12) and a[1] == c[1], "backends disagree"
        for name in ("log_partition", "nll_and_grad", "viterbi"):
            row = "".join(f"{times[(b, name)]:>14.1f}" for b in backends)
            ratio = times[("python", name)] / times[("cython", name)] if len(backends) == 2 else float("nan")
            print(f"{T:>5} {name:<14}{row}{ratio:>9.1f}x")
    crf.set_backend("auto")


if __name__ == "__main__":
    main()
