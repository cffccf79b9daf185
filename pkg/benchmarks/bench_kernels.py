"""Time the compiled kernels against their pure-Python twins.

Run ``python benchmarks/bench_kernels.py`` after building the extension.
Both backends receive identical inputs and must produce identical outputs;
the script checks that before reporting speedups.
"""

import argparse
import timeit

import numpy as np

from tgcap.kernels import python_backend

try:
    from tgcap import _kernels as compiled
except ImportError:  # pragma: no cover - depends on the build
    compiled = None


def gibbs_inputs(n_docs, doc_len, V, K, seed=0):
    rng = np.random.default_rng(seed)
    docs = np.repeat(np.arange(n_docs), doc_len).astype(np.int32)
    words = rng.integers(V, size=docs.size).astype(np.int32)
    z = rng.integers(K, size=docs.size).astype(np.int32)
    nkw = np.zeros((K, V), dtype=np.int64)
    ndk = np.zeros((n_docs, K), dtype=np.int64)
    np.add.at(nkw, (z, words), 1)
    np.add.at(ndk, (docs, z), 1)
    return words, docs, z, nkw, nkw.sum(axis=1), ndk, rng.random(docs.size)


def run_gibbs(impl, state):
    words, docs, z, nkw, nk, ndk, u = (np.array(a, copy=True) for a in state)
    impl.gibbs_sweep(words, docs, z, nkw, nk, ndk, 0.1, 0.01, u)
    return z


def infer_inputs(n_words, V, K, seed=0):
    rng = np.random.default_rng(seed)
    words = rng.integers(V, size=n_words).astype(np.int32)
    z = rng.integers(K, size=n_words).astype(np.int32)
    return words, z, np.bincount(z, minlength=K).astype(np.int64), rng.dirichlet(np.ones(V), size=K), rng.random(n_words)


def run_infer(impl, state):
    words, z, ndk, phi, u = (np.array(a, copy=True) for a in state)
    impl.infer_sweep(words, z, ndk, phi, 0.1, u)
    return z


def lcs_inputs(n_pairs, length, seed=0):
    rng = np.random.default_rng(seed)
    return [(rng.integers(20, size=length).astype(np.int64), rng.integers(20, size=length).astype(np.int64))
            for _ in range(n_pairs)]


def run_lcs(impl, pairs):
    return [int(impl.lcs_length(a, b)) for a, b in pairs]


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--scale", type=float, default=1.0, help="multiply every workload size")
    args = parser.parse_args(argv)
    if compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    s = args.scale
    cases = [
        ("gibbs_sweep", run_gibbs, gibbs_inputs(int(400 * s), 20, 300, 8),
         f"{int(400 * s) * 20} tokens, K=8"),
        ("infer_sweep", run_infer, infer_inputs(int(5000 * s), 300, 8), f"{int(5000 * s)} tokens, K=8"),
        ("lcs_length", run_lcs, lcs_inputs(int(500 * s), 16), f"{int(500 * s)} pairs of length 16"),
    ]
    print(f"{'kernel':<12} {'workload':<26} {'python s':>10} {'compiled s':>11} {'speedup':>8}")
    for name, runner, state, label in cases:
        a, b = runner(python_backend, state), runner(compiled, state)
        if not all(np.array_equal(x, y) for x, y in zip(np.atleast_1d(a), np.atleast_1d(b))):
            raise SystemExit(f"{name}: backends disagree")
        t_py = best_time(lambda: runner(python_backend, state), args.repeat)
        t_c = best_time(lambda: runner(compiled, state), args.repeat)
        print(f"{name:<12} {label:<26} {t_py:>10.4f} {t_c:>11.5f} {t_py / t_c:>7.0f}x")


if __name__ == "__main__":
    main()
