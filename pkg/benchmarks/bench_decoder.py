"""Time the compiled and pure-Python exact decoders on growing client counts.

    python benchmarks/bench_decoder.py [--repeat 3] [--max-clients 18]
"""

import argparse
import time

import numpy as np

from fedscore.fedgt import decode
from fedscore.fedgt.decode import ChannelModel, decode_marginals
from fedscore.fedgt.matrix import build_assignment


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--max-clients", type=int, default=18)
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if decode.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled decoder unavailable; timing the Python backend only")
    ch = ChannelModel(0.05, 0.3)
    rng = np.random.default_rng(0)
    print(f"{'N':>3} {'L':>3} " + " ".join(f"{b + ' ms':>12}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for N in range(6, args.max_clients + 1, 3):
        L = max(3, N // 2 - 1)
        A = build_assignment(N, L, max(2, N // 3), seed=N)
        t = rng.integers(0, 2, L)
        ms = [1e3 * best_of(lambda b=b: decode_marginals(t, A, ch, backend=b), args.repeat) for b in backends]
        line = f"{N:>3} {L:>3} " + " ".join(f"{m:>12.2f}" for m in ms)
        if len(ms) > 1:
            line += f"   {ms[0] / ms[1]:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
