"""Compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Kernel timings call both implementations directly.  The end-to-end row runs a
recognizer forward/backward pass in a subprocess per backend, since the
backend is picked once at import (``SPEECHCHAIN_KERNELS=python``).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from speechchain.kernels import _py

try:
    from speechchain.kernels import _ext
except ImportError:
    _ext = None

STEP = """
import numpy as np
from speechchain.kernels import BACKEND
from speechchain.losses import asr_loss
from speechchain.numerics import backward, leaves
from speechchain.recognizer import Recognizer, RecognizerConfig
rng = np.random.default_rng(0)
rec = Recognizer.initialize(RecognizerConfig(feature_dim=8, vocab_size=9, layers=3), rng)
feats = rng.normal(size=(120, 8))
toks = [int(t) for t in rng.integers(3, 9, size=12)]
def step():
    p = leaves(rec.params)
    backward(asr_loss(rec, p, feats, toks))
"""


def _cases(rng):
    H, T, n = 32, 60, 40
    pre = rng.normal(size=(T, 4 * H))
    w_hh = 0.1 * rng.normal(size=(H, 4 * H))
    seqs = [rng.integers(0, 6, size=rng.integers(5, 30)) for _ in range(n)]
    flat = np.concatenate(seqs).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in seqs])]).astype(np.int64)

    def lstm_fwd(m):
        return lambda: m.lstm_seq_forward(pre, w_hh, False)

    def lstm_bwd(m):
        hs, cs, acts = m.lstm_seq_forward(pre, w_hh, False)
        dhs = np.ones_like(hs)
        return lambda: m.lstm_seq_backward(dhs, w_hh, hs, cs, acts, False)

    def lev(m):
        return lambda: [m.levenshtein(a, b) for a in seqs[:10] for b in seqs[:10]]

    def table(m):
        return lambda: m.levenshtein_table(flat, offsets, flat, offsets)

    return {
        f"lstm_seq_forward T={T} H={H}": lstm_fwd,
        f"lstm_seq_backward T={T} H={H}": lstm_bwd,
        "levenshtein 100 pairs": lev,
        f"levenshtein_table {n}x{n}": table,
    }


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _end_to_end(backend, repeat):
    code = STEP + f"import timeit\nprint(min(timeit.repeat(step, number=1, repeat={repeat})), BACKEND)\n"
    env = dict(os.environ, SPEECHCHAIN_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    seconds, used = out.stdout.split()
    return float(seconds), used


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ext is None:
        sys.exit("compiled extension not built; run `python3 setup.py build_ext --inplace` first")
    print(f"{'kernel':38s} {'numpy (ms)':>11s} {'compiled (ms)':>14s} {'speedup':>8s}")
    for name, make in _cases(np.random.default_rng(0)).items():
        slow, fast = _best(make(_py), args.repeat), _best(make(_ext), args.repeat)
        print(f"{name:38s} {1e3 * slow:11.3f} {1e3 * fast:14.3f} {slow / fast:7.1f}x")
    slow, _ = _end_to_end("python", args.repeat)
    fast, used = _end_to_end("compiled", args.repeat)
    label = "recognizer loss + backward, 120 frames"
    print(f"{label:38s} {1e3 * slow:11.3f} {1e3 * fast:14.3f} {slow / fast:7.1f}x  ({used})")


if __name__ == "__main__":
    main()
