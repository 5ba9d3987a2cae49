"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 200] [--skip-train]

Kernel timings run in-process (both variants are always importable).  The
end-to-end training step is timed in two subprocesses, one with
EDITLOOP_DISABLE_NUMBA=1, since the switch is read at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from editloop import kernels as K

TRAIN_SNIPPET = """
import time
import numpy as np
from editloop import model as M
from editloop.tasks import Task, TaskParams, generate
from editloop.trace import Method, Mode
from editloop.training import train

p = TaskParams(Task.AES, n=10, l=4, d=400, seed=0)
ds = generate(p)
hp = M.DESK_PROFILE.with_(max_epochs=1)
train(p, ds, hp, Method.RECURRENCE, Mode.ONLINE, eval_test=False)  # warm-up / jit
t0 = time.perf_counter()
train(p, ds, hp.with_(max_epochs=3), Method.RECURRENCE, Mode.ONLINE, eval_test=False)
print(time.perf_counter() - t0)
"""


def bench(fn, repeat):
    fn()  # compile
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(rng):
    a = rng.integers(0, 20, size=24).astype(np.int64)
    b = rng.integers(0, 20, size=22).astype(np.int64)
    B, H = 64, 64
    z = rng.normal(size=(B, 4 * H)).astype(np.float32)
    c_prev = rng.normal(size=(B, H)).astype(np.float32)
    gates, _, tanh_c, _ = K.lstm_forward_numpy(z, c_prev)
    dh = rng.normal(size=(B, H)).astype(np.float32)
    dc = rng.normal(size=(B, H)).astype(np.float32)
    return [
        ("edit_table 24x22", lambda: K.edit_table_numpy(a, b), lambda: K.edit_table_numba(a, b)),
        ("lstm_forward B64 H64", lambda: K.lstm_forward_numpy(z, c_prev), lambda: K.lstm_forward_numba(z, c_prev)),
        ("lstm_backward B64 H64", lambda: K.lstm_backward_numpy(dh, dc, gates, c_prev, tanh_c),
         lambda: K.lstm_backward_numba(dh, dc, gates, c_prev, tanh_c)),
    ]


def train_seconds(disable):
    env = dict(os.environ)
    env["EDITLOOP_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args(argv)

    print(f"numba available: {K.numba is not None}, svml: {K.HAVE_SVML}")
    print(f"{'kernel':<24}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, f_np, f_nb in kernel_cases(np.random.default_rng(0)):
        t_np, t_nb = bench(f_np, args.repeat), bench(f_nb, args.repeat)
        print(f"{name:<24}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.2f}x")

    if not args.skip_train:
        t_np, t_nb = train_seconds(True), train_seconds(False)
        print(f"{'train 3 epochs (s)':<24}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
