"""Time the compiled and numpy kernel backends, per kernel and for one training epoch.

    python3 benchmarks/bench_kernels.py [--repeat N] [--epoch-points N]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from walkback import kernels

EPOCH_SCRIPT = """
import json, sys, time
import numpy as np
from walkback import data, kernels, operators, training
n = int(sys.argv[1])
rng = np.random.default_rng(0)
pts = data.gen_swiss_roll(n, 0.5, rng).points
op = operators.GaussianOperator.create(2, (64, 64), n_steps=11, rng=np.random.default_rng(1))
cfg = training.TrainConfig(N1=5, tmax=64.0, max_epochs=1, batch_size=100, seed=0)
t = time.perf_counter()
training.train(op, pts, pts[:100], cfg)
print(json.dumps({"backend": kernels.BACKEND, "seconds": time.perf_counter() - t}))
"""


def kernel_cases(rng):
    """``name -> (args builder)``; builders return fresh arrays for in-place kernels."""
    B, n_in, n_out = 256, 64, 64
    W = rng.normal(size=(n_out, n_in))
    b = rng.normal(size=n_out)
    x = rng.normal(size=(B, n_in))
    gain = rng.uniform(0.5, 1.5, n_out)
    shift = rng.normal(size=n_out)
    z, u, a = kernels._kernels_py.dense_forward(W, b, x, gain, shift, kernels.TANH)
    da = rng.normal(size=(B, n_out))
    mu = rng.normal(size=(B, 2))
    std = rng.uniform(0.1, 1.0, (B, 2))
    y = rng.normal(size=(B, 2))
    logA = np.log(rng.dirichlet(np.ones(4), size=(8, 4)))
    cum = np.cumsum(rng.dirichlet(np.ones(6), size=6), axis=1)
    start = rng.integers(0, 6, 512)
    unif = rng.random((512, 200))
    return {
        "dense_forward": lambda: (W, b, x, gain, shift, kernels.TANH),
        "dense_backward": lambda: (W, x, z, u, a, gain, da, kernels.TANH, np.zeros_like(W),
                                   np.zeros_like(b), np.zeros_like(gain), np.zeros_like(shift)),
        "gaussian_logpdf": lambda: (y, mu, std),
        "gaussian_logpdf_grad": lambda: (y, mu, std),
        "path_sums": lambda: (logA, 0),
        "categorical_walk": lambda: (cum, start, unif),
    }


def time_kernels(repeat):
    cases = kernel_cases(np.random.default_rng(0))
    rows = []
    for name in kernels.KERNEL_NAMES:
        row = {"kernel": name}
        for backend, module in kernels.backends().items():
            fn = getattr(module, name)
            args = cases[name]()
            number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
            best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number
            row[backend] = best
        rows.append(row)
    return rows


def time_epoch(n_points, pure):
    env = dict(os.environ)
    env["WALKBACK_PURE_PYTHON"] = "1" if pure else ""
    out = subprocess.run([sys.executable, "-c", EPOCH_SCRIPT, str(n_points)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--epoch-points", type=int, default=2000)
    args = parser.parse_args(argv)

    rows = time_kernels(args.repeat)
    names = list(kernels.backends())
    print(f"{'kernel':<22}" + "".join(f"{n:>14}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for row in rows:
        line = f"{row['kernel']:<22}" + "".join(f"{row[n] * 1e6:>12.1f}us" for n in names)
        if "cython" in row:
            line += f"   {row['python'] / row['cython']:>6.2f}x"
        print(line)

    results = [time_epoch(args.epoch_points, pure=True)]
    if kernels.compiled is not None:
        results.append(time_epoch(args.epoch_points, pure=False))
    print(f"\none training epoch on {args.epoch_points} points:")
    for r in results:
        print(f"  {r['backend']:<8} {r['seconds']:.2f} s")


if __name__ == "__main__":
    main()
