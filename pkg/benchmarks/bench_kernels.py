"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Kernel timings call both implementations directly.  The end-to-end
training timing runs a subprocess per backend because the backend is
fixed at import time by MONOPLANT_JIT.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from monoplant import _accel

TRAIN_SNIPPET = """
import time
from monoplant.simulator import PlantConfig, generate_dataset, chiller_xy
from monoplant.features import build_chiller_model
from monoplant.losses import train, TrainConfig
X, y = chiller_xy(generate_dataset(PlantConfig(), "uniform", 500, seed=1))
m = build_chiller_model("hard-mnn", 0)
train(m, X, y, None, TrainConfig(epochs=2))
t = time.perf_counter()
train(build_chiller_model("hard-mnn", 0), X, y, None, TrainConfig(epochs=20))
print(time.perf_counter() - t)
"""


def best(fn, repeat):
    fn()  # warm-up (compiles the numba path)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba is not importable; nothing to compare")
        return 0

    rng = np.random.default_rng(0)
    rows = []
    for n in (10_000, 1_000_000):
        z = rng.normal(0, 3, n)
        t_np = best(lambda: _accel.ptrelu_np(z, 4.0, 1.0), args.repeat)
        t_nb = best(lambda: _accel._ptrelu_flat(z, 4.0, 1.0), args.repeat)
        rows.append((f"ptrelu n={n}", t_np, t_nb))
        t_np = best(lambda: _accel.ptrelu_grad_np(z, 4.0, 1.0), args.repeat)
        t_nb = best(lambda: _accel._ptrelu_grad_flat(z, 4.0, 1.0), args.repeat)
        rows.append((f"ptrelu_grad n={n}", t_np, t_nb))

    r = rng.uniform(0.6, 1.0, 200)
    y = 22.0 * r ** 3 + rng.normal(0, 0.1, r.size)
    args_gd = (r, y, 22.0, 0.0, np.zeros(4), 1e-3, 0.9, 20_000, 0.0)
    t_np = best(lambda: _accel.gd_cubic_np(*args_gd), max(1, args.repeat // 2))
    t_nb = best(lambda: _accel.gd_cubic_nb(*args_gd), args.repeat)
    rows.append(("gd_cubic 20k iters", t_np, t_nb))

    if not args.skip_train:
        times = {}
        for flag in ("0", "1"):
            env = dict(os.environ, MONOPLANT_JIT=flag)
            out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                                 capture_output=True, text=True, check=True)
            times[flag] = float(out.stdout.strip().splitlines()[-1])
        rows.append(("train 20 epochs (hard-mnn)", times["0"], times["1"]))

    print(f"{'kernel':32s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for name, a, b in rows:
        print(f"{name:32s} {a:10.5f} {b:10.5f} {a / b:8.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
