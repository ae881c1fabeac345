"""Time the compiled kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because ``MABSGD_DISABLE_NUMBA`` is read
at import time. Both runs consume the same seeded stream, so the final iterates
agree up to floating-point rounding (the compiled loop may fuse multiply-adds);
the last column shows their largest relative difference.

    python benchmarks/bench_backends.py [--n 2000] [--T 20000] [--repeats 3]
"""

import argparse
import json
import os
import subprocess
import sys

import numpy as np

CHILD = r"""
import json, sys, time
import numpy as np
from mabsgd import _accel
from mabsgd.data_io import SyntheticConfig, generate_synthetic
from mabsgd.model import ProblemSpec
from mabsgd.optimize import run

n, T, repeats = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
data = generate_synthetic(SyntheticConfig(n=n, d=20, seed=0, scale_c=5.0))
spec = ProblemSpec("ridge")
out = {"backend": _accel.default_backend(), "cases": {}}
for method in ("sgd", "saga"):
    for sampler in ("uniform", "mabs"):
        # first call pays compilation (or cache load); keep it out of the timing
        run(spec, data, method, sampler, 1e-4, T=10, seed=0)
        times = []
        for r in range(repeats):
            t0 = time.perf_counter()
            tr = run(spec, data, method, sampler, 1e-4, T=T, seed=r, stride=T)
            times.append(time.perf_counter() - t0)
        out["cases"][f"{method}/{sampler}"] = {"best_s": min(times), "final_w": tr.final_w.tolist()}
print(json.dumps(out))
"""


def measure(disable, n, T, repeats):
    env = dict(os.environ)
    env.pop("MABSGD_DISABLE_NUMBA", None)
    if disable:
        env["MABSGD_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", CHILD, str(n), str(T), str(repeats)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--T", type=int, default=20000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    fast = measure(False, args.n, args.T, args.repeats)
    slow = measure(True, args.n, args.T, args.repeats)
    print(f"n={args.n} T={args.T} best of {args.repeats}")
    print(f"{'case':<16}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}{'max rel diff':>14}")
    for case, a in fast["cases"].items():
        b = slow["cases"][case]
        wa, wb = np.asarray(a["final_w"]), np.asarray(b["final_w"])
        diff = float(np.max(np.abs(wa - wb) / np.maximum(np.abs(wa), 1e-300)))
        print(f"{case:<16}{a['best_s']:>11.4f}s{b['best_s']:>11.4f}s"
              f"{b['best_s'] / a['best_s']:>9.1f}x{diff:>14.1e}")
        if diff > 1e-10:
            sys.exit(f"backends disagree on {case}")


if __name__ == "__main__":
    main()
