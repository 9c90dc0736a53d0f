"""Time the compiled and interpreted Metropolis kernels on identical chains.

Each backend runs in its own interpreter (the switch is read at import).
The script checks that both paths return the same samples and prints
the wall time per sweep.

    python3 benchmarks/bench_kernels.py [--sweeps 2000]
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def workloads(sweeps):
    import numpy as np

    from gradgibbs.hamiltonian import soft_clamp
    from gradgibbs.lattice import AffineMap, Box, build_domain, discretize
    from gradgibbs.potential import PotentialSpec
    from gradgibbs.sampler import DenseTarget, metropolis_run, run_dense

    spec = PotentialSpec("gaussian_gradient", 2, 2, patch="forward")
    dom = build_domain(Box.unit(2), 1 / 16, 2)
    L = AffineMap(np.eye(2))
    cs = soft_clamp(dom, L, spec.R0)

    n, m = 64, 2
    rng = np.random.default_rng(0)
    Q = rng.normal(size=(n * m, n * m))
    S = Q @ Q.T / (n * m) + np.eye(n * m)
    h = rng.normal(size=n * m)
    own = [(i, -1, np.zeros(m), 3.0) for i in range(n)]
    pair = [(i, i + 1, np.zeros(m), 2.0) for i in range(n - 1)]

    yield "lattice_sweeps 16x16 m=2", lambda: metropolis_run(
        spec, dom, cs, init=discretize(L, dom).values, sweeps=sweeps, seed=1, burn_in=0).snapshots
    yield "dense_sweeps n=64 m=2", lambda: run_dense(
        DenseTarget(S, h, n, m, own + pair), np.zeros((n, m)), sweeps, seed=2, burn_in=0, kernel="rw").snapshots
    yield "tilted_sweeps n=64 m=2", lambda: run_dense(
        DenseTarget(S, h, n, m, own), np.zeros((n, m)), sweeps, seed=3, burn_in=0, kernel="tilted").snapshots


def child(sweeps):
    from gradgibbs import _kernels

    out = {"backend": _kernels.backend(), "rows": []}
    for name, run in workloads(sweeps):
        run_small = workloads(2)  # compile (numba) outside the timed call
        for nm, r in run_small:
            if nm == name:
                r()
        t0 = time.perf_counter()
        x = run()
        dt = time.perf_counter() - t0
        out["rows"].append({"name": name, "seconds": dt, "digest": hashlib.sha256(x.tobytes()).hexdigest()})
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sweeps", type=int, default=2000)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        child(args.sweeps)
        return

    res = {}
    for flag in ("0", "1"):
        env = dict(os.environ, GRADGIBBS_NO_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--child", "--sweeps", str(args.sweeps)],
                              env=env, capture_output=True, text=True, check=True)
        r = json.loads(proc.stdout.strip().splitlines()[-1])
        res[r["backend"]] = {row["name"]: row for row in r["rows"]}

    print(f"{'kernel':28s} {'numba s':>10s} {'python s':>10s} {'speedup':>9s}  same chain")
    for name, fast in res["numba"].items():
        slow = res["python"][name]
        print(f"{name:28s} {fast['seconds']:10.3f} {slow['seconds']:10.3f} "
              f"{slow['seconds'] / fast['seconds']:9.1f}  {fast['digest'] == slow['digest']}")


if __name__ == "__main__":
    main()
