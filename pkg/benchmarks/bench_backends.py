"""Timing comparison of the numba and numpy kernel backends.

Backend choice is frozen at import time, so this script re-runs itself in a
child process per backend, then prints one table of timings and the
cross-backend deviations. Usage:

    python3 benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

CASES = (
    ("raw_block 1M words", "raw"),
    ("normals_block 1M draws", "normals"),
    ("jacobi 48x48 eigensolve", "jacobi"),
)


def run_case(case: str, repeats: int):
    from diffusionlab.numerics.kernels import jacobi_sweeps, normals_block, raw_block

    if case == "raw":
        def job():
            return raw_block(123456789, 0, 1_000_000)
    elif case == "normals":
        def job():
            return normals_block(987654321, 0, 1_000_000)
    else:
        rng = np.random.default_rng(7)
        base = rng.normal(size=(48, 48))
        spd = base @ base.T + 48.0 * np.eye(48)

        def job():
            work = spd.copy()
            v = np.eye(48)
            jacobi_sweeps(work, v, 1e-13, 60)
            return np.sort(np.diag(work))

    job()  # warm-up: first numba call includes compilation
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = job()
        best = min(best, time.perf_counter() - t0)
    return best, np.asarray(out, dtype=np.float64)


def child_main(args):
    results = {}
    values = {}
    for _, case in CASES:
        seconds, out = run_case(case, args.repeats)
        results[case] = seconds
        values[case] = out
    np.savez(args.child_out, **values)
    print(json.dumps(results))


def parent_main(args):
    from diffusionlab.backend import HAS_NUMBA

    backends = ["numpy"] + (["numba"] if HAS_NUMBA else [])
    timings = {}
    values = {}
    with tempfile.TemporaryDirectory() as tmp:
        for backend in backends:
            out_npz = os.path.join(tmp, f"{backend}.npz")
            env = dict(os.environ, DIFFUSIONLAB_BACKEND=backend)
            proc = subprocess.run(
                [sys.executable, __file__, "--child", "--child-out", out_npz,
                 "--repeats", str(args.repeats)],
                env=env, capture_output=True, text=True, check=True)
            timings[backend] = json.loads(proc.stdout)
            values[backend] = dict(np.load(out_npz))

    header = f"{'kernel':<26} " + " ".join(f"{b + ' (ms)':>12}" for b in backends)
    if len(backends) == 2:
        header += f" {'speedup':>9} {'max |dev|':>11}"
    print(header)
    print("-" * len(header))
    for label, case in CASES:
        cells = [f"{timings[b][case] * 1e3:12.3f}" for b in backends]
        line = f"{label:<26} " + " ".join(cells)
        if len(backends) == 2:
            ratio = timings["numpy"][case] / timings["numba"][case]
            dev = float(np.max(np.abs(values["numba"][case] - values["numpy"][case])))
            line += f" {ratio:8.2f}x {dev:11.2e}"
        print(line)
    if len(backends) == 1:
        print("(numba not installed; numpy fallback timings only)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    parser.add_argument("--child-out", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        child_main(args)
    else:
        parent_main(args)


if __name__ == "__main__":
    main()
