"""Compare the compiled kernels against the pure-numpy fallback.

Per-kernel microbenchmarks run both backends in-process; the end-to-end
engine benchmark re-invokes this script with DUALPROTO_KERNELS pinned so
each backend is measured under its normal import-time selection.

    python3 benchmarks/bench_kernels.py            # full comparison
    python3 benchmarks/bench_kernels.py --engine   # end-to-end only
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from dualproto import SynthConfig, generate_synthetic
from dualproto.engine import Engine, EngineConfig
from dualproto.kernels import available_backends

# benchmark-fixture sizes: 20 classes, 64 dims, 8 views
C, D, N = 20, 64, 8


def timeit(fn, repeats: int = 2000) -> float:
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats * 1e6  # us/call


def kernel_bench() -> None:
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((N, D))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    tproto = rng.standard_normal((C, D))
    tproto /= np.linalg.norm(tproto, axis=1, keepdims=True)
    vproto = rng.standard_normal((C, D))
    vproto /= np.linalg.norm(vproto, axis=1, keepdims=True)
    has = (rng.random(C) < 0.7).astype(np.uint8)

    cases = {
        "proto_probs": lambda m: m.proto_probs(feats, tproto, vproto, has, 6.0, 5.0, 100.0),
        "entropy_mean_grad": lambda m: m.entropy_mean_grad(feats, tproto, vproto, has, 6.0, 5.0, 100.0),
        "align_loss_grad": lambda m: m.align_loss_grad(tproto, vproto, 1.0),
    }
    backends = available_backends()
    print(f"kernel microbenchmarks (C={C}, d={D}, views={N}; us/call)")
    header = f"  {'kernel':22s}" + "".join(f"{name:>12s}" for name in backends)
    print(header + ("     speedup" if len(backends) == 2 else ""))
    for label, call in cases.items():
        times = {name: timeit(lambda m=mod: call(m)) for name, mod in backends.items()}
        row = f"  {label:22s}" + "".join(f"{times[n]:12.1f}" for n in times)
        if "compiled" in times and "python" in times:
            row += f"{times['python'] / times['compiled']:11.2f}x"
        print(row)


def engine_bench(samples: int = 500) -> float:
    cfg = SynthConfig(classes=C, dim=D, samples=samples, views=N,
                      shift_angle=0.6, sample_noise=0.25, seed=7)
    cts, stream, _ = generate_synthetic(cfg)
    engine = Engine(cts, EngineConfig(temperature=0.01, lr=0.002, rho=0.4, n_steps=2))
    start = time.perf_counter()
    for sample in stream:
        engine.step(sample.views)
    return (time.perf_counter() - start) / samples * 1e3  # ms/sample


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--engine", action="store_true",
                        help="print one end-to-end number for the active backend")
    args = parser.parse_args()

    if args.engine:
        from dualproto.kernels import BACKEND

        print(f"  engine step ({BACKEND:8s}){engine_bench():10.3f} ms/sample")
        return 0

    kernel_bench()
    print("end-to-end engine throughput (benchmark config, 500 samples)")
    sys.stdout.flush()  # children write straight to the tty; keep order
    for backend in available_backends():
        env = dict(os.environ, DUALPROTO_KERNELS=backend)
        subprocess.run([sys.executable, __file__, "--engine"], env=env, check=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
