"""Timing comparison of the compiled and pure-NumPy kernel backends.

Each workload runs on both backends (when the compiled core is available),
reports wall times and the speedup, and asserts the outputs are bitwise
identical: speed is allowed to differ, results are not.
"""

import time

import numpy as np

from . import backend, numeric
from .attention import scaled_dot_attention
from .model import boat_forward, init_model_params
from .rng import Stream


def _time(fn, repeat=3):
    fn()  # warmup (allocations, page faults)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _workloads(include_forward):
    s = Stream(42).child("bench")
    a32 = s.uniform((384, 384)).astype(np.float32)
    b32 = s.uniform((384, 384)).astype(np.float32)
    a64 = s.uniform((256, 256))
    b64 = s.uniform((256, 256))
    img = s.uniform((3, 128, 128)).astype(np.float32)
    pw = s.uniform((32, 3, 7, 7)).astype(np.float32) * 0.1
    pb = np.zeros(32, dtype=np.float32)
    dmap = s.uniform((64, 56, 56)).astype(np.float32)
    dw = s.uniform((64, 1, 3, 3)).astype(np.float32)
    q = s.uniform((196, 32)).astype(np.float32)
    k = s.uniform((196, 32)).astype(np.float32)
    v = s.uniform((196, 32)).astype(np.float32)

    loads = [
        ("matmul f32 384x384", lambda: numeric.matmul(a32, b32)),
        ("matmul f64 256x256", lambda: numeric.matmul(a64, b64)),
        ("conv 7x7/4 f32 128px", lambda: numeric.conv2d(img, pw, pb,
                                                        stride=4, padding=3)),
        ("depthwise 3x3 f32", lambda: numeric.conv2d(dmap, dw, stride=1,
                                                     padding=1, groups=64)),
        ("attention 196x32", lambda: scaled_dot_attention(q, k, v)),
    ]
    if include_forward:
        from .selftest import _small_config
        cfg = _small_config()
        params = init_model_params(cfg, seed=0)
        small = Stream(43).child("bench-img").normal((3, 32, 32),
                                                     dtype=np.float32)
        loads.append(("model forward 32px", lambda: boat_forward(small, cfg,
                                                                 params)))
    return loads


def run_bench(threads=1, include_forward=False, out=print):
    """Print a backend comparison table; return the measured rows."""
    backend.set_num_threads(threads)
    names = ["python"] + (["ext"] if backend.has_extension() else [])
    if len(names) == 1:
        out("compiled backend not available; timing pure NumPy only")
    out(f"threads: {threads}")
    header = f"{'workload':<24}" + "".join(f"{n + ' (ms)':>14}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}{'outputs':>16}"
    out(header)
    rows = []
    try:
        for name, fn in _workloads(include_forward):
            times = {}
            results = {}
            for bk in names:
                backend.use_backend(bk)
                times[bk] = _time(fn)
                results[bk] = fn()
            row = {"workload": name, "times": times}
            line = f"{name:<24}" + "".join(f"{times[n] * 1e3:>14.3f}"
                                           for n in names)
            if len(names) == 2:
                same = np.asarray(results["ext"]).tobytes() == \
                    np.asarray(results["python"]).tobytes()
                if not same:
                    raise AssertionError(f"{name}: backends disagree bitwise")
                row["speedup"] = times["python"] / times["ext"]
                line += f"{row['speedup']:>10.2f}{'bit-identical':>16}"
            rows.append(row)
            out(line)
    finally:
        backend.use_backend("auto")
    return rows
