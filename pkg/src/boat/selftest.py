"""Named invariant checks for installed-package sanity (`boat selftest`).

Each check is independent and raises AssertionError with a short diagnosis.
The quick set covers the numeric kernels and the clustering contract; the
full set adds the oracle equivalences and a small end-to-end forward.
"""

import numpy as np

from . import backend, numeric
from .attention import (attention_backward, init_attention_params,
                        isla_swin_forward, fsla_forward, scaled_dot_attention,
                        WindowConfig)
from .grouping import (GroupingConfig, balanced_binary_cluster,
                       balanced_hierarchical_cluster, overlap_split)
from .model import ModelConfig, boat_forward, count_params, init_model_params
from .oracle import (brute_force_assignment_check, finite_difference_grad,
                     masked_window_attention_oracle, naive_global_attention,
                     oracle_multihead_lepe_attention)
from .rng import Stream


def _check_matmul_known():
    out = numeric.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]),
                         np.array([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out, [[19.0, 22.0], [43.0, 50.0]]), f"got {out.tolist()}"


def _check_softmax_known():
    out = numeric.softmax_lastdim(np.array([0.0, np.log(3.0)]))
    assert np.allclose(out, [0.25, 0.75], atol=1e-12), f"got {out.tolist()}"


def _check_cosine_known():
    got = numeric.cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    assert abs(got - np.sqrt(0.5)) < 1e-12, f"got {got}"


def _check_argsort_ties():
    got = numeric.stable_argsort_desc(np.array([2.0, 1.0, 3.0, 3.0])).tolist()
    assert got == [2, 3, 0, 1], f"got {got}"


def _check_binary_split_known():
    toks = np.array([[1.0, 0.0], [0.9, 0.1], [0.1, 0.9], [0.0, 1.0]])
    res = balanced_binary_cluster(toks, iters=1)
    assert sorted(res.c1.tolist()) == [0, 1], f"cluster 1 is {res.c1.tolist()}"


def _check_overlap_structure():
    c1, c2 = overlap_split(np.arange(6), 1)
    assert c1.tolist() == [0, 1, 2, 3] and c2.tolist() == [2, 3, 4, 5], \
        f"got {c1.tolist()} / {c2.tolist()}"


def _check_ranking_dominance():
    toks = Stream(7).child("selftest-tokens").uniform((64, 8)) - 0.25
    cfg = GroupingConfig(levels=2, iters=3, overlap=3)
    assignment = balanced_hierarchical_cluster(toks, cfg)
    report = brute_force_assignment_check(toks, assignment)
    assert report.ok, "; ".join(report.violations[:3])


def _check_backend_parity():
    if not backend.has_extension():
        return  # single backend present: nothing to compare
    s = Stream(11).child("parity")
    a = s.uniform((33, 17)).astype(np.float32)
    b = s.uniform((17, 29)).astype(np.float32)
    x = s.uniform((6, 13, 15)).astype(np.float32)
    w = s.uniform((4, 6, 3, 3)).astype(np.float32)
    results = {}
    for name in ("ext", "python"):
        backend.use_backend(name)
        try:
            results[name] = (numeric.matmul(a, b),
                             numeric.conv2d(x, w, stride=2, padding=1))
        finally:
            backend.use_backend("auto")
    for got, want in zip(results["ext"], results["python"]):
        assert got.tobytes() == want.tobytes(), "backends disagree bitwise"


def _check_attention_oracle():
    s = Stream(3).child("attn")
    q = s.normal((10, 4))
    k = s.normal((10, 4))
    v = s.normal((10, 4))
    got = scaled_dot_attention(q, k, v)
    want = naive_global_attention(q, k, v)
    err = np.abs(got - want).max()
    assert err < 1e-12, f"max abs err {err:.3e}"


def _check_gradient():
    s = Stream(5).child("grad")
    q = s.normal((6, 3))
    k = s.normal((6, 3))
    v = s.normal((6, 3))
    up = s.normal((6, 3))
    dq, dk, dv = attention_backward(q, k, v, up)
    for name, arr, grad in (("q", q, dq), ("k", k, dk), ("v", v, dv)):
        others = {"q": q, "k": k, "v": v}

        def loss(probe):
            args = dict(others)
            args[name] = probe
            return float(np.sum(scaled_dot_attention(args["q"], args["k"],
                                                     args["v"]) * up))

        fd = finite_difference_grad(loss, arr)
        denom = max(np.abs(fd).max(), 1e-12)
        rel = np.abs(grad - fd).max() / denom
        assert rel < 1e-6, f"d{name} rel err {rel:.3e}"


def _check_window_oracle():
    s = Stream(13).child("win")
    x = s.normal((36, 8))
    params = init_attention_params(8, Stream(14), dtype=np.float64,
                                   rpb_window=3, num_heads=2)
    got = isla_swin_forward(x, params, 2, WindowConfig(3, 0), (6, 6))
    want = masked_window_attention_oracle(x, params, 2, 3, (6, 6),
                                          params.rpb_table)
    err = np.abs(got - want).max()
    assert err < 1e-10, f"max abs err {err:.3e}"


def _check_fsla_global_equivalence():
    s = Stream(17).child("fsla")
    x = s.normal((16, 8))
    params = init_attention_params(8, Stream(18), dtype=np.float64, lepe=True)
    got = fsla_forward(x, params, 2, GroupingConfig(levels=0), (4, 4))
    want = oracle_multihead_lepe_attention(x, params, 2, (4, 4))
    err = np.abs(got - want).max()
    assert err < 1e-10, f"max abs err {err:.3e}"


def _check_hierarchy_sizes():
    toks = Stream(19).child("sizes").normal((256, 16))
    cfg = GroupingConfig(levels=3, iters=2, overlap=5)
    a = balanced_hierarchical_cluster(toks, cfg)
    sizes = [len(c) for c in a.final_clusters]
    assert sizes == [37] * 8, f"sizes {sizes}"
    report = brute_force_assignment_check(toks, a)
    assert report.ok, "; ".join(report.violations[:3])


def _small_config():
    # stage 0 gets a second block so the shifted-window path runs
    return ModelConfig(height=32, width=32, channels=16, depths=(2, 1, 1, 1),
                       heads=(2, 2, 2, 2), window_size=4, mlp_ratio=2,
                       target_cluster_size=16, overlap=3, num_classes=7,
                       fsla_layout="all")


def _check_model_smoke():
    cfg = _small_config()
    params = init_model_params(cfg, seed=0)
    img = Stream(23).child("img").normal((3, 32, 32), dtype=np.float32)
    logits, trace = boat_forward(img, cfg, params, return_stage_info=True)
    assert logits.shape == (7,), f"logits shape {logits.shape}"
    assert np.all(np.isfinite(logits)), "non-finite logits"
    assert [t.tokens for t in trace] == [64, 16, 4, 1], \
        f"stage tokens {[t.tokens for t in trace]}"


def _check_weights_roundtrip():
    import os
    import tempfile

    from .boatt import load_model_params, save_weights
    from .model import parameter_tensors

    cfg = _small_config()
    params = init_model_params(cfg, seed=1)
    fd, path = tempfile.mkstemp(suffix=".boatt")
    os.close(fd)
    try:
        save_weights(path, cfg, params)
        loaded = load_model_params(path, cfg)
        for (name, a), (_, b) in zip(parameter_tensors(cfg, params),
                                     parameter_tensors(cfg, loaded)):
            assert a.tobytes() == b.tobytes(), f"{name} changed in roundtrip"
    finally:
        os.unlink(path)


QUICK_CHECKS = (
    ("matmul-known-product", _check_matmul_known),
    ("softmax-known-values", _check_softmax_known),
    ("cosine-known-value", _check_cosine_known),
    ("argsort-stable-ties", _check_argsort_ties),
    ("binary-split-known", _check_binary_split_known),
    ("overlap-structure", _check_overlap_structure),
    ("ranking-dominance", _check_ranking_dominance),
    ("backend-parity", _check_backend_parity),
    ("attention-oracle", _check_attention_oracle),
    ("attention-gradient", _check_gradient),
)

FULL_CHECKS = QUICK_CHECKS + (
    ("window-attention-oracle", _check_window_oracle),
    ("fsla-global-equivalence", _check_fsla_global_equivalence),
    ("hierarchy-sizes", _check_hierarchy_sizes),
    ("model-forward-smoke", _check_model_smoke),
    ("weights-roundtrip", _check_weights_roundtrip),
)


def run_selftest(full=False, out=print):
    """Run the named checks; print one line each; return the failure count."""
    checks = FULL_CHECKS if full else QUICK_CHECKS
    failures = 0
    for name, fn in checks:
        try:
            fn()
        except Exception as exc:  # report and continue: every check runs
            failures += 1
            out(f"FAIL {name}: {exc}")
        else:
            out(f"ok   {name}")
    out(f"{len(checks) - failures}/{len(checks)} checks passed")
    return failures
