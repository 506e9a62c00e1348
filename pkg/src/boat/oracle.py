"""Brute-force reference implementations and consistency checkers.

Everything here is written for clarity and independence, not speed: plain
loops and ``np.dot`` in float64, no shared code with the production kernels.
Tests compare the fast paths against these references; the references are
never imported by the library code itself.
"""

from dataclasses import dataclass

import math

import numpy as np

from .grouping import RATIO_CLAMP

# Relative tolerance for re-ranking checks.  The checker recomputes float64
# cosine ratios with a different operation order than production, so keys can
# differ in the last couple of ulps; anything beyond this is a real violation.
RANKING_RTOL = 1e-9


def naive_global_attention(q, k, v, bias=None):
    """Scaled dot-product attention, triple loop, float64 throughout."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n, d = q.shape
    scale = 1.0 / math.sqrt(d)
    scores = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for t in range(d):
                s += q[i, t] * k[j, t]
            scores[i, j] = s * scale
    if bias is not None:
        scores = scores + np.asarray(bias, dtype=np.float64)
    out = np.empty((n, v.shape[1]))
    for i in range(n):
        row = scores[i]
        p = np.exp(row - row.max())
        p /= p.sum()
        out[i] = p @ v
    return out


def naive_depthwise_conv3x3(feature_map, kernels):
    """Per-channel 3x3 convolution with zero padding 1, loops, float64."""
    x = np.asarray(feature_map, dtype=np.float64)
    w = np.asarray(kernels, dtype=np.float64)
    c, h, wd = x.shape
    xp = np.zeros((c, h + 2, wd + 2))
    xp[:, 1:-1, 1:-1] = x
    out = np.zeros((c, h, wd))
    for ch in range(c):
        for i in range(h):
            for j in range(wd):
                acc = 0.0
                for ky in range(3):
                    for kx in range(3):
                        acc += xp[ch, i + ky, j + kx] * w[ch, 0, ky, kx]
                out[ch, i, j] = acc
    return out


def oracle_multihead_lepe_attention(x, params, num_heads, spatial):
    """Global multi-head attention with positional depthwise-conv enhancement.

    Reference for the feature-space attention module in the degenerate
    single-cluster case: q/k/v projections, per-head global attention,
    head concat plus the 3x3 depthwise conv of v laid out on the
    (height, width) grid, then the output projection.  Float64.
    """
    x = np.asarray(x, dtype=np.float64)
    h_map, w_map = spatial
    n, c = x.shape
    d = c // num_heads
    q = x @ np.asarray(params.wq, dtype=np.float64) + np.asarray(params.bq, dtype=np.float64)
    k = x @ np.asarray(params.wk, dtype=np.float64) + np.asarray(params.bk, dtype=np.float64)
    v = x @ np.asarray(params.wv, dtype=np.float64) + np.asarray(params.bv, dtype=np.float64)
    heads = np.empty((n, c))
    for head in range(num_heads):
        sl = slice(head * d, (head + 1) * d)
        heads[:, sl] = naive_global_attention(q[:, sl], k[:, sl], v[:, sl])
    v_map = v.T.reshape(c, h_map, w_map)
    lepe = naive_depthwise_conv3x3(v_map, params.lepe).reshape(c, n).T
    return (heads + lepe) @ np.asarray(params.wo, dtype=np.float64) \
        + np.asarray(params.bo, dtype=np.float64)


def window_id_map(height, width, window):
    """Token -> window id for an unshifted window grid (divisible extents)."""
    if height % window or width % window:
        raise ValueError("window must divide both extents for the oracle map")
    wy = np.arange(height) // window
    wx = np.arange(width) // window
    return (wy[:, None] * (width // window) + wx[None, :]).reshape(-1)


def masked_window_attention_oracle(x, params, num_heads, window, spatial,
                                   rpb_table=None):
    """Unshifted window attention as global attention with -inf masking.

    Same-window pairs get the relative position bias read straight from the
    table; cross-window scores are set to -inf before the softmax.  This is
    the semantic definition the fast windowed path must reproduce.
    """
    x = np.asarray(x, dtype=np.float64)
    h_map, w_map = spatial
    n, c = x.shape
    d = c // num_heads
    win_of = window_id_map(h_map, w_map, window)
    ys, xs = np.arange(n) // w_map, np.arange(n) % w_map
    q = x @ np.asarray(params.wq, dtype=np.float64) + np.asarray(params.bq, dtype=np.float64)
    k = x @ np.asarray(params.wk, dtype=np.float64) + np.asarray(params.bk, dtype=np.float64)
    v = x @ np.asarray(params.wv, dtype=np.float64) + np.asarray(params.bv, dtype=np.float64)
    heads = np.empty((n, c))
    span = 2 * window - 1
    for head in range(num_heads):
        sl = slice(head * d, (head + 1) * d)
        scores = (q[:, sl] @ k[:, sl].T) / math.sqrt(d)
        for i in range(n):
            for j in range(n):
                if win_of[i] != win_of[j]:
                    scores[i, j] = -np.inf
                elif rpb_table is not None:
                    rel = (ys[i] - ys[j] + window - 1) * span + (xs[i] - xs[j] + window - 1)
                    scores[i, j] += float(rpb_table[rel, head])
        p = np.exp(scores - scores.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        heads[:, sl] = p @ v[:, sl]
    return heads @ np.asarray(params.wo, dtype=np.float64) \
        + np.asarray(params.bo, dtype=np.float64)


@dataclass
class CheckReport:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def _recheck_keys(tokens, c1, c2, mode, tn=None):
    # independent of grouping.ranking_keys: BLAS matvec + np.linalg.norm
    # instead of the production einsum path
    t = np.asarray(tokens, dtype=np.float64)
    n1 = np.linalg.norm(np.asarray(c1, dtype=np.float64))
    n2 = np.linalg.norm(np.asarray(c2, dtype=np.float64))
    if tn is None:
        tn = np.linalg.norm(t, axis=1)
    s1 = (t @ np.asarray(c1, dtype=np.float64)) / np.maximum(tn * n1, 1e-12)
    s2 = (t @ np.asarray(c2, dtype=np.float64)) / np.maximum(tn * n2, 1e-12)
    if mode == "ratio":
        s2 = np.where(np.abs(s2) < RATIO_CLAMP,
                      np.where(s2 < 0.0, -RATIO_CLAMP, RATIO_CLAMP), s2)
        return s1 / s2
    return s1 - s2


def brute_force_assignment_check(tokens, assignment):
    """Re-derive every property a hierarchical assignment must satisfy.

    Checks, from first principles: level maps form a proper nested binary
    hierarchy with exactly equal subset sizes; final clusters have the
    declared size and cover all tokens; sibling clusters share exactly the
    declared 2n overlap members; and within every recorded split the
    recomputed ranking keys of the first half dominate the second half
    (ties must fall back to ascending token position).  Returns a
    :class:`CheckReport`; ``violations`` lists human-readable findings.
    """
    t = np.asarray(tokens)
    cfg = assignment.config
    n = assignment.n_tokens
    k_levels = cfg.levels
    bad = []

    if t.shape[0] != n:
        # nothing downstream can be indexed consistently
        return CheckReport(False, [f"token count {t.shape[0]} != "
                                   f"assignment.n_tokens {n}"])
    if len(assignment.levels) != k_levels + 1:
        bad.append(f"expected {k_levels + 1} level maps, got {len(assignment.levels)}")

    for k, level in enumerate(assignment.levels):
        want = 1 << k
        if level.shape != (n,):
            bad.append(f"level {k}: map shape {level.shape} != ({n},)")
            continue
        counts = np.bincount(level, minlength=want)
        if level.min() < 0 or level.max() >= want:
            bad.append(f"level {k}: subset ids outside [0, {want})")
        elif np.any(counts != n // want):
            bad.append(f"level {k}: subset sizes {counts.tolist()} not all {n // want}")
        if k > 0:
            parent = assignment.levels[k - 1]
            if np.any(level // 2 != parent):
                bad.append(f"level {k}: subsets do not nest inside level {k - 1}")

    m_final = n >> k_levels
    want_size = m_final + (cfg.overlap if k_levels > 0 else 0)
    if len(assignment.final_clusters) != (1 << k_levels):
        bad.append(f"{len(assignment.final_clusters)} final clusters, expected {1 << k_levels}")
    seen = np.zeros(n, dtype=bool)
    for ci, cluster in enumerate(assignment.final_clusters):
        if cluster.shape[0] != want_size:
            bad.append(f"final cluster {ci}: size {cluster.shape[0]} != {want_size}")
        seen[cluster] = True
    if not seen.all():
        bad.append(f"{int((~seen).sum())} tokens missing from final clusters")

    for pi, shared in enumerate(assignment.overlap_members):
        left = set(assignment.final_clusters[2 * pi].tolist())
        right = set(assignment.final_clusters[2 * pi + 1].tolist())
        inter = left & right
        if len(inter) != 2 * cfg.overlap:
            bad.append(f"pair {pi}: {len(inter)} shared tokens, expected {2 * cfg.overlap}")
        if inter != set(shared.tolist()):
            bad.append(f"pair {pi}: overlap_members disagree with cluster intersection")

    t64 = np.asarray(t, dtype=np.float64)
    tnorm = np.linalg.norm(t64, axis=1)
    for si, rec in enumerate(assignment.splits):
        keys = _recheck_keys(t64[rec.members], rec.centroid1, rec.centroid2,
                             cfg.ranking_mode, tn=tnorm[rec.members])
        tol = RANKING_RTOL * max(1.0, float(np.abs(keys).max()))
        rising = np.flatnonzero(keys[:-1] < keys[1:] - tol)
        if rising.size:
            a = int(rising[0])
            bad.append(f"split {si} (level {rec.level}): position {a} key "
                       f"{keys[a]:.12g} < {keys[a + 1]:.12g}")
            continue
        untied = np.flatnonzero((keys[:-1] == keys[1:])
                                & (rec.members[:-1] > rec.members[1:]))
        if untied.size:
            bad.append(f"split {si}: tie broken out of index order "
                       f"at {int(untied[0])}")

    return CheckReport(not bad, bad)


def finite_difference_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.shape[0]):
        keep = flat[i]
        flat[i] = keep + h
        fp = float(f(x))
        flat[i] = keep - h
        fm = float(f(x))
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
