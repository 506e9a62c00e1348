"""Feature-space and image-space local attention.

``fsla_forward`` attends within balanced feature-space clusters computed per
head on the fly; ``isla_swin_forward`` attends within (optionally shifted)
square image windows with relative position bias.  Both share
``scaled_dot_attention`` and the deterministic matmul/conv kernels, so a
given input produces bit-identical output on every backend and thread count.
"""

from dataclasses import dataclass

import math

import numpy as np

from . import numeric
from .grouping import GroupingConfig, balanced_hierarchical_cluster
from .numeric import ShapeError, gather_rows, matmul, softmax_lastdim
from .rng import Stream


@dataclass
class AttentionParams:
    """Projection weights for one attention module.

    Weights are stored input-major: tokens (N, C) multiply on the left.
    ``lepe`` (depthwise 3x3 kernels, shape (C, 1, 3, 3)) is used by the
    feature-space path; ``rpb_table`` ((2w-1)^2, heads) by the windowed path.
    Either may be None when the owning path does not need it.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    lepe: np.ndarray | None = None
    rpb_table: np.ndarray | None = None


def init_attention_params(channels, stream, dtype=np.float32, lepe=False,
                          rpb_window=0, num_heads=1):
    """Fresh parameters: truncated-normal weights (std 0.02), zero biases."""
    def w(label, shape):
        return stream.child(label).trunc_normal(shape, 0.02).astype(dtype)

    zeros = lambda: np.zeros(channels, dtype=dtype)
    return AttentionParams(
        wq=w("wq", (channels, channels)), wk=w("wk", (channels, channels)),
        wv=w("wv", (channels, channels)), wo=w("wo", (channels, channels)),
        bq=zeros(), bk=zeros(), bv=zeros(), bo=zeros(),
        lepe=w("lepe", (channels, 1, 3, 3)) if lepe else None,
        rpb_table=(w("rpb", ((2 * rpb_window - 1) ** 2, num_heads))
                   if rpb_window else None),
    )


def scaled_dot_attention(q, k, v, bias=None):
    """softmax(q k^T / sqrt(d) + bias) v for one head over one token group."""
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"q/k/v must share a shape, got {q.shape}/{k.shape}/{v.shape}")
    scale = q.dtype.type(1.0 / math.sqrt(q.shape[1]))
    scores = matmul(q, k.T) * scale
    if bias is not None:
        scores = scores + bias.astype(q.dtype, copy=False)
    return matmul(softmax_lastdim(scores), v)


def _project(x, w, b):
    return matmul(x, w) + b


def _lepe_tokens(v, lepe, spatial):
    # depthwise 3x3 over v arranged as a (C, H, W) map, back to (N, C)
    h, wd = spatial
    c = v.shape[1]
    v_map = np.ascontiguousarray(v.T).reshape(c, h, wd)
    out = numeric.conv2d(v_map, lepe, stride=1, padding=1, groups=c)
    return np.ascontiguousarray(out.reshape(c, h * wd).T)


def fsla_forward(x, params, num_heads, grouping, spatial, cluster_on="input",
                 assignments=None, return_internals=False):
    """Feature-space local attention over balanced hierarchical clusters.

    Each head clusters its own feature slice (of the block input by default,
    of the projected keys with ``cluster_on='keys'``) and attends within each
    of the 2^K clusters independently.  A token that the last-level overlap
    places in two sibling clusters gets the mean of its two attention
    outputs.  Positional information enters through a depthwise 3x3 conv of
    v on the image grid, added to the concatenated heads before the output
    projection.

    ``assignments`` (one :class:`ClusterAssignment` per head) bypasses the
    internal clustering; ``return_internals`` additionally returns the
    per-head assignments actually used.
    """
    n, c = x.shape
    if c % num_heads:
        raise ShapeError(f"channels {c} not divisible by heads {num_heads}")
    if cluster_on not in ("input", "keys"):
        raise ValueError(f"unknown cluster_on {cluster_on!r}")
    if spatial[0] * spatial[1] != n:
        raise ShapeError(f"spatial {spatial} does not cover {n} tokens")
    d = c // num_heads

    q = _project(x, params.wq, params.bq)
    k = _project(x, params.wk, params.bk)
    v = _project(x, params.wv, params.bv)

    heads = np.zeros_like(x)
    weight = np.zeros(n, dtype=x.dtype)
    used = []
    for head in range(num_heads):
        sl = slice(head * d, (head + 1) * d)
        if assignments is not None:
            assignment = assignments[head]
        else:
            feats = x[:, sl] if cluster_on == "input" else k[:, sl]
            assignment = balanced_hierarchical_cluster(feats, grouping)
        used.append(assignment)
        acc = np.zeros((n, d), dtype=x.dtype)
        weight[:] = 0
        for cluster in assignment.final_clusters:
            out = scaled_dot_attention(gather_rows(q[:, sl], cluster),
                                       gather_rows(k[:, sl], cluster),
                                       gather_rows(v[:, sl], cluster))
            acc[cluster] += out
            weight[cluster] += 1
        heads[:, sl] = acc / weight[:, None]

    if params.lepe is not None:
        heads = heads + _lepe_tokens(v, params.lepe, spatial)
    out = _project(heads, params.wo, params.bo)
    return (out, used) if return_internals else out


@dataclass(frozen=True)
class WindowConfig:
    window: int
    shift: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.shift not in (0, self.window // 2):
            raise ValueError(f"shift must be 0 or window//2, got {self.shift}")


def relative_position_index(window):
    """(w^2, w^2) lookup into the (2w-1)^2 bias table for in-window pairs."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window),
                                  indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + window - 1
    return rel[0] * (2 * window - 1) + rel[1]


def _region_ids(hp, wp, window, shift):
    # Shifted-window attention groups: tokens may attend only within their
    # region.  With no shift everything is one region; with shift the map
    # splits into 3x3 bands whose boundaries are where the roll wraps.
    ids = np.zeros((hp, wp), dtype=np.int64)
    if shift:
        cuts_y = (slice(0, hp - window), slice(hp - window, hp - shift),
                  slice(hp - shift, hp))
        cuts_x = (slice(0, wp - window), slice(wp - window, wp - shift),
                  slice(wp - shift, wp))
        for iy, sy in enumerate(cuts_y):
            for ix, sx in enumerate(cuts_x):
                ids[sy, sx] = iy * 3 + ix
    return ids


def isla_swin_forward(x, params, num_heads, win, spatial):
    """Window attention on the image grid, optionally shifted.

    Tokens are laid out on their (height, width) grid, zero-padded up to
    window multiples, cyclically rolled by the shift, and attention runs
    independently inside each window with the relative position bias added
    to the scores.  Cross-region pairs created by the roll are masked to
    -inf.  Padding tokens attend among themselves (region -1), which keeps
    every softmax row finite; their outputs are cropped away.

    Callers must disable the shift when one window covers the whole grid
    (the model does): rolling inside a single window would wrap tokens past
    the map edge and misalign the relative position bias.
    """
    h_map, w_map = spatial
    n, c = x.shape
    if h_map * w_map != n:
        raise ShapeError(f"spatial {spatial} does not cover {n} tokens")
    if c % num_heads:
        raise ShapeError(f"channels {c} not divisible by heads {num_heads}")
    w = win.window
    s = win.shift
    d = c // num_heads

    q = _project(x, params.wq, params.bq)
    k = _project(x, params.wk, params.bk)
    v = _project(x, params.wv, params.bv)

    hp = -(-h_map // w) * w
    wp = -(-w_map // w) * w

    def to_map(tokens):
        m = np.zeros((hp, wp, c), dtype=x.dtype)
        m[:h_map, :w_map] = tokens.reshape(h_map, w_map, c)
        return np.roll(m, (-s, -s), axis=(0, 1)) if s else m

    q_map, k_map, v_map = to_map(q), to_map(k), to_map(v)
    ids = _region_ids(hp, wp, w, s)
    ids[h_map:, :] = -1
    ids[:, w_map:] = -1
    if s:
        ids = np.roll(ids, (-s, -s), axis=(0, 1))

    nwy, nwx = hp // w, wp // w

    def to_windows(m):
        return (m.reshape(nwy, w, nwx, w, -1).transpose(0, 2, 1, 3, 4)
                .reshape(nwy * nwx, w * w, -1))

    qw, kw, vw = to_windows(q_map), to_windows(k_map), to_windows(v_map)
    ids_w = to_windows(ids[:, :, np.newaxis]).reshape(nwy * nwx, w * w)
    masks = np.where(ids_w[:, :, None] == ids_w[:, None, :], 0.0, -np.inf)

    if params.rpb_table is None:
        rpb = np.zeros((num_heads, w * w, w * w))
    else:
        rpb = params.rpb_table[relative_position_index(window=w)].transpose(2, 0, 1)

    out_w = np.empty_like(qw)
    for wi in range(nwy * nwx):
        for head in range(num_heads):
            sl = slice(head * d, (head + 1) * d)
            bias = rpb[head] + masks[wi]
            out_w[wi, :, sl] = scaled_dot_attention(
                np.ascontiguousarray(qw[wi, :, sl]),
                np.ascontiguousarray(kw[wi, :, sl]),
                np.ascontiguousarray(vw[wi, :, sl]), bias)

    out_map = (out_w.reshape(nwy, nwx, w, w, c).transpose(0, 2, 1, 3, 4)
               .reshape(hp, wp, c))
    if s:
        out_map = np.roll(out_map, (s, s), axis=(0, 1))
    merged = np.ascontiguousarray(out_map[:h_map, :w_map].reshape(n, c))
    return _project(merged, params.wo, params.bo)


def attention_backward(q, k, v, upstream, bias=None):
    """Analytic gradients of scaled dot-product attention.

    Given upstream = d(loss)/d(output), returns (dq, dk, dv) with the
    softmax Jacobian applied row-wise:
    ds = p * (dp - sum_j dp_j p_j), dq = ds k / sqrt(d), dk = ds^T q / sqrt(d),
    dv = p^T upstream.
    """
    if q.shape != k.shape or q.shape != v.shape or upstream.shape != v.shape:
        raise ShapeError("q/k/v/upstream must share a shape")
    scale = q.dtype.type(1.0 / math.sqrt(q.shape[1]))
    scores = matmul(q, k.T) * scale
    if bias is not None:
        scores = scores + bias.astype(q.dtype, copy=False)
    p = softmax_lastdim(scores)
    dv = matmul(p.T, upstream)
    dp = matmul(upstream, v.T)
    ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
    dq = matmul(ds, k) * scale
    dk = matmul(ds.T, q) * scale
    return dq, dk, dv
