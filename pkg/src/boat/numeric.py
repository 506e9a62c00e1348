"""Deterministic dense-tensor kernels.

Tensors are plain C-contiguous ``numpy.ndarray`` values in float32 or
float64.  Everything here is a pure function with a fixed, documented
reduction order, so results are bit-reproducible across runs, platforms and
thread counts:

* ``matmul``: serial left-to-right accumulation over the inner axis.
* ``conv2d``: per output element: bias, then (c_in, ky, kx) ascending.
* reductions inside ``softmax_lastdim`` / ``layer_norm`` use NumPy's own
  single-threaded pairwise sums (deterministic, thread-count independent).

BLAS is deliberately not used: its reduction order varies with threading and
build, which would break the bit-exactness contract.
"""

import numpy as np

from . import backend

DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes or dtypes violate an operation's contract."""


def _as_tensor(x, name="tensor"):
    x = np.asarray(x)
    if x.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"{name}: dtype must be float32 or float64, got {x.dtype}")
    return np.ascontiguousarray(x)


def check_finite(x, name="tensor"):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains NaN or Inf")


def matmul(a, b):
    """Matrix product of two 2-D tensors with serial-over-k accumulation."""
    a = _as_tensor(a, "a")
    b = _as_tensor(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    backend.kernels().matmul(a, b, out, backend.num_threads())
    return out


def conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Grouped 2-D cross-correlation.

    x: (C_in, H, W), w: (C_out, C_in/groups, kh, kw), b: (C_out,) or None.
    Zero padding is materialized up front so both kernel backends see the
    identical contraction.
    """
    x = _as_tensor(x, "x")
    w = _as_tensor(w, "w")
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x(C,H,W), w(O,I,kh,kw); got {x.shape}, {w.shape}")
    if x.dtype != w.dtype:
        raise ShapeError(f"conv2d dtype mismatch: {x.dtype} vs {w.dtype}")
    c_in, h, wd = x.shape
    c_out, cin_g, kh, kw = w.shape
    if c_in % groups or c_out % groups:
        raise ShapeError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if cin_g != c_in // groups:
        raise ShapeError(f"weight expects {cin_g} channels/group, input provides {c_in // groups}")
    if b is None:
        b = np.zeros(c_out, dtype=x.dtype)
    else:
        b = _as_tensor(b, "b")
        if b.shape != (c_out,):
            raise ShapeError(f"bias must be ({c_out},), got {b.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output extent non-positive: {oh}x{ow}")
    if padding:
        xp = np.zeros((c_in, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
        xp[:, padding:padding + h, padding:padding + wd] = x
        x = xp
    out = np.zeros((c_out, oh, ow), dtype=x.dtype)
    backend.kernels().conv2d(x, w, b, stride, groups, out, backend.num_threads())
    return out


def softmax_lastdim(x):
    """Row-stochastic softmax over the last axis, max-subtracted for stability.

    -inf entries are legal (attention masks); NaN is rejected.
    """
    x = _as_tensor(x, "x")
    if x.shape[-1] < 1:
        raise ShapeError("softmax: last dim must be >= 1")
    if np.isnan(x).any():
        raise ValueError("softmax: NaN input")
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = _as_tensor(x, "x")
    gamma = _as_tensor(gamma, "gamma")
    beta = _as_tensor(beta, "beta")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine params must be ({c},)")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    mean = np.mean(x, axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    return centered * inv.astype(x.dtype) * gamma + beta


NORM_FLOOR = 1e-12  # zero-vector guard for cosine similarity


def cosine_similarity(x, y):
    """Cosine similarity of two 1-D vectors; zero vectors map to 0."""
    x = _as_tensor(x, "x")
    y = _as_tensor(y, "y")
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ShapeError(f"cosine_similarity expects equal-length vectors, got {x.shape}, {y.shape}")
    dot = float(np.einsum("i,i->", x, y))
    nx = max(float(np.sqrt(np.einsum("i,i->", x, x))), NORM_FLOOR)
    ny = max(float(np.sqrt(np.einsum("i,i->", y, y))), NORM_FLOOR)
    return dot / (nx * ny)


def floored_token_norms(tokens):
    """Euclidean norm of every row, floored like ``cosine_similarity``."""
    t = np.asarray(tokens, dtype=np.float64)
    return np.maximum(np.sqrt(np.einsum("nc,nc->n", t, t)), NORM_FLOOR)


def cosine_to_centroid(tokens, c, token_norms=None):
    """Cosine similarity of every row of ``tokens`` against vector ``c``.

    Computed in float64 regardless of input dtype (clustering ranking keys
    need the headroom); same zero-vector floor as ``cosine_similarity``.
    ``token_norms`` accepts precomputed ``floored_token_norms`` output so
    repeated rankings of the same tokens can skip the norm pass.
    """
    t = np.asarray(tokens, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    dots = np.einsum("nc,c->n", t, c)
    tn = floored_token_norms(t) if token_norms is None else token_norms
    cn = max(float(np.sqrt(np.einsum("i,i->", c, c))), NORM_FLOOR)
    return dots / (tn * cn)


def stable_argsort_desc(v):
    """Indices ordering ``v`` descending; ties keep ascending input order."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError("stable_argsort_desc expects a 1-D array")
    if np.isnan(v).any():
        raise ValueError("stable_argsort_desc: NaN present")
    return np.argsort(-v, kind="stable")


def gather_rows(x, idx):
    """Rows of ``x`` at positions ``idx`` (a copy)."""
    x = np.asarray(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range [0, {x.shape[0]})")
    return np.ascontiguousarray(x[idx])


def scatter_rows(rows, idx):
    """Inverse of gather_rows for a permutation: out[idx[i]] = rows[i]."""
    rows = np.asarray(rows)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[0] != rows.shape[0]:
        raise ShapeError("scatter_rows: index count must match row count")
    if idx.size and (idx.min() < 0 or idx.max() >= rows.shape[0]):
        raise IndexError(f"scatter_rows: index out of range [0, {rows.shape[0]})")
    out = np.empty_like(rows)
    out[idx] = rows
    return out
