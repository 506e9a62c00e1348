"""Four-stage pyramid classifier built from bilateral local attention blocks.

A block applies image-space window attention, optionally feature-space
cluster attention, and an MLP, each behind a pre-norm residual:

    t1 = x + ISLA(LN(x))
    t2 = t1 + FSLA(LN(t1))      (only in blocks configured to carry it)
    y  = t2 + MLP(LN(t2))

Stages halve the grid and double the channels via strided 3x3 convolutions;
a 7x7 stride-4 convolution embeds the input image.  ``count_params`` is
closed-form arithmetic kept deliberately separate from the materializing
walk in ``parameter_specs`` so the two can cross-check each other.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numeric
from .attention import (AttentionParams, WindowConfig, fsla_forward,
                        isla_swin_forward)
from .grouping import GroupingConfig
from .numeric import ShapeError, layer_norm, matmul
from .rng import Stream

LAYOUTS = ("none", "all", "paired")


@dataclass(frozen=True)
class ModelConfig:
    height: int = 224
    width: int = 224
    channels: int = 96
    depths: tuple = (2, 2, 6, 2)
    heads: tuple = (3, 6, 12, 24)
    window_size: int = 7
    mlp_ratio: int = 4
    target_cluster_size: int = 49
    overlap: int = 20
    num_classes: int = 1000
    fsla_layout: str = "paired"
    cluster_iters: int = 5
    ranking_mode: str = "ratio"
    cluster_on: str = "input"

    def __post_init__(self):
        if len(self.depths) != 4 or len(self.heads) != 4:
            raise ValueError("depths and heads must list exactly 4 stages")
        if any(d < 1 for d in self.depths):
            raise ValueError("every stage needs at least one block")
        if self.fsla_layout not in LAYOUTS:
            raise ValueError(f"fsla_layout must be one of {LAYOUTS}")
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ValueError("height, width and channels must be positive")
        if self.window_size < 1 or self.mlp_ratio < 1 or self.num_classes < 1:
            raise ValueError("window_size, mlp_ratio, num_classes must be positive")
        if self.target_cluster_size < 1 or self.overlap < 0:
            raise ValueError("target_cluster_size must be >= 1, overlap >= 0")
        for i in range(4):
            if (self.channels << i) % self.heads[i]:
                raise ValueError(f"stage {i}: channels {self.channels << i} "
                                 f"not divisible by heads {self.heads[i]}")


def tiny_config(num_classes=1000):
    """The reference small configuration (about 32M parameters at 224x224)."""
    return ModelConfig(num_classes=num_classes)


def conv_output_extent(extent, kernel, stride, padding):
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(f"extent {extent} too small for kernel {kernel}")
    return out


def cluster_levels_for(n_tokens, target_size):
    """Deepest K such that 2^K divides n_tokens and clusters keep >= target_size."""
    k = 0
    while n_tokens % (2 << k) == 0 and (n_tokens >> (k + 1)) >= target_size:
        k += 1
    return k


@dataclass(frozen=True)
class StageGeometry:
    stage: int
    height: int
    width: int
    tokens: int
    channels: int
    heads: int
    levels: int            # hierarchical clustering depth K at this stage
    overlap: int           # effective last-level overlap n
    fsla_blocks: tuple     # one bool per block


def _fsla_flags(layout, stage, depth):
    if layout == "all":
        return tuple(True for _ in range(depth))
    if layout == "paired":
        # feature-space attention rides in every second block, and the last
        # stage is skipped: one cluster of 49 tokens is already global there
        return tuple(stage < 3 and b % 2 == 1 for b in range(depth))
    return tuple(False for _ in range(depth))


def stage_geometry(cfg):
    h = conv_output_extent(cfg.height, 7, 4, 3)
    w = conv_output_extent(cfg.width, 7, 4, 3)
    stages = []
    for i in range(4):
        c = cfg.channels << i
        n = h * w
        k = cluster_levels_for(n, cfg.target_cluster_size)
        m = n >> k
        n_ov = min(cfg.overlap, m - 1) if k > 0 else 0
        stages.append(StageGeometry(i, h, w, n, c, cfg.heads[i], k, n_ov,
                                    _fsla_flags(cfg.fsla_layout, i, cfg.depths[i])))
        if i < 3:
            h = conv_output_extent(h, 3, 2, 1)
            w = conv_output_extent(w, 3, 2, 1)
    return stages


# ---------------------------------------------------------------------------
# parameters

def parameter_specs(cfg):
    """Yield (name, shape, kind) for every tensor, in canonical order.

    kind selects the initializer: 'weight' (truncated normal, std 0.02),
    'bias' and 'ln_beta' (zeros), 'ln_gamma' (ones).  This order is also the
    serialization order of the flat weight vector.
    """
    c0 = cfg.channels
    span2 = (2 * cfg.window_size - 1) ** 2

    def attention(prefix, c, heads, lepe, rpb):
        for nm in ("wq", "wk", "wv", "wo"):
            yield f"{prefix}.{nm}", (c, c), "weight"
        for nm in ("bq", "bk", "bv", "bo"):
            yield f"{prefix}.{nm}", (c,), "bias"
        if rpb:
            yield f"{prefix}.rpb_table", (span2, heads), "weight"
        if lepe:
            yield f"{prefix}.lepe", (c, 1, 3, 3), "weight"

    yield "patch_embed.weight", (c0, 3, 7, 7), "weight"
    yield "patch_embed.bias", (c0,), "bias"
    for geo in stage_geometry(cfg):
        i, c = geo.stage, geo.channels
        hidden = cfg.mlp_ratio * c
        for b in range(cfg.depths[i]):
            pfx = f"stages.{i}.blocks.{b}"
            yield f"{pfx}.ln1.gamma", (c,), "ln_gamma"
            yield f"{pfx}.ln1.beta", (c,), "ln_beta"
            yield from attention(f"{pfx}.isla", c, geo.heads, False, True)
            if geo.fsla_blocks[b]:
                yield f"{pfx}.ln2.gamma", (c,), "ln_gamma"
                yield f"{pfx}.ln2.beta", (c,), "ln_beta"
                yield from attention(f"{pfx}.fsla", c, geo.heads, True, False)
            yield f"{pfx}.ln3.gamma", (c,), "ln_gamma"
            yield f"{pfx}.ln3.beta", (c,), "ln_beta"
            yield f"{pfx}.mlp.w1", (c, hidden), "weight"
            yield f"{pfx}.mlp.b1", (hidden,), "bias"
            yield f"{pfx}.mlp.w2", (hidden, c), "weight"
            yield f"{pfx}.mlp.b2", (c,), "bias"
        if i < 3:
            yield f"stages.{i}.merge.weight", (2 * c, c, 3, 3), "weight"
            yield f"stages.{i}.merge.bias", (2 * c,), "bias"
    c3 = c0 << 3
    yield "norm.gamma", (c3,), "ln_gamma"
    yield "norm.beta", (c3,), "ln_beta"
    yield "head.weight", (c3, cfg.num_classes), "weight"
    yield "head.bias", (cfg.num_classes,), "bias"


def count_params(cfg):
    """Exact scalar parameter count, closed form (no tensors materialized)."""
    c = cfg.channels
    r = cfg.mlp_ratio
    span2 = (2 * cfg.window_size - 1) ** 2
    total = c * 3 * 7 * 7 + c
    for i in range(4):
        ci = c << i
        attn = 4 * ci * ci + 4 * ci
        block = 2 * ci + (attn + span2 * cfg.heads[i]) + 2 * ci \
            + 2 * r * ci * ci + r * ci + ci
        fsla = 2 * ci + attn + 9 * ci
        n_fsla = sum(_fsla_flags(cfg.fsla_layout, i, cfg.depths[i]))
        total += cfg.depths[i] * block + n_fsla * fsla
        if i < 3:
            total += 2 * ci * ci * 9 + 2 * ci
    c3 = c << 3
    return total + 2 * c3 + c3 * cfg.num_classes + cfg.num_classes


@dataclass
class BlockParams:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    isla: AttentionParams
    ln3_gamma: np.ndarray
    ln3_beta: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    heads: int
    window: int
    ln2_gamma: np.ndarray | None = None
    ln2_beta: np.ndarray | None = None
    fsla: AttentionParams | None = None
    grouping: GroupingConfig | None = None
    cluster_on: str = "input"


@dataclass
class StageParams:
    blocks: list
    merge_weight: np.ndarray | None = None
    merge_bias: np.ndarray | None = None


@dataclass
class ModelParams:
    config: ModelConfig
    patch_weight: np.ndarray
    patch_bias: np.ndarray
    stages: list = field(default_factory=list)
    norm_gamma: np.ndarray | None = None
    norm_beta: np.ndarray | None = None
    head_weight: np.ndarray | None = None
    head_bias: np.ndarray | None = None


def _materialize(cfg, seed, dtype):
    stream = Stream(seed)
    tensors = {}
    for name, shape, kind in parameter_specs(cfg):
        if kind == "weight":
            tensors[name] = stream.child(name).trunc_normal(shape, 0.02).astype(dtype)
        elif kind == "ln_gamma":
            tensors[name] = np.ones(shape, dtype=dtype)
        else:
            tensors[name] = np.zeros(shape, dtype=dtype)
    return tensors


def _assemble(cfg, tensors):
    take = tensors.pop

    def attention(prefix, lepe, rpb):
        return AttentionParams(
            wq=take(f"{prefix}.wq"), wk=take(f"{prefix}.wk"),
            wv=take(f"{prefix}.wv"), wo=take(f"{prefix}.wo"),
            bq=take(f"{prefix}.bq"), bk=take(f"{prefix}.bk"),
            bv=take(f"{prefix}.bv"), bo=take(f"{prefix}.bo"),
            lepe=take(f"{prefix}.lepe") if lepe else None,
            rpb_table=take(f"{prefix}.rpb_table") if rpb else None)

    params = ModelParams(cfg, take("patch_embed.weight"), take("patch_embed.bias"))
    for geo in stage_geometry(cfg):
        i = geo.stage
        grouping = GroupingConfig(geo.levels, cfg.cluster_iters, geo.overlap,
                                  cfg.ranking_mode)
        blocks = []
        for b in range(cfg.depths[i]):
            pfx = f"stages.{i}.blocks.{b}"
            has_fsla = geo.fsla_blocks[b]
            blocks.append(BlockParams(
                ln1_gamma=take(f"{pfx}.ln1.gamma"), ln1_beta=take(f"{pfx}.ln1.beta"),
                isla=attention(f"{pfx}.isla", False, True),
                ln3_gamma=take(f"{pfx}.ln3.gamma"), ln3_beta=take(f"{pfx}.ln3.beta"),
                mlp_w1=take(f"{pfx}.mlp.w1"), mlp_b1=take(f"{pfx}.mlp.b1"),
                mlp_w2=take(f"{pfx}.mlp.w2"), mlp_b2=take(f"{pfx}.mlp.b2"),
                heads=geo.heads, window=cfg.window_size,
                ln2_gamma=take(f"{pfx}.ln2.gamma") if has_fsla else None,
                ln2_beta=take(f"{pfx}.ln2.beta") if has_fsla else None,
                fsla=attention(f"{pfx}.fsla", True, False) if has_fsla else None,
                grouping=grouping if has_fsla else None,
                cluster_on=cfg.cluster_on))
        params.stages.append(StageParams(
            blocks,
            take(f"stages.{i}.merge.weight") if i < 3 else None,
            take(f"stages.{i}.merge.bias") if i < 3 else None))
    params.norm_gamma = take("norm.gamma")
    params.norm_beta = take("norm.beta")
    params.head_weight = take("head.weight")
    params.head_bias = take("head.bias")
    if tensors:
        raise RuntimeError(f"unconsumed tensors: {sorted(tensors)}")
    return params


def init_model_params(cfg, seed=0, dtype=np.float32):
    """Fresh weights: truncated normal (std 0.02) from the seeded stream,
    zero biases, unit layer-norm gains.  Reproducible per (cfg, seed)."""
    return _assemble(cfg, _materialize(cfg, seed, dtype))


def parameter_tensors(cfg, params):
    """Yield (name, array) in canonical serialization order."""
    lookup = _tensor_lookup(params)
    for name, shape, _ in parameter_specs(cfg):
        arr = lookup[name]
        if tuple(arr.shape) != tuple(shape):
            raise ShapeError(f"{name}: shape {arr.shape} != spec {shape}")
        yield name, arr


def _tensor_lookup(params):
    out = {"patch_embed.weight": params.patch_weight,
           "patch_embed.bias": params.patch_bias,
           "norm.gamma": params.norm_gamma, "norm.beta": params.norm_beta,
           "head.weight": params.head_weight, "head.bias": params.head_bias}

    def attention(prefix, a):
        out.update({f"{prefix}.wq": a.wq, f"{prefix}.wk": a.wk,
                    f"{prefix}.wv": a.wv, f"{prefix}.wo": a.wo,
                    f"{prefix}.bq": a.bq, f"{prefix}.bk": a.bk,
                    f"{prefix}.bv": a.bv, f"{prefix}.bo": a.bo})
        if a.lepe is not None:
            out[f"{prefix}.lepe"] = a.lepe
        if a.rpb_table is not None:
            out[f"{prefix}.rpb_table"] = a.rpb_table

    for i, stage in enumerate(params.stages):
        for b, blk in enumerate(stage.blocks):
            pfx = f"stages.{i}.blocks.{b}"
            out[f"{pfx}.ln1.gamma"] = blk.ln1_gamma
            out[f"{pfx}.ln1.beta"] = blk.ln1_beta
            attention(f"{pfx}.isla", blk.isla)
            if blk.fsla is not None:
                out[f"{pfx}.ln2.gamma"] = blk.ln2_gamma
                out[f"{pfx}.ln2.beta"] = blk.ln2_beta
                attention(f"{pfx}.fsla", blk.fsla)
            out[f"{pfx}.ln3.gamma"] = blk.ln3_gamma
            out[f"{pfx}.ln3.beta"] = blk.ln3_beta
            out[f"{pfx}.mlp.w1"] = blk.mlp_w1
            out[f"{pfx}.mlp.b1"] = blk.mlp_b1
            out[f"{pfx}.mlp.w2"] = blk.mlp_w2
            out[f"{pfx}.mlp.b2"] = blk.mlp_b2
        if stage.merge_weight is not None:
            out[f"stages.{i}.merge.weight"] = stage.merge_weight
            out[f"stages.{i}.merge.bias"] = stage.merge_bias
    return out


# ---------------------------------------------------------------------------
# forward

def gelu(x):
    # tanh approximation; exact erf form not needed at these precisions
    t = x.dtype.type
    return t(0.5) * x * (t(1.0) + np.tanh(
        t(0.7978845608028654) * (x + t(0.044715) * x * x * x)))


def mlp_forward(x, w1, b1, w2, b2):
    return matmul(gelu(matmul(x, w1) + b1), w2) + b2


def patch_embed(img, weight, bias):
    """7x7 stride-4 conv (padding 3) of a (3, H, W) image -> (tokens, C)."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) image, got {img.shape}")
    fmap = numeric.conv2d(img, weight, bias, stride=4, padding=3)
    c, h, w = fmap.shape
    return np.ascontiguousarray(fmap.reshape(c, h * w).T), (h, w)


def stage_merge(x, spatial, weight, bias):
    """3x3 stride-2 conv (padding 1): halves the grid, doubles the channels."""
    h, w = spatial
    c = x.shape[1]
    fmap = np.ascontiguousarray(x.T).reshape(c, h, w)
    merged = numeric.conv2d(fmap, weight, bias, stride=2, padding=1)
    c2, h2, w2 = merged.shape
    return np.ascontiguousarray(merged.reshape(c2, h2 * w2).T), (h2, w2)


def bla_block_forward(x, block, spatial, shift):
    """One bilateral block: window attention, optional cluster attention,
    MLP, each pre-normed with its own residual."""
    win = WindowConfig(block.window, shift)
    t1 = x + isla_swin_forward(layer_norm(x, block.ln1_gamma, block.ln1_beta),
                               block.isla, block.heads, win, spatial)
    t2 = t1
    if block.fsla is not None:
        t2 = t1 + fsla_forward(layer_norm(t1, block.ln2_gamma, block.ln2_beta),
                               block.fsla, block.heads, block.grouping, spatial,
                               cluster_on=block.cluster_on)
    return t2 + mlp_forward(layer_norm(t2, block.ln3_gamma, block.ln3_beta),
                            block.mlp_w1, block.mlp_b1,
                            block.mlp_w2, block.mlp_b2)


@dataclass(frozen=True)
class StageTrace:
    stage: int
    tokens: int
    channels: int
    height: int
    width: int


def boat_forward(img, cfg, params, return_stage_info=False):
    """Full classifier forward: logits (num_classes,) for one (3, H, W) image."""
    if img.shape[1:] != (cfg.height, cfg.width):
        raise ShapeError(f"image {img.shape} does not match config "
                         f"{(3, cfg.height, cfg.width)}")
    x, spatial = patch_embed(img, params.patch_weight, params.patch_bias)
    trace = []
    for i, stage in enumerate(params.stages):
        for b, block in enumerate(stage.blocks):
            # odd blocks shift by half a window, except where one window
            # already covers the grid (a cyclic roll inside a single window
            # would scramble the relative position bias)
            shift = 0 if b % 2 == 0 or min(spatial) <= block.window \
                else block.window // 2
            x = bla_block_forward(x, block, spatial, shift)
        trace.append(StageTrace(i, x.shape[0], x.shape[1], *spatial))
        if stage.merge_weight is not None:
            x, spatial = stage_merge(x, spatial, stage.merge_weight,
                                     stage.merge_bias)
    x = layer_norm(x, params.norm_gamma, params.norm_beta)
    pooled = np.ascontiguousarray(x.mean(axis=0)[np.newaxis, :])
    logits = matmul(pooled, params.head_weight)[0] + params.head_bias
    return (logits, trace) if return_stage_info else logits


# ---------------------------------------------------------------------------
# cost model

def fsla_attention_matrix_macs(n_tokens, channels, levels, overlap):
    """Multiply-accumulates in the score and value products of clustered
    attention: 2 * 2^K * (m + n)^2 * C with m = n_tokens / 2^K."""
    m = n_tokens >> levels
    return 2 * (1 << levels) * (m + overlap) ** 2 * channels


def global_attention_matrix_macs(n_tokens, channels):
    return 2 * n_tokens ** 2 * channels


def macs_breakdown(cfg):
    """Multiply-accumulate counts per component.

    Counts matmul and convolution MACs only; layer norms, softmax, residual
    adds and activations are excluded (elementwise, no fused multiplies of
    model weights).  Window attention is counted on the padded grid the
    implementation actually attends over.  Clustering cost covers the
    centroid dot products and token norms of every refinement iteration.
    """
    geos = stage_geometry(cfg)
    out = {"patch_embed": geos[0].tokens * cfg.channels * 3 * 7 * 7}
    w = cfg.window_size
    for geo in geos:
        i, n, c = geo.stage, geo.tokens, geo.channels
        hp = -(-geo.height // w) * w
        wp = -(-geo.width // w) * w
        n_windows = (hp // w) * (wp // w)
        n_fsla = sum(geo.fsla_blocks)
        depth = cfg.depths[i]
        out[f"stage{i}.isla_proj"] = depth * 4 * n * c * c
        out[f"stage{i}.isla_attn"] = depth * 2 * n_windows * w ** 4 * c
        out[f"stage{i}.mlp"] = depth * 2 * cfg.mlp_ratio * n * c * c
        if n_fsla:
            out[f"stage{i}.fsla_proj"] = n_fsla * 4 * n * c * c
            out[f"stage{i}.fsla_attn"] = n_fsla * fsla_attention_matrix_macs(
                n, c, geo.levels, geo.overlap)
            out[f"stage{i}.fsla_lepe"] = n_fsla * 9 * n * c
            out[f"stage{i}.fsla_cluster"] = n_fsla * geo.levels * n * c \
                * (2 * cfg.cluster_iters + 1)
        if i < 3:
            nxt = geos[i + 1]
            out[f"stage{i}.merge"] = nxt.tokens * (2 * c) * c * 9
    out["head"] = (cfg.channels << 3) * cfg.num_classes
    return out


def estimate_macs(cfg):
    return sum(macs_breakdown(cfg).values())


def estimate_flops(cfg):
    """Floating-point operations, counting each multiply-accumulate as 2."""
    return 2 * estimate_macs(cfg)
