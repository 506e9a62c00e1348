"""Balanced token grouping in feature space.

The main pair is ``balanced_binary_cluster`` (iterative equal split of 2m
tokens by descending centroid-similarity ratio) and
``balanced_hierarchical_cluster`` (K recursive levels of binary splits,
optionally overlapping at the last level).  ``kmeans_sort_divide`` and
``lsh_bucketize`` are the two baseline grouping schemes kept for comparison
runs.

Ranking keys are always computed in float64, whatever the token dtype:
near-tie orderings would otherwise depend on float32 rounding and break
reproducibility of the assignment across summation orders.

The environment variable ``BOAT_FAULT=ratio`` (test harness only) corrupts
the ranking key so the self-test can prove the assignment checker catches a
broken implementation.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .numeric import NORM_FLOOR, floored_token_norms, stable_argsort_desc
from .rng import Stream

RATIO_CLAMP = 1e-8  # |s2| floor in the ratio key, sign-preserving


@dataclass(frozen=True)
class GroupingConfig:
    """Hierarchical clustering hyperparameters.

    levels: number K of binary-split levels (2**K final clusters).
    iters: centroid/assignment refinement iterations per split.
    overlap: half-width n of the shared band at the last level; sibling
        clusters end up with m+n members sharing exactly 2n.
    ranking_mode: 'ratio' (cosine-similarity ratio) or 'difference'
        (s1 - s2, a monotone alternative immune to tiny denominators).
    """

    levels: int
    iters: int = 5
    overlap: int = 0
    ranking_mode: str = "ratio"

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.overlap < 0:
            raise ValueError("overlap must be >= 0")
        if self.ranking_mode not in ("ratio", "difference"):
            raise ValueError(f"unknown ranking_mode {self.ranking_mode!r}")


@dataclass(frozen=True)
class SplitRecord:
    """Audit record of one binary split (enough to recheck it from scratch)."""

    level: int                 # 1-based level of this split
    parent: int                # subset index within level-1
    members: np.ndarray        # global token ids in final descending-key order
    centroid1: np.ndarray      # centroids that produced the final ranking (f64)
    centroid2: np.ndarray


@dataclass
class ClusterAssignment:
    """Output of balanced hierarchical clustering over N tokens."""

    n_tokens: int
    config: GroupingConfig
    levels: list                    # levels[k]: array (N,) token -> subset in [0, 2^k)
    final_clusters: list            # 2^K arrays of token ids (sorted-order, overlap applied)
    overlap_members: list           # per last-level sibling pair: the 2n shared ids
    splits: list = field(default_factory=list)   # SplitRecords, all levels
    final_centroids: np.ndarray | None = None    # (2^K, C) f64 means of final clusters

    @property
    def num_clusters(self):
        return len(self.final_clusters)


@dataclass(frozen=True)
class BinarySplit:
    c1: np.ndarray            # local indices, first half of the sorted list
    c2: np.ndarray
    order: np.ndarray         # full descending-key permutation of [0, 2m)
    centroid1: np.ndarray     # centroids used for the final ranking (f64)
    centroid2: np.ndarray
    keys: np.ndarray          # final ranking keys (f64)


def _clamp_away_from_zero(s, eps=RATIO_CLAMP):
    # sign-preserving; exact zero counts as positive
    return np.where(np.abs(s) < eps, np.where(s < 0.0, -eps, eps), s)


def ranking_keys(tokens, c1, c2, mode="ratio", token_norms=None):
    """Per-token membership key against two centroids (float64).

    Equivalent to two ``cosine_to_centroid`` calls, but both dot products
    share one pass over the token rows (the hot loop of the hierarchy).
    """
    t = np.asarray(tokens, dtype=np.float64)
    both = np.stack([np.asarray(c1, dtype=np.float64),
                     np.asarray(c2, dtype=np.float64)])
    dots = np.einsum("nc,kc->nk", t, both)
    tn = floored_token_norms(t) if token_norms is None else token_norms
    cn = np.maximum(np.sqrt(np.einsum("kc,kc->k", both, both)), NORM_FLOOR)
    s1 = dots[:, 0] / (tn * cn[0])
    s2 = dots[:, 1] / (tn * cn[1])
    if os.environ.get("BOAT_FAULT") == "ratio":
        s1, s2 = s2, s1  # deliberate corruption for the self-test harness
    if mode == "ratio":
        return s1 / _clamp_away_from_zero(s2)
    if mode == "difference":
        return s1 - s2
    raise ValueError(f"unknown ranking_mode {mode!r}")


def balanced_binary_cluster(tokens, iters=5, ranking_mode="ratio", trace=None):
    """Split 2m tokens into two size-m clusters by iterated ranked halving.

    Centroids start as the means of the first and second halves in the given
    token order.  Each iteration ranks all tokens by ``ranking_keys``, sorts
    descending (stable, ascending-index ties), assigns the first half of the
    sorted list to cluster 1 and the rest to cluster 2, then recomputes the
    centroids as the cluster means.  Returns a :class:`BinarySplit` whose
    centroids are the pair that produced the final ranking.

    ``trace``, if a list, receives one ``(keys, order)`` tuple per iteration.
    """
    t = np.asarray(tokens)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if t.ndim != 2:
        raise ValueError("tokens must be (2m, C)")
    if t.shape[0] < 2 or t.shape[0] % 2:
        raise ValueError(f"token count must be even and >= 2, got {t.shape[0]}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tokens contain NaN/Inf")
    return _binary_split(np.asarray(t, dtype=np.float64), iters,
                         ranking_mode, trace)


def _binary_split(t64, iters, ranking_mode, trace=None, tn=None):
    # validated float64 input; norms are loop-invariant, compute them once
    if t64.shape[0] < 2 or t64.shape[0] % 2:
        raise ValueError(f"token count must be even and >= 2, got {t64.shape[0]}")
    m = t64.shape[0] // 2
    if tn is None:
        tn = floored_token_norms(t64)
    c1 = t64[:m].mean(axis=0)
    c2 = t64[m:].mean(axis=0)
    keys = order = None
    for _ in range(iters):
        keys = ranking_keys(t64, c1, c2, ranking_mode, tn)
        order = stable_argsort_desc(keys)
        if trace is not None:
            trace.append((keys.copy(), order.copy()))
        ranked_c1, ranked_c2 = c1, c2
        c1 = t64[order[:m]].mean(axis=0)
        c2 = t64[order[m:]].mean(axis=0)
    return BinarySplit(order[:m].copy(), order[m:].copy(), order,
                       ranked_c1, ranked_c2, keys)


def overlap_split(sorted_order, n):
    """Overlapping last-level split of a descending-sorted 2m-token list.

    Cluster 1 takes the first m+n entries, cluster 2 the last m+n, so the
    clusters share exactly the middle 2n entries.  n=0 reduces to the plain
    halving.
    """
    order = np.asarray(sorted_order)
    if order.ndim != 1 or order.shape[0] % 2:
        raise ValueError("sorted_order must be a flat even-length index list")
    m = order.shape[0] // 2
    if not 0 <= n < m:
        raise ValueError(f"overlap n={n} must satisfy 0 <= n < m={m}")
    return order[:m + n].copy(), order[m - n:].copy()


def balanced_hierarchical_cluster(tokens, cfg):
    """K levels of balanced binary clustering -> 2^K equal clusters.

    Each level splits every subset of the previous level independently.
    Child subsets keep the descending-key order produced by their parent
    split, which is also the order Algorithm-style centroid initialization
    (mean of first half vs. mean of second half) sees at the next level.
    Overlap, when configured, applies only at the last level; centroids are
    always computed from the non-overlapping halves.
    """
    t = np.asarray(tokens)
    if t.ndim != 2:
        raise ValueError("tokens must be (N, C)")
    n_tokens = t.shape[0]
    k_levels = cfg.levels
    if n_tokens % (1 << k_levels):
        raise ValueError(f"token count {n_tokens} not divisible by 2^{k_levels}")
    m_final = n_tokens >> k_levels
    if k_levels > 0 and cfg.overlap >= m_final:
        raise ValueError(f"overlap n={cfg.overlap} must be < final cluster size {m_final}")
    t64 = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t64)):
        raise ValueError("tokens contain NaN/Inf")
    tn_all = floored_token_norms(t64)  # vectors never move, norms never change

    levels = [np.zeros(n_tokens, dtype=np.int64)]
    subsets = [np.arange(n_tokens)]
    splits = []
    final_clusters = []
    overlap_members = []

    for k in range(1, k_levels + 1):
        level_map = np.empty(n_tokens, dtype=np.int64)
        next_subsets = []
        for s_idx, subset in enumerate(subsets):
            res = _binary_split(t64[subset], cfg.iters, cfg.ranking_mode,
                                tn=tn_all[subset])
            members = subset[res.order]
            m = subset.shape[0] // 2
            left, right = members[:m], members[m:]
            level_map[left] = 2 * s_idx
            level_map[right] = 2 * s_idx + 1
            splits.append(SplitRecord(k, s_idx, members, res.centroid1, res.centroid2))
            next_subsets.extend((left, right))
            if k == k_levels:
                n_ov = cfg.overlap
                cl, cr = overlap_split(members, n_ov)
                final_clusters.extend((cl, cr))
                overlap_members.append(members[m - n_ov:m + n_ov].copy())
        subsets = next_subsets
        levels.append(level_map)

    if k_levels == 0:
        final_clusters = [np.arange(n_tokens)]

    centroids = np.stack([t64[c].mean(axis=0) for c in final_clusters])
    return ClusterAssignment(n_tokens, cfg, levels, final_clusters,
                             overlap_members, splits, centroids)


@dataclass(frozen=True)
class KMeansGrouping:
    groups: list                  # equal-size index arrays, sort-and-divide order
    cluster_index: np.ndarray     # (N,) raw K-means cluster per token
    centroids: np.ndarray         # (k, C) final centroids, float64


def kmeans_sort_divide(tokens, num_clusters, group_size, iters=10, seed=0):
    """Baseline grouper: K-means, then sort by cluster id and chunk equally.

    Standard Lloyd iterations with seeded centroid draws from the tokens;
    an emptied cluster is reseeded from the token farthest from its current
    centroid (deterministic, lowest index on ties).  Tokens are then sorted
    by (cluster index, original index) and divided into N/group_size equal
    groups, which can split large clusters across groups and merge small
    ones into the same group.
    """
    t = np.asarray(tokens, dtype=np.float64)
    n = t.shape[0]
    if num_clusters < 1 or num_clusters > n:
        raise ValueError(f"num_clusters must be in [1, {n}]")
    if group_size < 1 or n % group_size:
        raise ValueError(f"group_size {group_size} must divide token count {n}")
    stream = Stream(seed).child("kmeans-init")
    centroids = t[stream.choice_without_replacement(n, num_clusters)].copy()

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = (np.einsum("nc,nc->n", t, t)[:, None]
              - 2.0 * np.einsum("nc,kc->nk", t, centroids)
              + np.einsum("kc,kc->k", centroids, centroids)[None, :])
        assign = np.argmin(d2, axis=1)  # ties: lowest cluster index
        counts = np.bincount(assign, minlength=num_clusters)
        for empty in np.flatnonzero(counts == 0):
            dist_own = d2[np.arange(n), assign]
            dist_own[counts[assign] < 2] = -np.inf  # don't orphan a singleton
            farthest = int(np.argmax(dist_own))
            counts[assign[farthest]] -= 1
            assign[farthest] = empty
            counts[empty] = 1
        for c in range(num_clusters):
            centroids[c] = t[assign == c].mean(axis=0)

    order = np.argsort(assign, kind="stable")
    groups = [order[i:i + group_size].copy() for i in range(0, n, group_size)]
    return KMeansGrouping(groups, assign, centroids)


def sign_projection_buckets(tokens, projections):
    """Bucket ids from sign random projections: bit j set iff <t, p_j> > 0."""
    t = np.asarray(tokens, dtype=np.float64)
    p = np.asarray(projections, dtype=np.float64)
    bits = np.einsum("nc,bc->nb", t, p) > 0.0
    weights = 1 << np.arange(p.shape[0], dtype=np.int64)
    return bits @ weights


def lsh_bucketize(tokens, num_bits, seed=0):
    """Baseline grouper: hash tokens to 2^num_bits buckets by sign random
    projections drawn from the seed (independent of the token data)."""
    if num_bits < 1:
        raise ValueError("num_bits must be >= 1")
    t = np.asarray(tokens)
    proj = Stream(seed).child("lsh-projections").normal((num_bits, t.shape[1]))
    return sign_projection_buckets(t, proj)


def lsh_sort_divide(tokens, num_bits, group_size, seed=0):
    """LSH buckets equalized by the same sort-and-divide step as K-means."""
    n = np.asarray(tokens).shape[0]
    if group_size < 1 or n % group_size:
        raise ValueError(f"group_size {group_size} must divide token count {n}")
    buckets = lsh_bucketize(tokens, num_bits, seed)
    order = np.argsort(buckets, kind="stable")
    return [order[i:i + group_size].copy() for i in range(0, n, group_size)], buckets
