"""Command-line interface.

Subcommands: ``cluster`` (group tokens from a tensor file), ``forward``
(run the classifier on one image tensor), ``report`` (parameter and
compute-cost summary for a config), ``selftest`` (named invariant checks)
and ``bench`` (backend timing comparison).

Exit codes: 0 success, 1 usage error, 2 validation/shape/format error,
3 file I/O error.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import backend, boatt
from .grouping import (GroupingConfig, balanced_hierarchical_cluster,
                       kmeans_sort_divide, lsh_sort_divide)
from .model import (boat_forward, count_params, estimate_flops, estimate_macs,
                    fsla_attention_matrix_macs, global_attention_matrix_macs,
                    init_model_params, macs_breakdown, stage_geometry)
from .numeric import cosine_to_centroid

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for
    # validation failures, so remap to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    parser = _Parser(prog="boat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="group tokens from a BOATT tensor")
    p.add_argument("--tokens", required=True, help="BOATT file, (N, C) tensor")
    p.add_argument("--method", choices=("hierarchical", "kmeans", "lsh"),
                   default="hierarchical")
    p.add_argument("--levels", type=int, default=2,
                   help="binary split levels K (hierarchical)")
    p.add_argument("--iters", type=int, default=5,
                   help="refinement iterations per split (and k-means rounds)")
    p.add_argument("--overlap", type=int, default=0,
                   help="last-level overlap half-width n (hierarchical)")
    p.add_argument("--ranking-mode", choices=("ratio", "difference"),
                   default="ratio")
    p.add_argument("--clusters", type=int, default=8,
                   help="k-means cluster count")
    p.add_argument("--bits", type=int, default=4, help="LSH projection count")
    p.add_argument("--group-size", type=int, default=0,
                   help="equalized group size (kmeans/lsh); 0 = N/clusters")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the baseline methods")
    p.add_argument("--spatial", type=int, nargs=2, metavar=("H", "W"),
                   help="token grid for the PGM rendering")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("forward", help="classify one image tensor")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--weights", help="flat BOATT weight vector")
    p.add_argument("--random-seed", type=int,
                   help="initialize fresh weights from this seed instead")
    p.add_argument("--input", required=True, help="BOATT image tensor (3, H, W)")
    p.add_argument("--out", required=True, help="where to write the logits")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("report", help="parameter and compute-cost summary")
    p.add_argument("--config", required=True, help="model config JSON")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run named invariant checks")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--quick", action="store_true", help="core checks (default)")
    g.add_argument("--full", action="store_true", help="all checks")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("bench", help="compare kernel backends")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--forward", action="store_true",
                   help="include a small end-to-end forward")
    p.set_defaults(func=cmd_bench)
    return parser


def _read_tokens(path):
    tokens = boatt.read_tensor(path)
    if tokens.ndim != 2:
        raise boatt.BoattError(f"{path}: tokens must be rank 2, got rank {tokens.ndim}")
    return tokens


def _write_grouping_outputs(outdir, tokens, level_maps, centroids, stats,
                            spatial, num_ids):
    os.makedirs(outdir, exist_ok=True)
    boatt.write_levels_csv(os.path.join(outdir, "assignment.csv"), level_maps)
    boatt.write_tensor(os.path.join(outdir, "centroids.boatt"), centroids)
    boatt.write_stats(os.path.join(outdir, "stats.txt"), stats)
    if spatial is not None:
        h, w = spatial
        if h * w != tokens.shape[0]:
            raise ValueError(f"--spatial {h}x{w} does not cover "
                             f"{tokens.shape[0]} tokens")
        boatt.write_pgm(os.path.join(outdir, "clusters.pgm"),
                        np.asarray(level_maps[-1]).reshape(h, w), num_ids)


def _mean_cluster_cosine(tokens, clusters, centroids):
    vals = [float(cosine_to_centroid(tokens[c], centroids[i]).mean())
            for i, c in enumerate(clusters)]
    return sum(vals) / len(vals)


def cmd_cluster(args):
    backend.set_num_threads(args.threads)
    tokens = _read_tokens(args.tokens)
    n, c = tokens.shape

    if args.method == "hierarchical":
        cfg = GroupingConfig(args.levels, args.iters, args.overlap,
                             args.ranking_mode)
        a = balanced_hierarchical_cluster(tokens, cfg)
        size = (n >> cfg.levels) + (cfg.overlap if cfg.levels else 0)
        stats = [
            f"method: hierarchical",
            f"tokens: {n}",
            f"channels: {c}",
            f"levels: {cfg.levels}",
            f"iters: {cfg.iters}",
            f"ranking_mode: {cfg.ranking_mode}",
            f"clusters: {a.num_clusters}",
            f"cluster_size: {size}",
            f"overlap: {cfg.overlap}",
            f"shared_per_sibling_pair: {2 * cfg.overlap if cfg.levels else 0}",
            f"mean_token_centroid_cosine: "
            f"{_mean_cluster_cosine(tokens, a.final_clusters, a.final_centroids):.12f}",
        ]
        _write_grouping_outputs(args.out, tokens, a.levels, a.final_centroids,
                                stats, args.spatial, a.num_clusters)
        print(f"hierarchical: {a.num_clusters} clusters of {size} "
              f"({2 * cfg.overlap if cfg.levels else 0} shared per pair) -> {args.out}")
        return EXIT_OK

    group_size = args.group_size
    if group_size == 0:
        if n % args.clusters:
            raise ValueError(f"--group-size required: {args.clusters} does "
                             f"not divide {n} tokens")
        group_size = n // args.clusters

    if args.method == "kmeans":
        res = kmeans_sort_divide(tokens, args.clusters, group_size,
                                 iters=args.iters, seed=args.seed)
        group_map = np.empty(n, dtype=np.int64)
        for gi, grp in enumerate(res.groups):
            group_map[grp] = gi
        counts = np.bincount(res.cluster_index, minlength=args.clusters)
        stats = [
            "method: kmeans",
            f"tokens: {n}",
            f"channels: {c}",
            f"clusters: {args.clusters}",
            f"iters: {args.iters}",
            f"seed: {args.seed}",
            f"group_size: {group_size}",
            f"groups: {len(res.groups)}",
            f"cluster_size_min: {int(counts.min())}",
            f"cluster_size_max: {int(counts.max())}",
        ]
        _write_grouping_outputs(args.out, tokens, [res.cluster_index, group_map],
                                res.centroids, stats, args.spatial,
                                len(res.groups))
        print(f"kmeans: {args.clusters} clusters equalized into "
              f"{len(res.groups)} groups of {group_size} -> {args.out}")
        return EXIT_OK

    groups, buckets = lsh_sort_divide(tokens, args.bits, group_size, args.seed)
    group_map = np.empty(n, dtype=np.int64)
    for gi, grp in enumerate(groups):
        group_map[grp] = gi
    centroids = np.stack([np.asarray(tokens, dtype=np.float64)[g].mean(axis=0)
                          for g in groups])
    stats = [
        "method: lsh",
        f"tokens: {n}",
        f"channels: {c}",
        f"bits: {args.bits}",
        f"seed: {args.seed}",
        f"buckets_used: {int(np.unique(buckets).size)}",
        f"group_size: {group_size}",
        f"groups: {len(groups)}",
    ]
    _write_grouping_outputs(args.out, tokens, [buckets, group_map], centroids,
                            stats, args.spatial, len(groups))
    print(f"lsh: {int(np.unique(buckets).size)} buckets equalized into "
          f"{len(groups)} groups of {group_size} -> {args.out}")
    return EXIT_OK


def cmd_forward(args):
    backend.set_num_threads(args.threads)
    if args.weights and args.random_seed is not None:
        raise ValueError("--weights and --random-seed are mutually exclusive")
    cfg = boatt.load_model_config(args.config)
    if args.weights:
        params = boatt.load_model_params(args.weights, cfg)
    else:
        seed = 0 if args.random_seed is None else args.random_seed
        params = init_model_params(cfg, seed=seed)
    img = boatt.read_tensor(args.input)
    if img.ndim != 3:
        raise boatt.BoattError(f"{args.input}: image must be rank 3, got "
                               f"rank {img.ndim}")
    logits, trace = boat_forward(img.astype(np.float32), cfg, params,
                                 return_stage_info=True)
    for t in trace:
        print(f"stage {t.stage}: {t.tokens} tokens x {t.channels} channels "
              f"({t.height}x{t.width})")
    boatt.write_tensor(args.out, logits)
    print(f"logits -> {args.out} (argmax {int(np.argmax(logits))})")
    return EXIT_OK


def cmd_report(args):
    cfg = boatt.load_model_config(args.config)
    total = count_params(cfg)
    baseline = count_params(dataclasses.replace(cfg, fsla_layout="none"))
    macs = estimate_macs(cfg)
    print(f"config: {cfg.height}x{cfg.width}, channels {cfg.channels}, "
          f"depths {list(cfg.depths)}, heads {list(cfg.heads)}, "
          f"window {cfg.window_size}, fsla_layout {cfg.fsla_layout}")
    print(f"parameters: {total:,} ({total / 1e6:.2f}M)")
    print(f"parameters without feature-space attention: {baseline:,} "
          f"({baseline / 1e6:.2f}M), delta {(total - baseline) / 1e6:.2f}M")
    print(f"multiply-accumulates: {macs:,} ({macs / 1e9:.2f} GMACs)")
    print(f"flops (2 per MAC): {estimate_flops(cfg):,} "
          f"({estimate_flops(cfg) / 1e9:.2f} GFLOPs)")
    for geo in stage_geometry(cfg):
        line = (f"stage {geo.stage}: {geo.height}x{geo.width} grid, "
                f"{geo.tokens} tokens x {geo.channels} ch, "
                f"window {cfg.window_size}, K={geo.levels} "
                f"({1 << geo.levels} clusters of {geo.tokens >> geo.levels}"
                f"{f' +{geo.overlap} overlap' if geo.overlap else ''}), "
                f"fsla in {sum(geo.fsla_blocks)}/{len(geo.fsla_blocks)} blocks")
        print(line)
        if geo.levels:
            ratio = (fsla_attention_matrix_macs(geo.tokens, geo.channels,
                                                geo.levels, 0)
                     / global_attention_matrix_macs(geo.tokens, geo.channels))
            print(f"  attention-matrix cost vs global (n=0): 1/{round(1 / ratio)}")
    print("breakdown (MACs):")
    for name, val in macs_breakdown(cfg).items():
        print(f"  {name:<24}{val:>16,}")
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest
    failures = run_selftest(full=args.full)
    return EXIT_OK if failures == 0 else EXIT_VALIDATION


def cmd_bench(args):
    from .bench import run_bench
    run_bench(threads=args.threads, include_forward=args.forward)
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, IndexError) as exc:  # includes Shape/Boatt/Config errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
