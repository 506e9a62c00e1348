"""Bilateral local attention: balanced feature-space clustering plus shifted
window attention, composed into a four-stage image classification pyramid.

The package is deterministic end to end: fixed-order numeric kernels (with a
compiled core and a bit-identical NumPy fallback), counter-based random
streams, and a self-checking clustering pipeline.  ``boat.oracle`` holds the
brute-force references used by the test suite; it is intentionally not
re-exported here.
"""

from .backend import (backend_name, has_extension, num_threads,
                      set_num_threads, use_backend)
from .numeric import (DTYPES, ShapeError, check_finite, conv2d,
                      cosine_similarity, cosine_to_centroid, gather_rows,
                      layer_norm, matmul, scatter_rows, softmax_lastdim,
                      stable_argsort_desc)
from .rng import Stream
from .grouping import (BinarySplit, ClusterAssignment, GroupingConfig,
                       KMeansGrouping, SplitRecord, balanced_binary_cluster,
                       balanced_hierarchical_cluster, kmeans_sort_divide,
                       lsh_bucketize, lsh_sort_divide, overlap_split,
                       ranking_keys, sign_projection_buckets)
from .attention import (AttentionParams, WindowConfig, attention_backward,
                        fsla_forward, init_attention_params,
                        isla_swin_forward, relative_position_index,
                        scaled_dot_attention)
from .model import (BlockParams, ModelConfig, ModelParams, StageGeometry,
                    StageParams, StageTrace, bla_block_forward, boat_forward,
                    cluster_levels_for, count_params, estimate_flops,
                    estimate_macs, fsla_attention_matrix_macs, gelu,
                    global_attention_matrix_macs, init_model_params,
                    macs_breakdown, mlp_forward, parameter_specs,
                    parameter_tensors, patch_embed, stage_geometry,
                    stage_merge, tiny_config)
from .boatt import (BoattError, ConfigError, load_model_config,
                    load_model_params, load_weights, read_tensor,
                    save_model_config, save_weights, write_tensor)

__version__ = "0.1.0"
