"""Social-anchor tag refinement: co-clustered anchors, graph-regularized
tensor completion and anchor-aware tag assignment, plus a planted-model
harness and evaluation utilities."""

from .anchors import (
    AnchorSet,
    CoClustering,
    cocluster,
    image_user_matrix,
    random_anchor_units,
    select_anchor_units,
)
from .assign import (
    AssignConfig,
    AssignmentResult,
    TagRanking,
    assign_all,
    rank_tags,
    read_retagged,
    write_retagged,
)
from .completion import (
    CompletionConfig,
    CompletionNumericsError,
    CompletionState,
    gradient,
    load_checkpoint,
    multiplicative_step,
    objective,
    save_checkpoint,
    solve,
)
from .config import ConfigError, PipelineConfig, merge_config, parse_config_file
from .data import (
    DataFormatError,
    Dataset,
    DatasetPaths,
    MissingFeatureError,
    TaxonomyCycleError,
    build_observed_tensor,
    load_dataset,
    split_anchor_tensors,
    write_dataset,
)
from .evaluate import (
    GroundTruth,
    MetricsReport,
    average_precision,
    build_report,
    fscore,
    load_ground_truth,
)
from .graphs import AdjacencySet, build_adjacency, lin_similarity, tag_intra_adjacency
from .pipeline import Pipeline, dataset_fingerprint
from .planted import PlantedConfig, PlantedDataset, generate_planted, write_planted
from .tensors import (
    DimensionMismatchError,
    SparseTensor3,
    accumulate_mode,
    frob_norm_sq,
    mode_product,
    mode_product_sparse,
)

__version__ = "0.1.0"

__all__ = [
    "AdjacencySet",
    "AnchorSet",
    "AssignConfig",
    "AssignmentResult",
    "CoClustering",
    "CompletionConfig",
    "CompletionNumericsError",
    "CompletionState",
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "DatasetPaths",
    "DimensionMismatchError",
    "GroundTruth",
    "MetricsReport",
    "MissingFeatureError",
    "Pipeline",
    "PipelineConfig",
    "PlantedConfig",
    "PlantedDataset",
    "SparseTensor3",
    "TagRanking",
    "TaxonomyCycleError",
    "accumulate_mode",
    "assign_all",
    "average_precision",
    "build_adjacency",
    "build_observed_tensor",
    "build_report",
    "cocluster",
    "dataset_fingerprint",
    "fscore",
    "frob_norm_sq",
    "generate_planted",
    "gradient",
    "image_user_matrix",
    "lin_similarity",
    "load_checkpoint",
    "load_dataset",
    "load_ground_truth",
    "merge_config",
    "mode_product",
    "mode_product_sparse",
    "multiplicative_step",
    "objective",
    "parse_config_file",
    "rank_tags",
    "random_anchor_units",
    "read_retagged",
    "save_checkpoint",
    "select_anchor_units",
    "solve",
    "split_anchor_tensors",
    "tag_intra_adjacency",
    "write_dataset",
    "write_planted",
    "write_retagged",
]
