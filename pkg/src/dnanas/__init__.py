"""Block-wise distillation architecture search on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .cost import Cost, CostTable, build_cost_table, model_cost, op_cost
from .distill import BlockDistiller, SPOSSupernet, sample_path, train_block_sequential
from .evaluate import EvalRecord, PathRanking, dfs_evaluate, naive_evaluate, rank_block, relative_l1
from .search import Constraint, NoFeasibleModel, SearchResult, brute_force_search, pareto_sweep, traversal_search
from .space import (ArchEncoding, BlockChoice, SupernetConfig, assemble_standalone, desk_config, drop_rate,
                    sample_architectures, space_size, table1_config)
from .teacher import FeatureCache, TeacherClassifier, extract_features
from .bench import StandaloneClassifier, rank_correlation, retrain_standalone

__all__ = [
    "ArchEncoding", "BlockChoice", "BlockDistiller", "Constraint", "Cost", "CostTable", "EvalRecord", "FeatureCache",
    "NoFeasibleModel", "PathRanking", "RunConfig", "SPOSSupernet", "SearchResult", "StandaloneClassifier",
    "SupernetConfig", "TeacherClassifier", "assemble_standalone", "brute_force_search", "build_cost_table",
    "desk_config", "dfs_evaluate", "drop_rate", "extract_features", "load_config", "model_cost", "naive_evaluate",
    "op_cost", "pareto_sweep", "rank_block", "rank_correlation", "relative_l1", "retrain_standalone",
    "sample_architectures", "sample_path", "space_size", "table1_config", "train_block_sequential",
    "traversal_search",
]
