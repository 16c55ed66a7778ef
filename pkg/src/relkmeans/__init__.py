"""Approximate k-means for acyclic relational databases.

The pipeline samples k-means++ centers directly from the (never
materialized) join via rejection sampling over a laminar box forest,
weighs the sampled centers with donut-based test sampling, and clusters
the resulting weighted coreset.
"""

from .relational import (
    BoxRect,
    CyclicVerdict,
    FeatureId,
    JoinTree,
    SchemaError,
    SchemaGraph,
    Table,
    filter_by_box,
    gyo_reduce,
    load_database,
    tables_to_schema,
)
from .sumprod import (
    CostPair,
    GroupedResult,
    JoinEvaluator,
    SemiringSpec,
    boxed_cost_grouped,
    costpair_semiring,
    counting_semiring,
    eval_sumprod,
    eval_sumprod_grouped,
)
from .boxes import LaminarForest, build_boxes, smallest_containing_box
from .sampling import SamplerConfig, SamplingState, run_kmeanspp
from .weighting import WeightConfig, WeightedCoreset, compute_weights
from .clustering import (
    WeightedPointSet,
    relational_cost,
    solve_weighted_kmeans,
    weighted_kmeanspp_seed,
    weighted_lloyd,
)

__all__ = [
    "LaminarForest",
    "SamplerConfig",
    "SamplingState",
    "WeightConfig",
    "WeightedCoreset",
    "WeightedPointSet",
    "build_boxes",
    "compute_weights",
    "relational_cost",
    "run_kmeanspp",
    "smallest_containing_box",
    "solve_weighted_kmeans",
    "weighted_kmeanspp_seed",
    "weighted_lloyd",
    "BoxRect",
    "CostPair",
    "CyclicVerdict",
    "FeatureId",
    "GroupedResult",
    "JoinEvaluator",
    "JoinTree",
    "SchemaError",
    "SchemaGraph",
    "SemiringSpec",
    "Table",
    "boxed_cost_grouped",
    "costpair_semiring",
    "counting_semiring",
    "eval_sumprod",
    "eval_sumprod_grouped",
    "filter_by_box",
    "gyo_reduce",
    "load_database",
    "tables_to_schema",
]
