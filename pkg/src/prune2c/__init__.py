"""prune2c: sensitivity-guided structural pruning of small neural networks
with standalone C code generation and Pareto design-space exploration."""

__version__ = "0.1.0"

from .ir import (  # noqa: F401
    CostReport, Graph, Node, Tensor, count_cost, design_space_size,
    infer_shapes, validate_graph,
)
from .model_io import graph_from_obj, graph_to_obj, load_graph, save_graph  # noqa: F401
from .interpreter import (  # noqa: F401
    Dataset, QualityMetric, dataset_from_bytes, evaluate, forward,
    forward_batch, load_dataset, roc_auc, save_dataset,
)
from .pruning import (  # noqa: F401
    LayerSensitivity, PrunedVariant, PruneSchedule, gwp_variant, l1_rank,
    make_schedule, prune_structural, sensitivity_analysis, surviving_outputs,
)
from .graph_opt import elide_padding, fuse_activation, fuse_matmul_add, optimize  # noqa: F401
from .memplan import MemoryPlan, plan_memory  # noqa: F401
from .cemit import EmittedProgram, emit, estimate_footprint  # noqa: F401
from .exploration import (  # noqa: F401
    ConfigRecord, ExplorationConfig, TargetSpec, explore, feasibility_report,
    pareto_front, write_manifest, write_report_csv,
)
