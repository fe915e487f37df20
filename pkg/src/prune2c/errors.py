"""Exception hierarchy for the toolchain.

Input/validation problems (bad model files, bad datasets, bad arguments)
derive from :class:`InputError`; failures of later pipeline stages
(code generation, host compilation, exploration) derive from
:class:`PipelineError`. The CLI maps the two branches onto distinct
exit codes.
"""

from __future__ import annotations


class Prune2cError(Exception):
    """Base class for all toolchain errors."""


class InputError(Prune2cError):
    """Invalid user-supplied input (model, dataset, rates, flags)."""


class GraphError(InputError):
    """Problem with a network graph. Carries the offending node id when known."""

    def __init__(self, message: str, node_id: str | None = None):
        if node_id is not None:
            message = f"node '{node_id}': {message}"
        super().__init__(message)
        self.node_id = node_id


class SchemaError(GraphError):
    """Model file does not match the expected JSON schema."""


class ShapeError(GraphError):
    """Shape inference failed or tensor shapes are inconsistent."""


class UnsupportedOpError(GraphError):
    """Operator kind not supported by the toolchain."""


class TopologyError(GraphError):
    """Graph is not a valid linear chain (duplicate ids, empty, branching)."""


class DatasetError(InputError):
    """Dataset file is malformed or incompatible with the model."""


class MetricError(InputError):
    """Quality metric cannot be computed (wrong task kind, degenerate labels)."""


class PredictionShapeError(MetricError):
    """Model output shape does not match what the metric needs.

    Raised separately from generic MetricError because sensitivity probes
    treat it as a quality-threshold crossing rather than a hard failure.
    """


class PruneError(InputError):
    """Invalid pruning request (rate out of range, unknown layer, bad step)."""


class PipelineError(Prune2cError):
    """Failure in a downstream pipeline stage."""


class CodegenError(PipelineError):
    """C code emission failed."""


class CompileError(PipelineError):
    """Host C compiler invocation failed."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class HarnessError(PipelineError):
    """Harness template missing or instantiation failed."""


class ExploreError(PipelineError):
    """Design-space exploration could not proceed."""
