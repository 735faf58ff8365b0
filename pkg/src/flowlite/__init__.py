"""flowlite: a desk-scale, end-to-end optical flow learning pipeline.

Submodules:
    flowcore   -- flow-field data model, .flo I/O, color coding, metrics
    scenegen   -- procedural synthetic dataset generation with exact ground truth
    tensornet  -- minimal reverse-mode autodiff over 4-d tensors + Adam
    corrlayer  -- correlation (cost volume) layer, forward and backward
    models     -- the two flow network variants and the refinement decoder
    augment    -- online geometric + photometric augmentation
    trainer    -- training loop, schedules, fine-tuning, evaluation
    varrefine  -- coarse-to-fine variational refinement of a coarse flow
    cli        -- command line entry point
"""

from flowlite.flowcore import (
    FlowField,
    MetricsReport,
    read_flo,
    write_flo,
    compute_metrics,
    flow_to_color,
)

__all__ = [
    "FlowField",
    "MetricsReport",
    "read_flo",
    "write_flo",
    "compute_metrics",
    "flow_to_color",
]

__version__ = "0.1.0"
