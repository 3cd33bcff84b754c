"""Checkpoint merging toolkit: layer-wise anchored merging, isotropic /
performance-weighted / Fisher-weighted baselines, a parameter-discrepancy
profiler, and a deterministic toy harness for end-to-end validation."""

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointFormatError,
    TensorRecord,
    inspect,
    load,
    save,
)
from .alignment import (
    AlignmentError,
    LayerGroup,
    NoSharedParametersError,
    SharedAlignment,
    group_layers,
    shared_parameters,
)
from .merge import (
    FisherWeights,
    MergeError,
    MergeSchedule,
    NonFiniteTensorError,
    ScheduleError,
    ShapeConflictError,
    compute_schedule,
    fisher_merge,
    isotropic_merge,
    layerwise_merge,
    scalar_weighted_merge,
)
from .discrepancy import DiscrepancyProfile, ProfileRow, discrepancy_profile, emit_profile

__version__ = "0.1.0"
