"""Merge-weight schedules and the four checkpoint-merging strategies.

The layer-wise strategy keeps an anchor model's task-specific layers
verbatim and blends the shared layers with per-layer weights that start
uniform and decay linearly to zero for the non-anchor models, so the last
shared layer is owned exclusively by the anchor. Isotropic, performance-
weighted and diagonal-Fisher-weighted merging are provided as baselines.

Numerics
--------
All accumulation happens in float64 and is cast to the anchor's storage
dtype at write-out. Per-element contributions are sorted by value before
reduction, which makes every strategy exactly invariant to permutations of
the non-anchor models (the contribution multiset does not depend on model
order). Schedule weights are derived in exact rational arithmetic and
rounded to float64 once, so schedule identities (rows summing to one, the
anchor-dominance gap) hold exactly on the rational side and to within one
rounding on the float side.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .alignment import NON_GRADIENT_KINDS, SharedAlignment
from .checkpoint import Checkpoint, TensorRecord


class MergeError(Exception):
    pass


class ScheduleError(MergeError):
    """Invalid schedule parameters (start layer or first-layer weight)."""


class NonFiniteTensorError(MergeError):
    pass


class ShapeConflictError(MergeError):
    """Same tensor name with different shapes: only layer-wise merging applies."""


class FisherInputError(MergeError):
    pass


@dataclass
class MergeSchedule:
    """Per-layer, per-model merge weights.

    ``weights[i, j-1]`` is the coefficient of model ``i`` at shared layer
    ``j``. Constructing a schedule only requires rows that are non-negative
    and sum to one; the anchor-dominance and last-layer-ownership
    guarantees hold for schedules produced by :func:`compute_schedule`,
    whose exact rational weights are kept in ``exact_weights``.
    """

    model_count: int
    layer_count: int
    anchor: int
    start_layer: int
    first_layer_weight: float
    weights: np.ndarray
    exact_weights: list[list[Fraction]] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.model_count, self.layer_count):
            raise ScheduleError(
                f"weight matrix shape {self.weights.shape} does not match "
                f"({self.model_count}, {self.layer_count})"
            )
        if not 0 <= self.anchor < self.model_count:
            raise ScheduleError(f"anchor index {self.anchor} out of range")
        if np.any(self.weights < 0):
            raise ScheduleError("merge weights must be non-negative")
        col_sums = self.weights.sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > 1e-12):
            raise ScheduleError("merge weights must sum to 1 at every layer")

    @classmethod
    def constant(cls, model_count: int, layer_count: int, anchor: int = 0) -> "MergeSchedule":
        """Uniform 1/M weights at every layer (isotropic as a schedule)."""
        w = np.full((model_count, layer_count), 1.0 / model_count)
        return cls(model_count, layer_count, anchor, layer_count, 1.0 / model_count, w)

    def non_anchor_row(self) -> np.ndarray:
        rows = [i for i in range(self.model_count) if i != self.anchor]
        return self.weights[rows[0]] if rows else np.zeros(self.layer_count)


def compute_schedule(
    model_count: int,
    layer_count: int,
    anchor: int,
    start_layer: int = 1,
    first_layer_weight: float | None = None,
) -> MergeSchedule:
    """Build the linearly decaying layer-wise schedule.

    Every non-anchor model gets weight ``w0`` on layers up to
    ``start_layer`` and ``w0 * (L - j) / (L - start_layer)`` beyond it,
    where ``L`` is the shared layer count; the anchor takes the remainder.
    The default ``w0 = (L - 1) / (L * M)`` makes the non-anchor weight at
    layer j equal ``(L - j) / (L * M)`` throughout, decaying to zero at the
    last shared layer, and the anchor's margin over each non-anchor exactly
    ``j / L``. ``w0`` may not exceed ``1 / M`` (anchor dominance); equality
    is allowed with a warning.
    """
    if model_count < 1:
        raise ScheduleError("model count must be >= 1")
    if layer_count < 1:
        raise ScheduleError("shared layer count must be >= 1")
    if not 0 <= anchor < model_count:
        raise ScheduleError(f"anchor index {anchor} out of range for {model_count} models")
    if not 1 <= start_layer <= layer_count:
        raise ScheduleError(
            f"start layer {start_layer} outside [1, {layer_count}]"
        )

    if first_layer_weight is None:
        w0 = Fraction(layer_count - 1, layer_count * model_count)
    else:
        w0 = Fraction(first_layer_weight)
        if w0 < 0:
            raise ScheduleError("first-layer weight must be non-negative")
        if w0 > Fraction(1, model_count):
            raise ScheduleError(
                f"first-layer weight {float(w0)} exceeds 1/{model_count}; "
                "the anchor would no longer dominate"
            )
        if w0 == Fraction(1, model_count) and model_count > 1:
            warnings.warn(
                "first-layer weight equals 1/M: anchor and non-anchor weights "
                "tie at the plateau layers",
                stacklevel=2,
            )

    exact: list[list[Fraction]] = [[Fraction(0)] * layer_count for _ in range(model_count)]
    for j in range(1, layer_count + 1):
        if j >= layer_count:
            non_anchor = Fraction(0)  # last shared layer belongs to the anchor
        elif j <= start_layer:
            non_anchor = w0
        else:
            non_anchor = w0 * Fraction(layer_count - j, layer_count - start_layer)
        for i in range(model_count):
            exact[i][j - 1] = non_anchor
        exact[anchor][j - 1] = 1 - (model_count - 1) * non_anchor

    weights = np.array([[float(w) for w in row] for row in exact])
    return MergeSchedule(
        model_count=model_count,
        layer_count=layer_count,
        anchor=anchor,
        start_layer=start_layer,
        first_layer_weight=float(w0),
        weights=weights,
        exact_weights=exact,
    )


@dataclass(frozen=True)
class FisherWeights:
    """Non-negative diagonal Fisher estimates, aligned by tensor name."""

    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        checked = {}
        for name, arr in self.tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise FisherInputError(f"non-finite Fisher values in '{name}'")
            if np.any(arr < 0):
                raise FisherInputError(f"negative Fisher values in '{name}'")
            checked[name] = arr
        object.__setattr__(self, "tensors", checked)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "FisherWeights":
        return cls({t.name: np.asarray(t.data, dtype=np.float64) for t in ckpt.tensors})

    def to_checkpoint(self, metadata: dict[str, str] | None = None) -> Checkpoint:
        return Checkpoint.from_arrays(self.tensors, metadata)


def _check_finite(ckpts) -> None:
    for i, ckpt in enumerate(ckpts):
        for t in ckpt.tensors:
            if not np.all(np.isfinite(t.data)):
                raise NonFiniteTensorError(
                    f"non-finite values in tensor '{t.name}' of model {i}"
                )


def _reject_shape_conflicts(alignment: SharedAlignment, strategy: str) -> None:
    if alignment.shape_conflicts:
        raise ShapeConflictError(
            f"{strategy} merging cannot combine tensors whose shapes differ "
            f"between models: {list(alignment.shape_conflicts)}; "
            "layer-wise merging keeps them from the anchor instead"
        )


def _stack(ckpts, name, model_index) -> np.ndarray:
    """Float64 stack of one shared tensor across models, in model order."""
    anchor_shape = None
    arrays = []
    for i in model_index:
        arr = np.asarray(ckpts[i].get(name).data, dtype=np.float64)
        if anchor_shape is None:
            anchor_shape = arr.shape
        elif arr.shape != anchor_shape:
            raise MergeError(
                f"shape mismatch for shared tensor '{name}': "
                f"{arr.shape} vs {anchor_shape} (alignment inconsistency)"
            )
        arrays.append(arr)
    return np.ascontiguousarray(np.stack(arrays))


def _sorted_reduce(stack: np.ndarray) -> np.ndarray:
    """Sum along axis 0 after sorting, so the result only depends on the
    multiset of contributions, never on model order."""
    return np.add.reduce(np.sort(stack, axis=0), axis=0)


def _assemble_output(anchor_ckpt, merged_by_name, alignment, strategy, extra=None):
    """Merged checkpoint in the anchor's schema, tagged with merge metadata."""
    tensors = []
    for t in anchor_ckpt.tensors:
        if t.name in merged_by_name:
            data = np.asarray(merged_by_name[t.name]).astype(t.data.dtype, copy=False)
            tensors.append(TensorRecord(t.name, data))
        else:
            tensors.append(TensorRecord(t.name, t.data))
    metadata = {
        "model_id": "merged",
        "merge_strategy": strategy,
        "merge_model_count": str(alignment.model_count),
        "merge_anchor": str(alignment.anchor),
        "merge_shared_layers": str(alignment.n_shared_layers),
    }
    if alignment.anchor_only:
        metadata["merge_anchor_only_count"] = str(len(alignment.anchor_only))
    if extra:
        metadata.update(extra)
    if anchor_ckpt.layer_order() is not None:
        metadata["layer_order"] = anchor_ckpt.metadata["layer_order"]
    return Checkpoint(tensors, metadata)


def _merge_pool(ckpts, alignment, per_layer_weights, strategy, metadata_extra=None):
    """Shared machinery: weighted sums over shared groups, anchor copies
    elsewhere. ``per_layer_weights[j-1]`` is the M-vector for layer j."""
    if alignment.model_count != len(ckpts):
        raise MergeError(
            f"alignment covers {alignment.model_count} models, got {len(ckpts)}"
        )
    _check_finite(ckpts)
    anchor_ckpt = ckpts[alignment.anchor]
    model_index = range(len(ckpts))

    merged_by_name: dict[str, np.ndarray] = {}
    for group in alignment.shared_groups:
        w = np.asarray(per_layer_weights[group.index - 1], dtype=np.float64)
        non_anchor_mass = sum(
            abs(w[i]) for i in model_index if i != alignment.anchor
        )
        for name, _ in group.members:
            if non_anchor_mass == 0.0:
                # Anchor owns this layer outright: copy, don't recompute.
                merged_by_name[name] = anchor_ckpt.get(name).data
                continue
            stack = _stack(ckpts, name, model_index)
            out = _sorted_reduce(stack * w.reshape((-1,) + (1,) * (stack.ndim - 1)))
            merged_by_name[name] = out

    return _assemble_output(anchor_ckpt, merged_by_name, alignment, strategy, metadata_extra)


def layerwise_merge(
    ckpts: list[Checkpoint],
    anchor: int,
    schedule: MergeSchedule,
    alignment: SharedAlignment,
) -> Checkpoint:
    """Merge shared layers under a schedule; keep anchor-only tensors verbatim."""
    if schedule.model_count != len(ckpts):
        raise MergeError(
            f"schedule built for {schedule.model_count} models, got {len(ckpts)}"
        )
    if schedule.layer_count != alignment.n_shared_layers:
        raise MergeError(
            f"schedule built for {schedule.layer_count} shared layers, "
            f"alignment has {alignment.n_shared_layers}"
        )
    if anchor != schedule.anchor or anchor != alignment.anchor:
        raise MergeError("anchor disagrees between schedule, alignment and call")
    per_layer = [schedule.weights[:, j] for j in range(schedule.layer_count)]
    extra = {
        "merge_start_layer": str(schedule.start_layer),
        "merge_first_layer_weight": repr(schedule.first_layer_weight),
    }
    return _merge_pool(ckpts, alignment, per_layer, "layerwise", extra)


def isotropic_merge(ckpts: list[Checkpoint], alignment: SharedAlignment) -> Checkpoint:
    """Plain average of shared tensors; rejects shape-conflicted names."""
    _reject_shape_conflicts(alignment, "isotropic")
    m = len(ckpts)
    uniform = np.full(m, 1.0 / m)
    per_layer = [uniform] * alignment.n_shared_layers
    return _merge_pool(ckpts, alignment, per_layer, "isotropic")


def scalar_weighted_merge(
    ckpts: list[Checkpoint],
    scores: list[float],
    alignment: SharedAlignment,
) -> Checkpoint:
    """Average shared tensors with weights proportional to positive scores.

    Weights are normalized in exact rational arithmetic and rounded once,
    so equal scores reduce bit-for-bit to the isotropic weights.
    """
    _reject_shape_conflicts(alignment, "performance-weighted")
    if len(scores) != len(ckpts):
        raise MergeError(
            f"{len(scores)} performance scores for {len(ckpts)} models"
        )
    for i, s in enumerate(scores):
        if s is None or not np.isfinite(s) or s <= 0:
            raise MergeError(f"performance score of model {i} must be positive, got {s!r}")
    exact = [Fraction(float(s)) for s in scores]
    total = sum(exact)
    weights = np.array([float(s / total) for s in exact])
    per_layer = [weights] * alignment.n_shared_layers
    extra = {"merge_scores": ",".join(repr(float(s)) for s in scores)}
    return _merge_pool(ckpts, alignment, per_layer, "scalar", extra)


def fisher_merge(
    ckpts: list[Checkpoint],
    fishers: list[FisherWeights],
    alignment: SharedAlignment,
    eps: float = 1e-8,
) -> Checkpoint:
    """Per-element Fisher-weighted average of shared gradient-bearing tensors.

    Elements where every model's Fisher mass is zero fall back to the plain
    mean, and batch-norm running statistics are always merged isotropically
    (they carry no gradient information for Fisher to weight).
    """
    _reject_shape_conflicts(alignment, "Fisher-weighted")
    if alignment.model_count != len(ckpts):
        raise MergeError(
            f"alignment covers {alignment.model_count} models, got {len(ckpts)}"
        )
    if len(fishers) != len(ckpts):
        raise MergeError(f"{len(fishers)} Fisher inputs for {len(ckpts)} models")
    _check_finite(ckpts)
    anchor_ckpt = ckpts[alignment.anchor]
    model_index = range(len(ckpts))

    merged_by_name: dict[str, np.ndarray] = {}
    for group in alignment.shared_groups:
        for name, kind in group.members:
            stack = _stack(ckpts, name, model_index)
            mean = _sorted_reduce(stack) / len(ckpts)
            if kind in NON_GRADIENT_KINDS:
                merged_by_name[name] = mean
                continue
            fisher_rows = []
            for i in model_index:
                f = fishers[i].tensors.get(name)
                if f is None:
                    raise FisherInputError(
                        f"model {i} has no Fisher tensor for shared tensor '{name}'"
                    )
                if f.shape != stack.shape[1:]:
                    raise FisherInputError(
                        f"Fisher tensor '{name}' of model {i} has shape {f.shape}, "
                        f"expected {stack.shape[1:]}"
                    )
                fisher_rows.append(f)
            fstack = np.ascontiguousarray(np.stack(fisher_rows))
            numerator = _sorted_reduce(fstack * stack)
            denominator = _sorted_reduce(fstack)
            zero_mass = denominator == 0.0
            weighted = numerator / (denominator + eps * zero_mass)
            merged_by_name[name] = np.where(zero_mass, mean, weighted)

    return _assemble_output(anchor_ckpt, merged_by_name, alignment, "fisher")
