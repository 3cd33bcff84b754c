"""Layer grouping and shared-parameter alignment across checkpoints.

Tensors are grouped into depth-indexed layers either by an explicit
``layer_order`` metadata list or, by default, by the name prefix up to the
last dot. The shared set across a pool of checkpoints is the collection of
layer groups whose member tensors exist in every model with identical name,
dtype and shape; everything else stays anchor-only and is copied verbatim
by the merge strategies. Groups are all-or-nothing: one mismatched member
drops the whole group from the shared set.
"""

from __future__ import annotations

from dataclasses import dataclass

from .checkpoint import Checkpoint, CheckpointError, match_layer_order

KIND_WEIGHT = "weight"
KIND_BIAS = "bias"
KIND_BN_MEAN = "bn_mean"
KIND_BN_VAR = "bn_var"
KIND_OTHER = "other"
KIND_ORDER = (KIND_WEIGHT, KIND_BIAS, KIND_BN_MEAN, KIND_BN_VAR, KIND_OTHER)

# Batch-norm running statistics are not produced by gradient descent, so
# Fisher weighting never applies to them.
NON_GRADIENT_KINDS = frozenset({KIND_BN_MEAN, KIND_BN_VAR})

_SUFFIX_KINDS = {
    ".weight": KIND_WEIGHT,
    ".bias": KIND_BIAS,
    ".running_mean": KIND_BN_MEAN,
    ".running_var": KIND_BN_VAR,
}


class AlignmentError(Exception):
    pass


class NoSharedParametersError(AlignmentError):
    pass


def classify_kind(name: str) -> str:
    for suffix, kind in _SUFFIX_KINDS.items():
        if name.endswith(suffix):
            return kind
    return KIND_OTHER


def default_prefix(name: str) -> str:
    return name.rsplit(".", 1)[0] if "." in name else name


@dataclass(frozen=True)
class LayerGroup:
    """A depth-indexed group of tensors sharing one name prefix."""

    prefix: str
    index: int  # 1-based depth index
    members: tuple[tuple[str, str], ...]  # (tensor name, kind)

    def names(self) -> list[str]:
        return [name for name, _ in self.members]


def group_layers(ckpt: Checkpoint) -> list[LayerGroup]:
    """Partition a checkpoint's tensors into ordered layer groups.

    With ``layer_order`` metadata the listed prefixes define both membership
    and order; otherwise groups follow first appearance in the tensor list.
    """
    names = ckpt.names()
    explicit = ckpt.layer_order()
    if explicit is not None:
        try:
            assignment = match_layer_order(names, explicit)
        except CheckpointError as exc:
            raise AlignmentError(str(exc)) from exc
        order = list(explicit)
    else:
        assignment = {name: default_prefix(name) for name in names}
        order = list(dict.fromkeys(assignment[name] for name in names))

    by_prefix: dict[str, list[tuple[str, str]]] = {p: [] for p in order}
    for name in names:
        by_prefix[assignment[name]].append((name, classify_kind(name)))
    return [
        LayerGroup(prefix, j, tuple(by_prefix[prefix]))
        for j, prefix in enumerate(order, start=1)
        if by_prefix[prefix]
    ]


@dataclass(frozen=True)
class SharedAlignment:
    """The shared layer structure of a pool of checkpoints.

    ``shared_groups`` are re-indexed 1..n_shared_layers in the anchor's
    order. ``anchor_only`` lists anchor tensors outside the shared set,
    whether absent from some model or present with a conflicting shape;
    the latter are also listed in ``shape_conflicts``.
    """

    anchor: int
    model_count: int
    shared_groups: tuple[LayerGroup, ...]
    anchor_only: tuple[str, ...]
    shape_conflicts: tuple[str, ...]

    @property
    def n_shared_layers(self) -> int:
        return len(self.shared_groups)

    def shared_names(self) -> list[str]:
        return [name for g in self.shared_groups for name in g.names()]


def shared_parameters(ckpts: list[Checkpoint], anchor: int) -> SharedAlignment:
    """Compute the shared-parameter alignment of a pool around an anchor.

    A tensor is shared only when every model carries it with identical name,
    dtype and shape; a layer group is shared only when all of its members
    are. The result is invariant to the order of the non-anchor models.
    """
    if not ckpts:
        raise AlignmentError("empty checkpoint pool")
    if not 0 <= anchor < len(ckpts):
        raise AlignmentError(f"anchor index {anchor} out of range for {len(ckpts)} models")

    signatures = [
        {t.name: (t.dtype, t.shape) for t in ckpt.tensors} for ckpt in ckpts
    ]
    anchor_sig = signatures[anchor]

    shared_names = set()
    conflicts = set()
    for name, sig in anchor_sig.items():
        matches = [s.get(name) for i, s in enumerate(signatures) if i != anchor]
        if all(m == sig for m in matches):
            shared_names.add(name)
        elif any(m is not None and m != sig for m in matches):
            conflicts.add(name)

    groups = group_layers(ckpts[anchor])
    shared_groups = []
    anchor_only = []
    for g in groups:
        if all(name in shared_names for name, _ in g.members):
            shared_groups.append(g)
        else:
            anchor_only.extend(g.names())

    if len(ckpts) >= 2 and not shared_groups:
        raise NoSharedParametersError(
            "no shared parameters: the models have no layer group with "
            "matching names, dtypes and shapes"
        )

    reindexed = tuple(
        LayerGroup(g.prefix, j, g.members) for j, g in enumerate(shared_groups, start=1)
    )
    anchor_names = ckpts[anchor].names()
    return SharedAlignment(
        anchor=anchor,
        model_count=len(ckpts),
        shared_groups=reindexed,
        anchor_only=tuple(anchor_only),
        shape_conflicts=tuple(n for n in anchor_names if n in conflicts),
    )
