"""Scripted desk-scale merging experiments with deterministic reports.

Two experiment modes cover the interesting pool constructions:

* ``donors``: an anchor trains on the source domain and each donor trains
  on the source or the shifted target domain with its own seed; the pool
  [anchor, donors...] is merged under every requested strategy.
* ``checkpoints``: a single training run captures evenly spaced snapshot
  checkpoints; pools of the last m snapshots (anchor = final) are merged
  for every m up to the snapshot count.

Reports are plain dicts rendered to canonical JSON, so identical configs
produce byte-identical report files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..alignment import shared_parameters
from ..checkpoint import Checkpoint
from ..discrepancy import discrepancy_profile
from ..merge import (
    FisherWeights,
    compute_schedule,
    fisher_merge,
    isotropic_merge,
    layerwise_merge,
    scalar_weighted_merge,
)
from .data import DomainShift, ToyDataset, make_domain_pair
from .fisher import estimate_fisher
from .model import ToyModel, evaluate
from .training import TrainConfig, train

STRATEGIES = ("layerwise", "isotropic", "scalar", "fisher", "ensemble")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    mode: str = "donors"  # "donors" | "checkpoints"
    train_samples: int = 600
    eval_samples: int = 2000
    classes: int = 3
    hidden: tuple[int, ...] = (16, 16)
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    head_lr_multiplier: float = 10.0
    shift_rotation: float = 0.0
    shift_translation: tuple[float, float] = (0.0, 0.0)
    donor_seeds: tuple[int, ...] = (1007, 2003)
    donor_domain: str = "target"  # "source" | "target"
    # Models to be merged are assumed to start from common pre-trained
    # parameters; donors then differ only in data and shuffling. Disable to
    # reproduce the misaligned-models failure mode of naive averaging.
    shared_init: bool = True
    checkpoint_count: int = 4
    strategies: tuple[str, ...] = STRATEGIES
    start_layer: int = 1
    first_layer_weight: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if self.mode not in ("donors", "checkpoints"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.donor_domain not in ("source", "target"):
            raise ValueError(f"unknown donor domain {self.donor_domain!r}")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")

    @property
    def shift(self) -> DomainShift:
        return DomainShift(self.shift_rotation, tuple(self.shift_translation))

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(payload) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        payload = dict(payload)
        for key in ("hidden", "donor_seeds", "strategies", "shift_translation"):
            if key in payload:
                payload[key] = tuple(payload[key])
        return cls(**payload)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _train_one(cfg: ExperimentConfig, seed: int, data: ToyDataset, snapshot_count=0):
    sizes = [2, *cfg.hidden, cfg.classes]
    init_seed = cfg.seed if cfg.shared_init else seed
    model = ToyModel.init(sizes, seed=init_seed)
    tc = TrainConfig(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=seed,
        head_lr_multiplier=cfg.head_lr_multiplier,
    )
    return train(model, data, tc, snapshot_count=snapshot_count)


def _accuracies(model: ToyModel, source_eval, target_eval) -> dict:
    return {
        "source_accuracy": evaluate(model, source_eval),
        "target_accuracy": evaluate(model, target_eval),
    }


def _merge_pool_rows(cfg, ckpts, models, train_sets, scores, source_eval, target_eval):
    """One report row per strategy for a given pool (anchor first)."""
    alignment = shared_parameters(ckpts, anchor=0)
    rows = []
    for strategy in cfg.strategies:
        if strategy == "ensemble":
            rows.append(
                {
                    "strategy": "ensemble",
                    "source_accuracy": evaluate(models, source_eval, ensemble=True),
                    "target_accuracy": evaluate(models, target_eval, ensemble=True),
                }
            )
            continue
        if strategy == "layerwise":
            schedule = compute_schedule(
                len(ckpts),
                alignment.n_shared_layers,
                anchor=0,
                start_layer=min(cfg.start_layer, alignment.n_shared_layers),
                first_layer_weight=cfg.first_layer_weight,
            )
            merged = layerwise_merge(ckpts, 0, schedule, alignment)
        elif strategy == "isotropic":
            merged = isotropic_merge(ckpts, alignment)
        elif strategy == "scalar":
            merged = scalar_weighted_merge(ckpts, scores, alignment)
        elif strategy == "fisher":
            fishers = [estimate_fisher(m, d) for m, d in zip(models, train_sets)]
            merged = fisher_merge(ckpts, fishers, alignment)
        rows.append(
            {"strategy": strategy, **_accuracies(ToyModel.from_checkpoint(merged), source_eval, target_eval)}
        )
    return rows


def run_experiment(cfg: ExperimentConfig) -> dict:
    source_train, target_train = make_domain_pair(
        cfg.seed, cfg.train_samples, cfg.classes, cfg.shift
    )
    source_eval, target_eval = make_domain_pair(
        cfg.seed + 5000, cfg.eval_samples, cfg.classes, cfg.shift
    )

    report: dict = {"config": asdict(cfg), "mode": cfg.mode}

    if cfg.mode == "donors":
        anchor_result = _train_one(cfg, cfg.seed, source_train)
        donor_data = source_train if cfg.donor_domain == "source" else target_train
        donor_results = [_train_one(cfg, s, donor_data) for s in cfg.donor_seeds]

        models = [anchor_result.model] + [r.model for r in donor_results]
        train_sets = [source_train] + [donor_data] * len(donor_results)
        scores = [evaluate(m, source_eval) for m in models]
        ckpts = []
        for i, (m, score) in enumerate(zip(models, scores)):
            meta = {
                "model_id": "anchor" if i == 0 else f"donor{i}",
                "performance": repr(score),
            }
            ckpts.append(m.to_checkpoint(meta))

        report["models"] = [
            {
                "model_id": c.metadata["model_id"],
                "final_loss": r.final_loss,
                **_accuracies(m, source_eval, target_eval),
            }
            for c, m, r in zip(ckpts, models, [anchor_result, *donor_results])
        ]
        report["merges"] = _merge_pool_rows(
            cfg, ckpts, models, train_sets, scores, source_eval, target_eval
        )
        if cfg.tau is not None:
            report["discrepancy"] = [
                {
                    "pair": f"anchor-vs-donor{i}",
                    "tau": cfg.tau,
                    "total_fraction": discrepancy_profile(ckpts[0], c, cfg.tau).total_fraction(),
                }
                for i, c in enumerate(ckpts[1:], start=1)
            ]
        return report

    # checkpoints mode: merge the last m snapshots, newest (= anchor) first
    result = _train_one(cfg, cfg.seed, source_train, snapshot_count=cfg.checkpoint_count)
    snaps = list(reversed(result.snapshots))  # newest first
    snap_models = [ToyModel.from_checkpoint(c) for c in snaps]
    snap_scores = [evaluate(m, source_eval) for m in snap_models]
    for c, s in zip(snaps, snap_scores):
        c.metadata["performance"] = repr(s)

    report["models"] = [
        {
            "model_id": c.metadata["model_id"],
            "epoch": int(c.metadata["epoch"]),
            **_accuracies(m, source_eval, target_eval),
        }
        for c, m in zip(snaps, snap_models)
    ]
    report["merges"] = []
    for m_count in range(1, len(snaps) + 1):
        rows = _merge_pool_rows(
            cfg,
            snaps[:m_count],
            snap_models[:m_count],
            [source_train] * m_count,
            snap_scores[:m_count],
            source_eval,
            target_eval,
        )
        for row in rows:
            report["merges"].append({"checkpoints": m_count, **row})
    return report


def render_report(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=2) + "\n").encode("utf-8")
