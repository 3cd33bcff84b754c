"""Command-line interface: merge, profile, inspect, fisher and toy.

Exit codes: 0 on success, 1 for usage errors (bad flags or flag values),
2 for data errors (malformed files, incompatible pools, diverged training).
Every run prints a one-line summary to standard error; nonzero exits leave
no partial output files behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_store
from .alignment import AlignmentError, shared_parameters
from .checkpoint import CheckpointError
from .discrepancy import MODES, DiscrepancyError, discrepancy_profile, emit_profile
from .merge import (
    FisherWeights,
    MergeError,
    ScheduleError,
    compute_schedule,
    fisher_merge,
    isotropic_merge,
    layerwise_merge,
    scalar_weighted_merge,
)
from .toy import (
    DomainShift,
    ExperimentConfig,
    ToyModel,
    TrainingDivergedError,
    estimate_fisher,
    make_domain_pair,
    render_report,
    run_experiment,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

STRATEGIES = ("layerwise", "isotropic", "scalar", "fisher")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _summary(line: str) -> None:
    print(line, file=sys.stderr)


def _resolve_anchor(value: str | None, inputs: list[str], strategy: str) -> int:
    if value is None:
        if strategy == "layerwise":
            raise UsageError("layer-wise merging requires an explicit --anchor")
        return 0
    if value in inputs:
        return inputs.index(value)
    try:
        idx = int(value)
    except ValueError:
        raise UsageError(f"--anchor {value!r} is neither an input path nor an index")
    if not 0 <= idx < len(inputs):
        raise UsageError(f"--anchor index {idx} out of range for {len(inputs)} inputs")
    return idx


def _cmd_merge(args) -> int:
    anchor = _resolve_anchor(args.anchor, args.inputs, args.strategy)
    if args.strategy == "fisher" and not args.fisher:
        raise UsageError("--strategy fisher requires --fisher files, one per input")
    if args.fisher and len(args.fisher) != len(args.inputs):
        raise UsageError(
            f"{len(args.fisher)} --fisher files for {len(args.inputs)} inputs"
        )
    if args.perf is not None:
        if len(args.perf) != len(args.inputs):
            raise UsageError(f"{len(args.perf)} --perf scores for {len(args.inputs)} inputs")
        if any(not np.isfinite(p) or p <= 0 for p in args.perf):
            raise UsageError("--perf scores must be positive reals")

    ckpts = [ckpt_store.load(p) for p in args.inputs]
    alignment = shared_parameters(ckpts, anchor)

    if args.strategy == "layerwise":
        schedule = compute_schedule(
            len(ckpts),
            alignment.n_shared_layers,
            anchor,
            start_layer=args.s,
            first_layer_weight=args.w0,
        )
        merged = layerwise_merge(ckpts, anchor, schedule, alignment)
        detail = (
            f"schedule: start_layer={schedule.start_layer} "
            f"w0={schedule.first_layer_weight!r} "
            f"non_anchor={[round(float(w), 6) for w in schedule.non_anchor_row()]}"
        )
    elif args.strategy == "isotropic":
        merged = isotropic_merge(ckpts, alignment)
        detail = f"uniform weights 1/{len(ckpts)}"
    elif args.strategy == "scalar":
        scores = args.perf
        if scores is None:
            scores = []
            for path, ckpt in zip(args.inputs, ckpts):
                perf = ckpt.performance()
                if perf is None:
                    raise CheckpointError(
                        f"{path}: no 'performance' metadata; pass --perf explicitly"
                    )
                scores.append(perf)
        merged = scalar_weighted_merge(ckpts, scores, alignment)
        total = sum(scores)
        detail = "weights: " + ", ".join(f"{s / total:.6f}" for s in scores)
    else:
        fishers = [FisherWeights.from_checkpoint(ckpt_store.load(p)) for p in args.fisher]
        merged = fisher_merge(ckpts, fishers, alignment)
        detail = f"fisher inputs: {args.fisher}"

    ckpt_store.save(merged, args.out)
    print(f"shared_layers: {alignment.n_shared_layers}")
    print(f"shared_tensors: {len(alignment.shared_names())}")
    print(f"anchor_only_tensors: {len(alignment.anchor_only)}")
    if alignment.anchor_only:
        print(f"anchor_only: {list(alignment.anchor_only)}")
    print(detail)
    _summary(
        f"merged {len(ckpts)} checkpoints ({args.strategy}, "
        f"{alignment.n_shared_layers} shared layers) -> {args.out}"
    )
    return EXIT_OK


def _cmd_profile(args) -> int:
    a = ckpt_store.load(args.a)
    b = ckpt_store.load(args.b)
    profile = discrepancy_profile(a, b, args.tau, mode=args.mode)
    payload = emit_profile(profile, format=args.format)
    if args.out:
        _atomic_write(args.out, payload)
        target = args.out
    else:
        sys.stdout.write(payload.decode("utf-8"))
        target = "stdout"
    _summary(
        f"profiled {len(profile.rows)} layer/kind rows "
        f"(tau={args.tau}, flagged {profile.total_fraction():.4f}) -> {target}"
    )
    return EXIT_OK


def _cmd_inspect(args) -> int:
    summary = ckpt_store.inspect(args.path)
    print(summary.render())
    _summary(
        f"inspected {args.path}: {len(summary.tensors)} tensors, "
        f"{summary.total_parameters} parameters"
    )
    return EXIT_OK


def _cmd_fisher(args) -> int:
    model = ToyModel.from_checkpoint(ckpt_store.load(args.model))
    shift = DomainShift(args.rotation, (args.tx, args.ty))
    source, target = make_domain_pair(args.seed, args.samples, args.classes, shift)
    data = source if args.domain == "source" else target
    fisher = estimate_fisher(model, data)
    out = fisher.to_checkpoint(
        {"model_id": "fisher", "fisher_of": str(args.model), "fisher_samples": str(args.samples)}
    )
    ckpt_store.save(out, args.out)
    _summary(f"estimated fisher for {args.model} on {args.samples} samples -> {args.out}")
    return EXIT_OK


def _cmd_toy(args) -> int:
    try:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid experiment config: {exc}")
    report = run_experiment(cfg)
    payload = render_report(report)
    if args.out:
        _atomic_write(args.out, payload)
        target = args.out
    else:
        sys.stdout.write(payload.decode("utf-8"))
        target = "stdout"
    _summary(f"ran {cfg.mode} experiment (seed {cfg.seed}) -> {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layermerge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge checkpoints into one")
    p.add_argument("inputs", nargs="+", help="input checkpoint files")
    p.add_argument("--anchor", help="anchor checkpoint: input path or index")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--s", type=int, default=1, help="uniform-plateau end layer")
    p.add_argument("--w0", type=float, default=None, help="first-layer non-anchor weight")
    p.add_argument("--perf", type=float, nargs="+", help="performance scores, one per input")
    p.add_argument("--fisher", nargs="+", help="fisher checkpoint files, one per input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("profile", help="per-layer discrepancy profile of two checkpoints")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tau", type=float, required=True, help="relative threshold divisor")
    p.add_argument("--mode", choices=MODES, default="elementwise")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("inspect", help="print checkpoint summary without decoding data")
    p.add_argument("path")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("fisher", help="estimate toy-model diagonal Fisher information")
    p.add_argument("model", help="toy-model checkpoint file")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--samples", type=int, default=600)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--rotation", type=float, default=0.0)
    p.add_argument("--tx", type=float, default=0.0)
    p.add_argument("--ty", type=float, default=0.0)
    p.add_argument("--domain", choices=("source", "target"), default="source")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fisher)

    p = sub.add_parser("toy", help="run a scripted toy merging experiment")
    p.add_argument("config", help="experiment config JSON file")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _summary(f"usage error: {exc}")
        return EXIT_USAGE
    except ScheduleError as exc:
        _summary(f"usage error: {exc}")
        return EXIT_USAGE
    except (CheckpointError, AlignmentError, MergeError, DiscrepancyError,
            TrainingDivergedError, OSError, ValueError) as exc:
        _summary(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
