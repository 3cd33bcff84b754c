"""Diagonal empirical Fisher information for toy models.

The estimate is the per-parameter mean over samples of the squared
gradient of the label log-likelihood. For a rectifier network this is
computed in closed form from the per-sample backprop deltas: the squared
weight gradient factorizes as delta^2 (outer) activation^2, so no
per-sample outer products are materialized.
"""

from __future__ import annotations

import numpy as np

from ..merge import FisherWeights
from .data import ToyDataset
from .model import ToyModel, softmax


def estimate_fisher(model: ToyModel, data: ToyDataset) -> FisherWeights:
    x, y = data.inputs, data.labels
    n = len(y)
    activations, preacts = model.forward_trace(x)
    probs = softmax(activations[-1])
    if not np.all(np.isfinite(probs)):
        raise ValueError("non-finite activations while estimating Fisher information")

    # d(log p_y)/d(logits) per sample; squaring makes the sign irrelevant.
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0

    tensors: dict[str, np.ndarray] = {}
    for i in range(model.depth - 1, -1, -1):
        act = activations[i]
        tensors[f"l{i}.weight"] = (delta**2).T @ (act**2) / n
        tensors[f"l{i}.bias"] = (delta**2).mean(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (preacts[i - 1] > 0)

    ordered = {}
    for i in range(model.depth):
        ordered[f"l{i}.weight"] = tensors[f"l{i}.weight"]
        ordered[f"l{i}.bias"] = tensors[f"l{i}.bias"]
    return FisherWeights(ordered)
