"""Small dense rectifier network stored as a checkpoint.

Layers are named ``l0``, ``l1``, ... with ``weight`` of shape [out, in]
and ``bias`` of shape [out]. Hidden layers use max(x, 0); the final layer
is linear and trained with softmax cross-entropy.
"""

from __future__ import annotations

import re

import numpy as np

from ..checkpoint import Checkpoint

_LAYER_NAME = re.compile(r"^l(\d+)\.(weight|bias)$")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class ToyModel:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases):
            raise ValueError("weights and biases must pair up")
        for i in range(1, len(weights)):
            if weights[i].shape[1] != weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {weights[i].shape[1]} inputs but layer "
                    f"{i - 1} produces {weights[i - 1].shape[0]}"
                )
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape must match layer output size")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    # -- construction ----------------------------------------------------

    @classmethod
    def init(cls, layer_sizes: list[int], seed: int) -> "ToyModel":
        """He-style random init, deterministic in the seed."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(scale * rng.standard_normal((fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def copy(self) -> "ToyModel":
        return ToyModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    # -- checkpoint round-trip -------------------------------------------

    def to_checkpoint(self, metadata: dict[str, str] | None = None) -> Checkpoint:
        arrays = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"l{i}.weight"] = w
            arrays[f"l{i}.bias"] = b
        return Checkpoint.from_arrays(arrays, metadata)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ToyModel":
        found: dict[int, dict[str, np.ndarray]] = {}
        for t in ckpt.tensors:
            m = _LAYER_NAME.match(t.name)
            if not m:
                raise ValueError(f"unexpected tensor '{t.name}' in toy-model checkpoint")
            found.setdefault(int(m.group(1)), {})[m.group(2)] = np.asarray(t.data)
        if sorted(found) != list(range(len(found))):
            raise ValueError("layer indices must be consecutive from 0")
        weights, biases = [], []
        for i in range(len(found)):
            if set(found[i]) != {"weight", "bias"}:
                raise ValueError(f"layer l{i} needs both weight and bias")
            weights.append(found[i]["weight"])
            biases.append(found[i]["bias"])
        return cls(weights, biases)

    # -- inference --------------------------------------------------------

    def forward_trace(self, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Return (activations, pre-activations) per layer; activations[0] is x."""
        activations = [np.asarray(x, dtype=np.float64)]
        preacts = []
        h = activations[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            preacts.append(z)
            h = np.maximum(z, 0.0) if i < self.depth - 1 else z
            activations.append(h)
        return activations, preacts

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward_trace(x)[0][-1]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        logp = log_softmax(self.logits(x))
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def loss_and_grads(self, x, y):
        """Mean cross-entropy and its gradients w.r.t. every weight and bias."""
        activations, preacts = self.forward_trace(x)
        n = len(y)
        p = softmax(activations[-1])
        logp = log_softmax(activations[-1])
        loss = float(-np.mean(logp[np.arange(n), y]))
        delta = p.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads_w, grads_b = [None] * self.depth, [None] * self.depth
        for i in range(self.depth - 1, -1, -1):
            grads_w[i] = delta.T @ activations[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (preacts[i - 1] > 0)
        return loss, grads_w, grads_b


def evaluate(models, data, ensemble: bool = False) -> float:
    """Accuracy of one model, or of an averaged-softmax ensemble.

    Ties in the averaged probabilities break toward the lowest class index.
    """
    if isinstance(models, ToyModel):
        models = [models]
    if not models:
        raise ValueError("need at least one model")
    in_dim = models[0].weights[0].shape[1]
    if data.inputs.shape[1] != in_dim:
        raise ValueError(
            f"model expects {in_dim}-dimensional inputs, data has {data.inputs.shape[1]}"
        )
    if ensemble:
        probs = sum(m.predict_proba(data.inputs) for m in models) / len(models)
    else:
        if len(models) != 1:
            raise ValueError("pass ensemble=True to evaluate several models jointly")
        probs = models[0].predict_proba(data.inputs)
    predictions = np.argmax(probs, axis=1)
    return float(np.mean(predictions == data.labels))
