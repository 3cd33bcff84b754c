"""Independent naive reference implementations used as oracles.

Everything here works element by element with plain Python floats and
loops, in model-index order, deliberately sharing no code with the
package's vectorized engine.
"""

from __future__ import annotations


def ref_layerwise(pools, anchor, weights_per_layer, groups, anchor_names):
    """pools: list of {name: flat list}; groups: list of lists of names in
    layer order; weights_per_layer[j]: per-model weight list for layer j+1.
    Returns {name: flat list} over all anchor tensors."""
    out = {}
    for j, names in enumerate(groups):
        w = weights_per_layer[j]
        for name in names:
            n = len(pools[anchor][name])
            merged = []
            for k in range(n):
                acc = 0.0
                for i, pool in enumerate(pools):
                    acc += w[i] * pool[name][k]
                merged.append(acc)
            out[name] = merged
    for name in anchor_names:
        if name not in out:
            out[name] = list(pools[anchor][name])
    return out


def ref_mean(pools, names):
    m = len(pools)
    out = {}
    for name in names:
        n = len(pools[0][name])
        out[name] = [sum(pool[name][k] for pool in pools) / m for k in range(n)]
    return out


def ref_scalar(pools, scores, names):
    total = sum(scores)
    weights = [s / total for s in scores]
    out = {}
    for name in names:
        n = len(pools[0][name])
        merged = []
        for k in range(n):
            acc = 0.0
            for i, pool in enumerate(pools):
                acc += weights[i] * pool[name][k]
            merged.append(acc)
        out[name] = merged
    return out


def ref_fisher(pools, fishers, names, bn_names=(), eps=1e-8):
    """Per-element fisher-weighted mean with plain-mean fallback; names in
    bn_names are always averaged isotropically."""
    m = len(pools)
    out = {}
    for name in names:
        n = len(pools[0][name])
        merged = []
        for k in range(n):
            if name in bn_names:
                merged.append(sum(pool[name][k] for pool in pools) / m)
                continue
            fsum = sum(fishers[i][name][k] for i in range(m))
            if fsum == 0.0:
                merged.append(sum(pool[name][k] for pool in pools) / m)
            else:
                num = sum(fishers[i][name][k] * pools[i][name][k] for i in range(m))
                merged.append(num / (fsum + eps * (fsum == 0.0)))
        out[name] = merged
    return out


def ref_discrepancy_counts(a_flat, b_flat, tau, mode):
    """Brute-force flag count over paired flat lists."""
    count = 0
    if mode == "layer_norm":
        norm = sum(v * v for v in a_flat) ** 0.5
        n = len(a_flat)
        thr = norm / (tau * n**0.5) if n else 0.0
    for x, y in zip(a_flat, b_flat):
        diff = abs(x - y)
        threshold = abs(x) / tau if mode == "elementwise" else thr
        if diff >= threshold and diff > 0:
            count += 1
    return count
