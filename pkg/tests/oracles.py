"""Independent reference computations used as test oracles.

These deliberately avoid the batched code paths: cores are visited one at
a time, inputs are gathered axon by axon, the surrogate goes through tanh and
category sums are explicit loops.
"""

import math

import numpy as np

from crossbarnet.topology import LayerSpec, NetworkSpec, build_plan


def random_tiny_spec(rng) -> NetworkSpec:
    """At most two layers, first-layer blocks of at most 4x4 = 16 axons."""
    for _ in range(100):
        size = int(rng.integers(4, 11))
        b1 = int(rng.integers(2, 5))
        s1 = int(rng.integers(1, b1 + 1))
        if b1 > size:
            continue
        layers = [LayerSpec(b1, s1)]
        g = (size - b1) // s1 + 1
        if rng.uniform() < 0.6:
            b2 = int(rng.choice([1, 2]))
            if b2 <= g:
                layers.append(LayerSpec(b2, int(rng.integers(1, b2 + 1))))
        weights = [(-1, 1), (-2, -1, 1, 2)][int(rng.integers(2))]
        return NetworkSpec(size, size, 1, tuple(layers), int(rng.integers(2, 5)), weights)
    raise RuntimeError("could not draw a tiny spec")


def random_tiny_plan(rng, seed=None, bias_scale=1.0):
    spec = random_tiny_spec(rng)
    plan = build_plan(spec, seed=int(rng.integers(1 << 30)) if seed is None else seed)
    for layer in plan.layers:
        layer.shadow[...] = rng.uniform(0, 1, layer.shadow.shape)
        layer.bias[...] = rng.normal(0, bias_scale, layer.bias.shape)
    return plan


def logistic(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def reference_forward(plan, instance, crossbars=None, k=0.5, hard=False, rounded_bias=False,
                      biases=None):
    """Per-core forward pass for one flattened instance.

    ``crossbars`` may give continuous c matrices per layer and core and
    ``biases`` replacement bias vectors; by default the shadows are
    thresholded here.  Returns (layer outputs, probs).
    """
    prev = np.asarray(instance, dtype=float).ravel()
    outputs = []
    for li, layer in enumerate(plan.layers):
        s = np.array([layer.axon_types.type_weights[t] for t in layer.axon_types.types], float)
        layer_out = np.zeros((layer.n_cores, 256))
        for core in range(layer.n_cores):
            src = layer.sources[core]
            x = np.array([prev[i] if i >= 0 else 0.0 for i in src])
            if crossbars is None:
                c = (layer.shadow[core] > 0.5).astype(float)
            else:
                c = crossbars[li][core]
            b = layer.bias[core] if biases is None else biases[li][core]
            if rounded_bias:
                b = np.sign(b) * np.floor(np.abs(b) + 0.5)
            current = (x * s) @ c + b
            if hard:
                layer_out[core] = current > 0
            else:
                # logistic(2kI) written through tanh
                layer_out[core] = 0.5 * (1.0 + np.tanh(k * current))
        outputs.append(layer_out)
        prev = layer_out.ravel()
    K = plan.spec.categories
    cs = [0.0] * K
    for neuron, cat in enumerate(plan.category):
        if cat >= 0:
            cs[cat] += prev[neuron]
    z = [v / plan.neurons_per_category for v in cs]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    total = sum(e)
    return outputs, [v / total for v in e]


def reference_loss(p, label):
    total = 0.0
    for k, pk in enumerate(p):
        y = 1.0 if k == label else 0.0
        total -= y * math.log(pk) + (1 - y) * math.log(1 - pk)
    return total


def reference_batch_loss(plan, images, labels, crossbars=None, k=0.5, biases=None):
    losses = [reference_loss(reference_forward(plan, x, crossbars, k, biases=biases)[1], y)
              for x, y in zip(images, labels)]
    return sum(losses) / len(losses)
