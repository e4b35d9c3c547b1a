"""Software throughput of the inference kernels, per backend.

These are CPU timings of this library. They say nothing about the
modeled accelerator numbers produced by :mod:`binfer.archmodel`.
"""
import time

import numpy as np

from . import kernels, layers
from .layers import LayerKind
from .verify import random_image, random_instance


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def layer_timings(spec, backends=None, repeat=3, seed=0):
    """``{backend: [(layer name, seconds), ...]}`` for every layer's accumulate step."""
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, spec)
    image = random_image(rng, spec)
    tr = layers.forward(spec, inst.weights, inst.thresholds, image, inst.output_bn)
    inputs = [image] + tr.activations
    out = {}
    for name in backends or kernels.available():
        rows = []
        with kernels.use(name):
            for i, layer in enumerate(spec.layers):
                x, w = inputs[i], inst.weights[i]
                if layer.kind is LayerKind.CONV_FIRST:
                    fn = lambda: layers.conv_first(x, w, layer)  # noqa: E731
                elif layer.kind is LayerKind.CONV_BINARY:
                    fn = lambda: layers.conv_binary(x, w, layer)  # noqa: E731
                else:
                    fn = lambda: layers.fc_accumulate(x, w, layer)  # noqa: E731
                rows.append((spec.layer_name(i), _best_of(fn, repeat)))
        out[name] = rows
    return out


def end_to_end(spec, n_images=8, backends=None, seed=0):
    """``{backend: images per second}`` for full sequential inference."""
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, spec)
    images = [random_image(rng, spec) for _ in range(n_images)]
    out = {}
    for name in backends or kernels.available():
        with kernels.use(name):
            layers.run_batch(spec, inst.weights, inst.thresholds, images[:1], inst.output_bn)
            t0 = time.perf_counter()
            layers.run_batch(spec, inst.weights, inst.thresholds, images, inst.output_bn)
            out[name] = n_images / (time.perf_counter() - t0)
    return out


def format_report(timings, e2e):
    names = list(timings)
    lines = [f"{'layer':<10}" + "".join(f"{n + ' ms':>14}" for n in names)
             + (f"{'speedup':>10}" if len(names) > 1 else "")]
    for k, (layer, _) in enumerate(timings[names[0]]):
        ts = [timings[n][k][1] for n in names]
        row = f"{layer:<10}" + "".join(f"{t * 1e3:>14.3f}" for t in ts)
        if len(names) > 1:
            row += f"{ts[-1] / ts[0] if ts[0] else float('nan'):>9.1f}x"
        lines.append(row)
    lines.append("")
    for n, ips in e2e.items():
        lines.append(f"{n:<10} end-to-end {ips:10.2f} images/s (software, this host)")
    return "\n".join(lines)
