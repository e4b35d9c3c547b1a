"""Random instances and the packed-vs-reference equivalence check."""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import layers, oracle
from .bitcore import FIXED_MAX, FixedTensor
from .fold import BatchNormParams, fold_binary_layer, fold_first_layer
from .layers import BitFilterBank, LayerKind, LayerSpec, NetworkSpec

log = logging.getLogger(__name__)


@dataclass
class Instance:
    """A network with weights, batch-norm constants and derived thresholds."""

    spec: NetworkSpec
    weights_pm1: list       # (N, FH, FW, FD) int8 arrays of +/-1
    bn: list                # BatchNormParams per layer
    weights: list = field(default=None)
    thresholds: list = field(default=None)

    def __post_init__(self):
        if self.weights is None:
            self.weights = pack_weights(self.spec, self.weights_pm1)
        if self.thresholds is None:
            self.thresholds = fold_all(self.spec, self.bn)

    @property
    def output_bn(self):
        return self.bn[-1]


def pack_weights(spec, weights_pm1):
    return [np.ascontiguousarray(w, dtype=np.int8) if l.kind is LayerKind.CONV_FIRST
            else BitFilterBank.from_pm1(w) for l, w in zip(spec.layers, weights_pm1)]


def fold_all(spec, bn):
    """Thresholds for every layer but the output one."""
    out = []
    for i, layer in enumerate(spec.layers[:-1]):
        if bn[i] is None:
            raise ValueError(f"layer {i} ({spec.layer_name(i)}): no batch-norm parameters")
        if layer.kind is LayerKind.CONV_FIRST:
            out.append(fold_first_layer(bn[i]))
        else:
            out.append(fold_binary_layer(bn[i], layer.cnum))
    return out


def random_spec(rng, max_side=16, depths=(4, 32), n_layers=None):
    """Toy network: conv_first, then binary conv/fc layers, then fc_output."""
    n_layers = n_layers or int(rng.integers(2, 5))
    side = int(rng.choice([s for s in (2, 4, 6, 8, 10, 12, 14, 16) if s <= max_side]))
    w = h = side
    d0 = int(rng.integers(1, 5))
    dims = [w, h]
    layer_list = []
    lo, hi = depths
    n_hidden = n_layers - 2
    n_conv = int(rng.integers(0, n_hidden + 1))
    layer_list.append(LayerSpec.conv("conv_first", d0, int(rng.integers(lo, hi + 1)),
                                     name="conv1"))
    depth = layer_list[-1].n_filters
    for k in range(n_conv):
        pool = dims[0] % 2 == 0 and dims[0] >= 2 and bool(rng.integers(0, 2))
        n = int(rng.integers(lo, hi + 1))
        layer_list.append(LayerSpec.conv("conv_binary", depth, n, pool, name=f"conv{k + 2}"))
        if pool:
            dims = [dims[0] // 2, dims[1] // 2]
        depth = n
    flat = dims[0] * dims[1] * depth
    for k in range(n_hidden - n_conv):
        n = int(rng.integers(lo, hi + 1))
        layer_list.append(LayerSpec.fc("fc_binary", flat, n, name=f"fc{k + 1}"))
        flat = n
    layer_list.append(LayerSpec.fc("fc_output", flat, int(rng.integers(2, 11)), name="out"))
    return NetworkSpec(tuple(layer_list), w, h, d0, name="random")


def random_bn(rng, channels, spread, zero_gamma=0.05, lattice=0.2):
    """Batch-norm constants whose zero crossings land inside the reachable sums.

    ``spread`` is the typical magnitude of the pre-normalization sum. A
    ``lattice`` fraction of channels gets integer mean and zero shift so
    that crossings hit exact integers and half-integers (rounding ties).
    """
    mu = rng.normal(0.0, spread, channels)
    sigma2 = rng.uniform(0.05, 2.0, channels) * spread ** 2
    gamma = rng.normal(0.0, 1.0, channels)
    beta = rng.normal(0.0, 0.5, channels)
    on_lattice = rng.random(channels) < lattice
    mu[on_lattice] = np.round(mu[on_lattice])
    beta[on_lattice] = 0.0
    zero = rng.random(channels) < zero_gamma
    gamma[zero] = 0.0
    return BatchNormParams(mu, sigma2, gamma, beta, epsilon=float(rng.choice([1e-5, 1e-4, 1e-3])))


def random_instance(rng, spec):
    weights_pm1, bn = [], []
    for layer in spec.layers:
        shape = (layer.n_filters, layer.filter_h, layer.filter_w, layer.filter_d)
        weights_pm1.append((rng.integers(0, 2, shape, dtype=np.int8) * 2 - 1).astype(np.int8))
        if layer.kind is LayerKind.CONV_FIRST:
            spread = FIXED_MAX / np.sqrt(3) * np.sqrt(layer.cnum)
        else:
            spread = np.sqrt(layer.cnum)
        bn.append(random_bn(rng, layer.n_filters, spread))
    return Instance(spec, weights_pm1, bn)


def random_image(rng, spec):
    return FixedTensor(rng.integers(-FIXED_MAX, FIXED_MAX + 1,
                                    (spec.input_height, spec.input_width, spec.input_depth)))


@dataclass
class Mismatch:
    layer: int
    layer_name: str
    stage: str
    index: tuple
    expected: float
    got: float

    def to_dict(self):
        return {"layer": self.layer, "layer_name": self.layer_name, "stage": self.stage,
                "index": [int(i) for i in self.index], "expected": float(self.expected),
                "got": float(self.got)}


def _first_diff(expected, got):
    bad = np.argwhere(expected != got)
    idx = tuple(bad[0])
    return idx, expected[idx], got[idx]


def compare(inst, image, mode="rounded"):
    """Run both paths on one image. Returns None or the first Mismatch."""
    spec = inst.spec
    tr = layers.forward(spec, inst.weights, inst.thresholds, image, inst.output_bn)
    ref = oracle.forward(spec, inst.weights_pm1, inst.bn, image.values, mode)
    for i, layer in enumerate(spec.layers):
        name = spec.layer_name(i)
        if layer.kind is LayerKind.FC_OUTPUT:
            y = layers.fc_accumulate(tr.activations[-1], inst.weights[i], layer).values
            got = 2 * y - layer.cnum
            if not np.array_equal(got, ref.sums[i]):
                return Mismatch(i, name, "sum", *_first_diff(ref.sums[i], got))
            if not np.allclose(tr.scores, ref.scores, rtol=1e-9, atol=1e-9):
                return Mismatch(i, name, "score", *_first_diff(ref.scores, tr.scores))
            if tr.prediction != ref.prediction:
                return Mismatch(i, name, "prediction", (), ref.prediction, tr.prediction)
            continue
        first = layer.kind is LayerKind.CONV_FIRST
        for stage, mine, theirs in (("sum", tr.conv[i], ref.sums[i]),
                                    ("pooled", tr.pooled[i], ref.pooled[i])):
            got = mine.values if first else 2 * mine.values - layer.cnum
            if not np.array_equal(got, theirs):
                return Mismatch(i, name, stage, *_first_diff(theirs, got))
        bits = tr.activations[i].unpack()
        if not np.array_equal(bits, ref.activations[i]):
            return Mismatch(i, name, "activation", *_first_diff(ref.activations[i], bits))
    return None


def inject_fault(inst, rng):
    """Copy of ``inst`` with one valid weight bit flipped in the packed path only."""
    weights = list(inst.weights)
    i = 1  # always a packed-binary layer
    pm1 = weights[i].to_pm1().copy()
    n, h, w, d = (int(rng.integers(0, s)) for s in pm1.shape)
    pm1[n, h, w, d] *= -1
    weights[i] = BitFilterBank.from_pm1(pm1)
    return Instance(inst.spec, inst.weights_pm1, inst.bn, weights, inst.thresholds), (i, n, h, w, d)


@dataclass
class VerifyReport:
    cases: int
    passed: int = 0
    failure: dict = None

    @property
    def ok(self):
        return self.failure is None


def run_verify(seed, cases, spec=None, fault=False, mode="rounded"):
    """Equivalence over ``cases`` random instances; stops at the first mismatch.

    With ``spec`` None every case draws its own toy network.
    """
    report = VerifyReport(cases)
    if cases == 0:
        log.warning("verify: zero cases requested, nothing checked")
    for case in range(cases):
        rng = np.random.default_rng([seed, case])
        net = spec if spec is not None else random_spec(rng)
        inst = random_instance(rng, net)
        image = random_image(rng, net)
        flipped = None
        if fault:
            inst, flipped = inject_fault(inst, rng)
        m = compare(inst, image, mode)
        if m is not None:
            report.failure = {"seed": seed, "case": case, "mismatch": m.to_dict(),
                              "network": net, "instance": inst, "image": image,
                              "injected_fault": flipped}
            return report
        report.passed += 1
    return report
