"""Layer graph and the bit-packed inference path.

Per image: fixed-point conv -> NormBinarize, then binary conv [-> max-pool]
-> NormBinarize for each hidden conv layer, binary FC -> NormBinarize, and
an output FC whose compensated match counts go through batch-norm only.

Binary-layer padding taps hold bit 0 (logical -1), so every output pixel
sums exactly ``cnum = FW * FH * FD`` XNORs. First-layer padding is the
integer 0.
"""
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bitcore import BitTensor, FixedTensor, _pack_bits, _unpack_bits, n_words, valid_mask
from .fold import BatchNormParams, final_layer_affine


class LayerKind(enum.Enum):
    CONV_FIRST = "conv_first"
    CONV_BINARY = "conv_binary"
    FC_BINARY = "fc_binary"
    FC_OUTPUT = "fc_output"

    @property
    def is_conv(self):
        return self in (LayerKind.CONV_FIRST, LayerKind.CONV_BINARY)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    filter_w: int
    filter_h: int
    filter_d: int
    n_filters: int
    pool_after: bool = False
    pad: int = 1
    stride: int = 1
    name: str = ""

    @classmethod
    def conv(cls, kind, depth, n_filters, pool_after=False, name=""):
        return cls(LayerKind(kind), 3, 3, depth, n_filters, pool_after, 1, 1, name)

    @classmethod
    def fc(cls, kind, n_in, n_out, name=""):
        return cls(LayerKind(kind), 1, 1, n_in, n_out, False, 0, 1, name)

    @property
    def cnum(self):
        return self.filter_w * self.filter_h * self.filter_d

    @property
    def is_conv(self):
        return self.kind.is_conv


@dataclass(frozen=True)
class LayerShape:
    """(width, height, depth) triples around one layer."""

    input: tuple
    conv_out: tuple
    output: tuple


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_width: int = 32
    input_height: int = 32
    input_depth: int = 3
    name: str = ""
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "shapes", tuple(self._chain()))

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def input_dims(self):
        return self.input_width, self.input_height, self.input_depth

    def layer_name(self, i):
        return self.layers[i].name or f"layer{i + 1}"

    def _chain(self):
        if len(self.layers) < 2:
            raise ValueError("network needs at least a first conv and an output layer")
        kinds = [l.kind for l in self.layers]
        if kinds[0] is not LayerKind.CONV_FIRST or kinds.count(LayerKind.CONV_FIRST) != 1:
            raise ValueError("exactly one conv_first layer, in first position")
        if kinds[-1] is not LayerKind.FC_OUTPUT or kinds.count(LayerKind.FC_OUTPUT) != 1:
            raise ValueError("exactly one fc_output layer, in last position")
        dims = self.input_dims
        if min(dims) < 1:
            raise ValueError(f"bad input dims {dims}")
        seen_fc = False
        for i, layer in enumerate(self.layers):
            where = f"{self.layer_name(i)} (index {i})"
            if layer.n_filters < 1 or layer.filter_d < 1:
                raise ValueError(f"{where}: empty layer")
            w, h, d = dims
            if layer.is_conv:
                if seen_fc:
                    raise ValueError(f"{where}: conv layer after a fully-connected layer")
                if (layer.filter_w, layer.filter_h, layer.pad, layer.stride) != (3, 3, 1, 1):
                    raise ValueError(f"{where}: conv layers must be 3x3, pad 1, stride 1")
                if layer.filter_d != d:
                    raise ValueError(f"{where}: filter depth {layer.filter_d} != input depth {d}")
                conv_out = (w, h, layer.n_filters)
                if layer.pool_after:
                    if w % 2 or h % 2:
                        raise ValueError(f"{where}: max-pool needs even dims, got {w}x{h}")
                    out = (w // 2, h // 2, layer.n_filters)
                else:
                    out = conv_out
            else:
                seen_fc = True
                if (layer.filter_w, layer.filter_h, layer.pad) != (1, 1, 0) or layer.pool_after:
                    raise ValueError(f"{where}: fc layers are 1x1, unpadded, unpooled")
                if layer.filter_d != w * h * d:
                    raise ValueError(f"{where}: expects {layer.filter_d} inputs, gets {w * h * d}")
                conv_out = out = (1, 1, layer.n_filters)
            yield LayerShape(dims, conv_out, out)
            dims = out


@dataclass(frozen=True, eq=False)
class BitFilterBank:
    """``n`` packed filters of ``fw x fh x fd``; words ``(n, fh, fw, nw)``."""

    n: int
    fw: int
    fh: int
    fd: int
    words: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=np.uint32)
        w.setflags(write=False)
        object.__setattr__(self, "words", w)
        expect = (self.n, self.fh, self.fw, n_words(self.fd))
        if w.shape != expect:
            raise ValueError(f"filter words shape {w.shape} != {expect}")
        if np.any(w[..., -1] & ~valid_mask(self.fd)):
            raise ValueError("filter padding bits must be zero")

    @classmethod
    def from_pm1(cls, filters):
        """From a ``(n, fh, fw, fd)`` array of +/-1."""
        f = np.asarray(filters)
        if f.ndim != 4 or not np.all((f == 1) | (f == -1)):
            raise ValueError("filters must be a 4-D array of +/-1")
        n, fh, fw, fd = f.shape
        return cls(n, fw, fh, fd, _pack_bits((f > 0).astype(np.uint8), fd))

    def to_pm1(self):
        return _unpack_bits(self.words, self.fd).astype(np.int8) * 2 - 1

    def __eq__(self, other):
        if not isinstance(other, BitFilterBank):
            return NotImplemented
        return (self.n, self.fw, self.fh, self.fd) == (other.n, other.fw, other.fh, other.fd) \
            and np.array_equal(self.words, other.words)


def check_first_weights(w):
    w = np.asarray(w)
    if w.ndim != 4 or not np.all((w == 1) | (w == -1)):
        raise ValueError("first-layer weights must be a 4-D array of +/-1")
    return np.ascontiguousarray(w, dtype=np.int8)


@dataclass(frozen=True, eq=False)
class IntFeatureMap:
    """Accumulator outputs, shape ``(height, width, depth)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError("expected (height, width, depth)")
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def depth(self):
        return self.values.shape[2]


def _check_layer_weights(w, layer):
    expect = (layer.n_filters, layer.filter_h, layer.filter_w, layer.filter_d)
    if layer.kind is LayerKind.CONV_FIRST:
        if np.shape(w) != expect:
            raise ValueError(f"first-layer weights {np.shape(w)} != {expect}")
    elif (w.n, w.fh, w.fw, w.fd) != expect:
        raise ValueError(f"filter bank {(w.n, w.fh, w.fw, w.fd)} != {expect}")


def conv_first(inp, weights, spec):
    if inp.depth != spec.filter_d:
        raise ValueError(f"input depth {inp.depth} != filter depth {spec.filter_d}")
    w = check_first_weights(weights)
    _check_layer_weights(w, spec)
    y = kernels.impl().fixed_conv2d(inp.values, w, spec.pad)
    return IntFeatureMap(np.asarray(y, dtype=np.int64))


def conv_binary(inp, weights, spec):
    if inp.depth != spec.filter_d:
        raise ValueError(f"input depth {inp.depth} != filter depth {spec.filter_d}")
    _check_layer_weights(weights, spec)
    y = kernels.impl().xnor_conv2d(inp.words, weights.words, spec.pad, valid_mask(spec.filter_d))
    return IntFeatureMap(np.asarray(y, dtype=np.int64))


def max_pool(y):
    v = y.values
    h, w, d = v.shape
    if h % 2 or w % 2:
        raise ValueError(f"max-pool needs even dims, got {w}x{h}")
    return IntFeatureMap(v.reshape(h // 2, 2, w // 2, 2, d).max(axis=(1, 3)))


def norm_binarize(y, t):
    if y.depth != len(t):
        raise ValueError(f"{y.depth} channels but {len(t)} thresholds")
    return BitTensor.from_bits(t.apply(y.values))


def fc_accumulate(inp, weights, spec):
    col = inp.as_column()
    if col.depth != spec.filter_d:
        raise ValueError(f"fc input length {col.depth} != weight row length {spec.filter_d}")
    return conv_binary(col, weights, spec)


def fc_binary(inp, weights, t, spec):
    return norm_binarize(fc_accumulate(inp, weights, spec), t)


def classify(inp, weights, bn, spec):
    """Returns ``(prediction, scores)``; ties go to the lowest class index."""
    y = fc_accumulate(inp, weights, spec).values.reshape(-1)
    if len(bn) not in (1, y.size):
        raise ValueError(f"{len(bn)} batch-norm channels for {y.size} outputs")
    scores = np.broadcast_to(final_layer_affine(y, spec.cnum, bn), y.shape).astype(np.float64)
    return int(np.argmax(scores)), scores


@dataclass
class Trace:
    """Intermediate values of one forward pass."""

    conv: list = field(default_factory=list)        # pre-pool accumulators
    pooled: list = field(default_factory=list)      # what NormBinarize saw
    activations: list = field(default_factory=list)
    scores: np.ndarray = None
    prediction: int = None


def check_model(spec, weights, thresholds, output_bn=None):
    """Raise ValueError naming the first layer whose artifacts do not fit."""
    n = len(spec)
    if len(weights) != n:
        raise ValueError(f"{len(weights)} weight layers for a {n}-layer network")
    for i, layer in enumerate(spec.layers):
        where = f"layer {i} ({spec.layer_name(i)})"
        try:
            _check_layer_weights(weights[i], layer)
        except ValueError as e:
            raise ValueError(f"{where}: {e}") from None
        if layer.kind is LayerKind.FC_OUTPUT:
            if output_bn is not None and len(output_bn) not in (1, layer.n_filters):
                raise ValueError(f"{where}: {len(output_bn)} batch-norm channels, "
                                 f"expected {layer.n_filters}")
            continue
        if i >= len(thresholds) or thresholds[i] is None:
            raise ValueError(f"{where}: missing thresholds")
        if len(thresholds[i]) != layer.n_filters:
            raise ValueError(f"{where}: {len(thresholds[i])} thresholds, "
                             f"expected {layer.n_filters}")


def layer_step(layer, w, t, x, trace=None):
    """Run one layer. Returns a BitTensor, or ``(prediction, scores)`` for the output layer."""
    if layer.kind is LayerKind.FC_OUTPUT:
        bn = t if t is not None else BatchNormParams.identity(layer.n_filters)
        return classify(x, w, bn, layer)
    if layer.kind is LayerKind.CONV_FIRST:
        y = conv_first(x, w, layer)
    elif layer.kind is LayerKind.CONV_BINARY:
        y = conv_binary(x, w, layer)
    else:
        y = fc_accumulate(x, w, layer)
    if trace is not None:
        trace.conv.append(y)
    if layer.pool_after:
        y = max_pool(y)
    if trace is not None:
        trace.pooled.append(y)
    a = norm_binarize(y, t)
    if trace is not None:
        trace.activations.append(a)
    return a


def stage_params(thresholds, output_bn, spec):
    """Per-layer NormBinarize / Norm parameters, output layer last."""
    return [thresholds[i] for i in range(len(spec) - 1)] + [output_bn]


def forward(spec, weights, thresholds, image, output_bn=None):
    """Full pass over one image, keeping every intermediate."""
    check_model(spec, weights, thresholds, output_bn)
    if not isinstance(image, FixedTensor):
        image = FixedTensor(image)
    if (image.width, image.height, image.depth) != spec.input_dims:
        raise ValueError(f"image dims {(image.width, image.height, image.depth)} "
                         f"!= network input {spec.input_dims}")
    trace = Trace()
    x = image
    params = stage_params(thresholds, output_bn, spec)
    for layer, w, t in zip(spec.layers, weights, params):
        x = layer_step(layer, w, t, x, trace)
    trace.prediction, trace.scores = x
    return trace


def run_network(spec, weights, thresholds, image, output_bn=None):
    return forward(spec, weights, thresholds, image, output_bn).prediction


def run_batch(spec, weights, thresholds, images, output_bn=None, workers=1):
    """Sequential mode over a batch; returns ``[(prediction, scores), ...]`` in input order."""
    check_model(spec, weights, thresholds, output_bn)

    def one(img):
        tr = forward(spec, weights, thresholds, img, output_bn)
        return tr.prediction, tr.scores

    if workers <= 1 or len(images) <= 1:
        return [one(img) for img in images]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, images))
