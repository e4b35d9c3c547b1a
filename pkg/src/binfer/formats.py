"""On-disk formats.

Model file (JSON)::

    {"name": ..., "input": [width, height, depth],
     "layers": [{"name": "conv1", "kind": "conv_first", "filters": 128, "pool": false,
                 "bn": {"mu": [...], "sigma2": [...], "gamma": [...], "beta": [...],
                        "epsilon": 1e-4}},
                {"name": "fc1", "kind": "fc_binary", "outputs": 1024}, ...]}

``depth`` (conv) and ``inputs`` (fc) may be given; otherwise they are
inferred from the previous layer. ``bn`` blocks are optional.

Weight file, little-endian::

    "BNNW" | u16 version | u16 layer count
    per layer: u8 kind | u32 FW, FH, FD, N | payload
    payload: conv_first -> int8 N*FH*FW*FD in (n, h, w, d) order
             binary     -> u32 N*FH*FW*ceil(FD/32) packed filter words

Threshold file, little-endian::

    "BNNT" | u16 version | u16 layer count
    per layer: u32 channels | channels x (i32 c, u8 direction)
"""
import json
import struct
from importlib import resources

import numpy as np

from .archmodel import ArchParams
from .bitcore import FixedTensor, n_words
from .fold import BatchNormParams, FoldedThreshold
from .layers import BitFilterBank, LayerKind, LayerSpec, NetworkSpec, check_first_weights

WEIGHT_MAGIC = b"BNNW"
THRESH_MAGIC = b"BNNT"
FORMAT_VERSION = 1

KIND_CODES = {LayerKind.CONV_FIRST: 0, LayerKind.CONV_BINARY: 1,
              LayerKind.FC_BINARY: 2, LayerKind.FC_OUTPUT: 3}
KIND_FROM_CODE = {v: k for k, v in KIND_CODES.items()}

_THRESH_REC = np.dtype([("c", "<i4"), ("direction", "u1")])

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE


class FormatError(ValueError):
    pass


# -- model file ---------------------------------------------------------------

def bn_from_dict(d):
    return BatchNormParams(d["mu"], d["sigma2"], d["gamma"], d["beta"], d.get("epsilon", 1e-4))


def bn_to_dict(p):
    return {"mu": p.mu.tolist(), "sigma2": p.sigma2.tolist(), "gamma": p.gamma.tolist(),
            "beta": p.beta.tolist(), "epsilon": p.epsilon}


def spec_from_dict(d):
    """Returns ``(NetworkSpec, bn)`` where ``bn`` maps layer index to params."""
    try:
        width, height, depth = (int(v) for v in d.get("input", (32, 32, 3)))
        entries = d["layers"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed model file: {e}") from None
    if not entries:
        raise FormatError("model has no layers")
    layers, bn = [], {}
    dims = (width, height, depth)
    for i, e in enumerate(entries):
        try:
            kind = LayerKind(e["kind"])
        except (KeyError, ValueError):
            raise FormatError(f"layer {i}: unknown kind {e.get('kind')!r}") from None
        name = str(e.get("name", f"layer{i + 1}"))
        if kind.is_conv:
            layer = LayerSpec.conv(kind, int(e.get("depth", dims[2])), int(e["filters"]),
                                   bool(e.get("pool", False)), name)
            w, h = dims[:2]
            if layer.pool_after:
                w, h = w // 2, h // 2
            dims = (w, h, layer.n_filters)
        else:
            n_in = int(e.get("inputs", dims[0] * dims[1] * dims[2]))
            layer = LayerSpec.fc(kind, n_in, int(e["outputs"]), name)
            dims = (1, 1, layer.n_filters)
        layers.append(layer)
        if "bn" in e:
            bn[i] = bn_from_dict(e["bn"])
    try:
        spec = NetworkSpec(tuple(layers), width, height, depth, str(d.get("name", "")))
    except ValueError as e:
        raise FormatError(str(e)) from None
    for i, p in bn.items():
        if len(p) not in (1, spec.layers[i].n_filters):
            raise FormatError(f"layer {i} ({spec.layer_name(i)}): {len(p)} batch-norm channels, "
                              f"expected {spec.layers[i].n_filters}")
    return spec, bn


def spec_to_dict(spec, bn=None):
    out = []
    for i, l in enumerate(spec.layers):
        e = {"name": spec.layer_name(i), "kind": l.kind.value}
        if l.is_conv:
            e.update(depth=l.filter_d, filters=l.n_filters, pool=l.pool_after)
        else:
            e.update(inputs=l.filter_d, outputs=l.n_filters)
        if bn and i in bn:
            e["bn"] = bn_to_dict(bn[i])
        out.append(e)
    return {"name": spec.name, "input": list(spec.input_dims), "layers": out}


def load_model(path):
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON ({e})") from None
    return spec_from_dict(d)


def save_model(path, spec, bn=None):
    with open(path, "w") as f:
        json.dump(spec_to_dict(spec, bn), f, indent=1)
        f.write("\n")


def load_bn(path, spec):
    """Separate batch-norm file: ``{layer name: {mu, sigma2, gamma, beta, epsilon}}``."""
    with open(path) as f:
        d = json.load(f)
    names = {spec.layer_name(i): i for i in range(len(spec))}
    out = {}
    for name, block in d.items():
        if name not in names:
            raise FormatError(f"batch-norm block for unknown layer {name!r}")
        out[names[name]] = bn_from_dict(block)
    return out


def save_bn(path, spec, bn):
    with open(path, "w") as f:
        json.dump({spec.layer_name(i): bn_to_dict(p) for i, p in sorted(bn.items())}, f)
        f.write("\n")


def reference_model_path(name="cifar_bcnn"):
    return resources.files("binfer") / "data" / f"{name}.json"


def reference_spec(name="cifar_bcnn"):
    with resources.as_file(reference_model_path(name)) as p:
        return load_model(p)[0]


def reference_arch(name="cifar_bcnn_arch"):
    with resources.as_file(reference_model_path(name)) as p:
        return ArchParams.load(p)


# -- weight file --------------------------------------------------------------

def write_weights(path, spec, weights):
    if len(weights) != len(spec):
        raise ValueError(f"{len(weights)} weight layers for a {len(spec)}-layer network")
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC + struct.pack("<HH", FORMAT_VERSION, len(spec)))
        for layer, w in zip(spec.layers, weights):
            f.write(struct.pack("<B4I", KIND_CODES[layer.kind], layer.filter_w, layer.filter_h,
                                layer.filter_d, layer.n_filters))
            if layer.kind is LayerKind.CONV_FIRST:
                f.write(check_first_weights(w).tobytes())
            else:
                f.write(w.words.astype("<u4").tobytes())


def _read_exact(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"truncated file while reading {what}")
    return b


def read_weights(path):
    """Returns ``[(kind, (FW, FH, FD, N), weights), ...]``."""
    out = []
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != WEIGHT_MAGIC:
            raise FormatError(f"{path}: not a weight file")
        version, count = struct.unpack("<HH", _read_exact(f, 4, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        for i in range(count):
            code, fw, fh, fd, n = struct.unpack("<B4I", _read_exact(f, 17, f"layer {i} header"))
            if code not in KIND_FROM_CODE:
                raise FormatError(f"layer {i}: unknown kind code {code}")
            kind = KIND_FROM_CODE[code]
            if kind is LayerKind.CONV_FIRST:
                raw = _read_exact(f, n * fh * fw * fd, f"layer {i} payload")
                w = np.frombuffer(raw, dtype=np.int8).reshape(n, fh, fw, fd)
                try:
                    w = check_first_weights(w)
                except ValueError as e:
                    raise FormatError(f"layer {i}: {e}") from None
            else:
                nw = n_words(fd)
                raw = _read_exact(f, 4 * n * fh * fw * nw, f"layer {i} payload")
                words = np.frombuffer(raw, dtype="<u4").reshape(n, fh, fw, nw)
                try:
                    w = BitFilterBank(n, fw, fh, fd, words.astype(np.uint32))
                except ValueError as e:
                    raise FormatError(f"layer {i}: {e}") from None
            out.append((kind, (fw, fh, fd, n), w))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} layers")
    return out


def load_weights(path, spec):
    """Read a weight file and check it against ``spec``, layer by layer."""
    entries = read_weights(path)
    if len(entries) != len(spec):
        raise FormatError(f"weight file has {len(entries)} layers, network has {len(spec)}")
    for i, ((kind, dims, _), layer) in enumerate(zip(entries, spec.layers)):
        expect = (layer.filter_w, layer.filter_h, layer.filter_d, layer.n_filters)
        if kind is not layer.kind or dims != expect:
            raise FormatError(f"layer {i} ({spec.layer_name(i)}): weight file has "
                              f"{kind.value} {dims}, network expects {layer.kind.value} {expect}")
    return [w for _, _, w in entries]


# -- threshold file -----------------------------------------------------------

def write_thresholds(path, thresholds):
    with open(path, "wb") as f:
        f.write(THRESH_MAGIC + struct.pack("<HH", FORMAT_VERSION, len(thresholds)))
        for t in thresholds:
            rec = np.empty(len(t), dtype=_THRESH_REC)
            rec["c"] = t.c
            rec["direction"] = t.direction
            f.write(struct.pack("<I", len(t)))
            f.write(rec.tobytes())


def read_thresholds(path):
    out = []
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != THRESH_MAGIC:
            raise FormatError(f"{path}: not a threshold file")
        version, count = struct.unpack("<HH", _read_exact(f, 4, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        for i in range(count):
            (ch,) = struct.unpack("<I", _read_exact(f, 4, f"layer {i} channel count"))
            raw = _read_exact(f, ch * _THRESH_REC.itemsize, f"layer {i} thresholds")
            rec = np.frombuffer(raw, dtype=_THRESH_REC)
            try:
                out.append(FoldedThreshold(rec["c"].astype(np.int64), rec["direction"].copy()))
            except ValueError as e:
                raise FormatError(f"layer {i}: {e}") from None
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} layers")
    return out


# -- images -------------------------------------------------------------------

def _rescale_table():
    v = np.arange(256, dtype=np.float64)
    x = (v - 127.5) / 127.5 * 31
    a = np.abs(x)
    r = np.floor(a)
    r = r + (a - r >= 0.5)
    return (np.sign(x) * r).astype(np.int8)


RESCALE = _rescale_table()


def rescale_pixels(pixels):
    """Map 8-bit pixels onto the fixed-point input range [-31, 31]."""
    return RESCALE[np.asarray(pixels, dtype=np.uint8)]


def ingest_cifar10(path, count=None, labels=True):
    """Read CIFAR-10 binary records into ``[(label or None, FixedTensor), ...]``.

    Each record is an optional label byte then 3x1024 channel-major pixels.
    """
    rec = CIFAR_PIXELS + (1 if labels else 0)
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % rec:
        raise FormatError(f"{path}: {raw.size} bytes is not a whole number of "
                          f"{rec}-byte records (truncated?)")
    total = raw.size // rec
    if count is None:
        count = total
    elif count > total:
        raise FormatError(f"{path}: asked for {count} records, file has {total}")
    recs = raw[:count * rec].reshape(count, rec)
    lab = recs[:, 0].astype(int) if labels else [None] * count
    pix = recs[:, 1:] if labels else recs
    fixed = rescale_pixels(pix).reshape(count, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return [(None if l is None else int(l), FixedTensor(img)) for l, img in zip(lab, fixed)]


def write_cifar10(path, images, labels=None):
    """``images`` is ``(N, 3, 32, 32)`` uint8; labels omitted -> unlabeled records."""
    images = np.asarray(images, dtype=np.uint8).reshape(-1, CIFAR_PIXELS)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
        if len(labels) != len(images):
            raise ValueError("label count mismatch")
        images = np.concatenate([labels, images], axis=1)
    images.tofile(path)
