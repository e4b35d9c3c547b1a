"""Analytical cycle/throughput model and layer-balancing planner.

Per layer, with UF XNOR lanes per PE, P parallel PEs and initiation
interval I:

    cycle_conv = OW * OH * N * FW * FH * FD        (pre-pool output x filter volume)
    cycle_est  = ceil(cycle_conv / (UF * P)) * I

Layers run concurrently and hand over through double buffers, so the
system rate is ``freq / max(cycle_l)``.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .layers import LayerKind

BRAM_WORD_BITS = 32
DEFAULT_LUT_PER_XNOR = Fraction(2, 5)  # 2.5 XNORs per 6-input LUT


def _exact(x):
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    return Fraction(str(x))


def divisors(n):
    small = [d for d in range(1, math.isqrt(n) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


@dataclass(frozen=True)
class LayerArch:
    name: str
    uf: int
    p: int
    ii: int = 1

    def __post_init__(self):
        for k in ("uf", "p", "ii"):
            v = getattr(self, k)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{self.name}: {k} must be a positive integer, got {v!r}")

    @property
    def lanes(self):
        return self.uf * self.p


@dataclass(frozen=True)
class ArchParams:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("duplicate layer names in arch params")

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def get(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        return None

    @property
    def total_lanes(self):
        return sum(l.lanes for l in self.layers)

    def to_dict(self):
        return {"layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(LayerArch(str(e["name"]), int(e["uf"]), int(e["p"]), int(e.get("ii", 1)))
                         for e in d["layers"]))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class ResourceBudget:
    luts: int
    brams: int = None
    dsps: int = None
    lut_per_xnor: Fraction = DEFAULT_LUT_PER_XNOR
    lut_overhead: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "lut_per_xnor", _exact(self.lut_per_xnor))
        object.__setattr__(self, "lut_overhead", _exact(self.lut_overhead))
        if self.luts is None or self.luts <= 0:
            raise ValueError("LUT budget must be positive")
        for k in ("brams", "dsps"):
            v = getattr(self, k)
            if v is not None and v <= 0:
                raise ValueError(f"{k} budget must be positive")
        if self.lut_per_xnor <= 0 or self.lut_overhead <= 0:
            raise ValueError("LUT cost factors must be positive")

    @classmethod
    def parse(cls, text):
        """Parse ``"luts=433200,brams=2060,dsps=2800[,lut_per_xnor=0.4][,overhead=1.0]"``."""
        kw = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, val = part.partition("=")
            key = key.strip().lower()
            if not sep:
                raise ValueError(f"budget entry {part!r} is not key=value")
            if key in ("luts", "brams", "dsps"):
                kw[key] = int(val)
            elif key == "lut_per_xnor":
                kw[key] = Fraction(val.strip())
            elif key == "overhead":
                kw["lut_overhead"] = Fraction(val.strip())
            else:
                raise ValueError(f"unknown budget key {key!r}")
        if "luts" not in kw:
            raise ValueError("budget needs luts=")
        return cls(**kw)


def cycle_conv(layer, conv_out_dims):
    """Cycles with one XNOR-accumulate per clock (FC: outputs x inputs)."""
    ow, oh, od = conv_out_dims
    return ow * oh * od * layer.filter_w * layer.filter_h * layer.filter_d


def cycle_est(cc, uf, p, ii=1):
    if uf < 1 or p < 1:
        raise ValueError("UF and P must be >= 1")
    if ii < 1:
        raise ValueError("initiation interval must be >= 1")
    if uf * p > cc:
        raise ValueError(f"UF*P = {uf * p} exceeds cycle_conv = {cc}")
    return -(-cc // (uf * p)) * ii


def throughput_conv(uf, p, cc, ii, freq):
    """Feature maps per second of one kernel; equals ``freq / cycle_est``.

    Matches ``UF * P / cycle_conv / I * freq`` whenever UF*P divides cycle_conv.
    """
    if freq <= 0:
        raise ValueError("frequency must be positive")
    return freq / cycle_est(cc, uf, p, ii)


def system_throughput(cycles, freq):
    """``(fps, bottleneck_index)``; the first slowest layer is the bottleneck."""
    cycles = list(cycles)
    if not cycles:
        raise ValueError("no layer cycle counts")
    if freq <= 0:
        raise ValueError("frequency must be positive")
    worst = max(cycles)
    if worst <= 0:
        raise ValueError("cycle counts must be positive")
    return freq / worst, cycles.index(worst)


def network_macs(network):
    return sum(cycle_conv(l, s.conv_out) for l, s in zip(network.layers, network.shapes))


def gops(network, fps):
    """Giga-ops per second at 2 ops per MAC, FC layers included."""
    if fps < 0:
        raise ValueError("fps must be >= 0")
    return 2 * network_macs(network) * fps / 1e9


def layer_luts(lanes, lut_per_xnor=DEFAULT_LUT_PER_XNOR, overhead=1):
    return math.ceil(lanes * _exact(lut_per_xnor) * _exact(overhead))


def lut_estimate(arch, network=None, lut_per_xnor=DEFAULT_LUT_PER_XNOR, overhead=1):
    """Lower bound on LUTs: XNOR arrays only, rounded up per layer."""
    return sum(layer_luts(l.lanes, lut_per_xnor, overhead) for l in arch)


def calibrate_overhead(arch, measured_luts, lut_per_xnor=DEFAULT_LUT_PER_XNOR):
    """Multiplier mapping the XNOR-only bound of ``arch`` onto a measured LUT count.

    Taken before the per-layer ceilings, so the calibrated estimate of
    ``arch`` lands in ``[measured, measured + len(arch))``.
    """
    if measured_luts <= 0:
        raise ValueError("measured LUT count must be positive")
    return Fraction(measured_luts) / (arch.total_lanes * _exact(lut_per_xnor))


def bram_plan(weight_bits, parallel_bits_per_cycle):
    """``(reshape_factor, partitions)`` for reading the given bits per cycle."""
    if parallel_bits_per_cycle < 1:
        raise ValueError("need at least one bit per cycle")
    if weight_bits < 0:
        raise ValueError("weight_bits must be >= 0")
    return BRAM_WORD_BITS, -(-parallel_bits_per_cycle // BRAM_WORD_BITS)


def _weight_bits(layer):
    # first-layer weights sit in 2-bit signed containers
    return 2 if layer.kind is LayerKind.CONV_FIRST else 1


def dsp_estimate(layer, la):
    """Fixed-point first layer: one multiplier per lane; binary layers: one accumulator per PE."""
    return la.lanes if layer.kind is LayerKind.CONV_FIRST else la.p


@dataclass
class LayerReport:
    name: str
    uf: int
    p: int
    ii: int
    cycle_conv: int
    cycle_est: int
    cycles: int           # value used for throughput (measured if given)
    luts: int
    dsps: int
    bram_partitions: int
    weight_bits: int


@dataclass
class CycleReport:
    freq: float
    layers: list
    bottleneck: int
    fps: float
    gops: float
    measured: bool = False
    total_macs: int = 0
    luts: int = field(init=False)
    dsps: int = field(init=False)
    bram_partitions: int = field(init=False)

    def __post_init__(self):
        self.luts = sum(l.luts for l in self.layers)
        self.dsps = sum(l.dsps for l in self.layers)
        self.bram_partitions = sum(l.bram_partitions for l in self.layers)

    @property
    def max_cycle_est(self):
        return max(l.cycle_est for l in self.layers)

    @property
    def total_lanes(self):
        return sum(l.uf * l.p for l in self.layers)

    def to_dict(self):
        d = asdict(self)
        d["fps_floor"] = math.floor(self.fps)
        d["bottleneck_name"] = self.layers[self.bottleneck].name
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self):
        hdr = f"{'layer':<10}{'UF':>7}{'P':>6}{'I':>4}{'cycle_conv':>14}{'cycle_est':>11}"
        if self.measured:
            hdr += f"{'cycle_r':>10}"
        hdr += f"{'LUTs':>9}{'DSPs':>7}{'BRAMp':>7}"
        lines = [hdr, "-" * len(hdr)]
        for i, l in enumerate(self.layers):
            row = f"{l.name:<10}{l.uf:>7}{l.p:>6}{l.ii:>4}{l.cycle_conv:>14}{l.cycle_est:>11}"
            if self.measured:
                row += f"{l.cycles:>10}"
            row += f"{l.luts:>9}{l.dsps:>7}{l.bram_partitions:>7}"
            if i == self.bottleneck:
                row += "  <- bottleneck"
            lines.append(row)
        lines.append("-" * len(hdr))
        lines.append(f"freq {self.freq / 1e6:g} MHz | {'measured' if self.measured else 'modeled'} "
                     f"bottleneck {self.layers[self.bottleneck].name} "
                     f"({self.layers[self.bottleneck].cycles} cycles)")
        lines.append(f"throughput {math.floor(self.fps)} FPS | {self.gops:.1f} GOPS "
                     f"({self.total_macs} MACs/image, 2 ops/MAC)")
        lines.append(f"XNOR-array LUTs >= {self.luts} | DSPs {self.dsps} | "
                     f"BRAM partitions {self.bram_partitions} | lanes {self.total_lanes}")
        return "\n".join(lines)


def estimate(network, arch, freq, measured=None, lut_per_xnor=DEFAULT_LUT_PER_XNOR, overhead=1):
    """Cycle report for the layers named in ``arch``.

    ``arch`` must cover every conv layer; FC entries are optional.
    ``measured`` replaces cycle_est in the throughput (one value per arch entry).
    """
    if freq <= 0:
        raise ValueError("frequency must be positive")
    index = {network.layer_name(i): i for i in range(len(network))}
    for l in arch:
        if l.name not in index:
            raise ValueError(f"arch entry {l.name!r} matches no layer in the network")
    for i, layer in enumerate(network.layers):
        if layer.is_conv and arch.get(network.layer_name(i)) is None:
            raise ValueError(f"arch params missing for layer {network.layer_name(i)!r}")
    if measured is not None and len(measured) != len(arch):
        raise ValueError(f"{len(measured)} measured values for {len(arch)} arch layers")

    ordered = sorted(arch, key=lambda l: index[l.name])
    meas_by_name = dict(zip((l.name for l in arch), measured)) if measured is not None else {}
    reports = []
    for la in ordered:
        i = index[la.name]
        layer, shape = network.layers[i], network.shapes[i]
        if la.uf > layer.cnum:
            raise ValueError(f"{la.name}: UF {la.uf} exceeds filter volume {layer.cnum}")
        if layer.n_filters % la.p:
            raise ValueError(f"{la.name}: P {la.p} does not divide {layer.n_filters} filters")
        cc = cycle_conv(layer, shape.conv_out)
        ce = cycle_est(cc, la.uf, la.p, la.ii)
        wbits = _weight_bits(layer)
        reports.append(LayerReport(
            la.name, la.uf, la.p, la.ii, cc, ce, int(meas_by_name.get(la.name, ce)),
            layer_luts(la.lanes, lut_per_xnor, overhead), dsp_estimate(layer, la),
            bram_plan(layer.cnum * layer.n_filters * wbits, la.lanes * wbits)[1],
            layer.cnum * layer.n_filters * wbits))
    fps, b = system_throughput([r.cycles for r in reports], freq)
    return CycleReport(freq, reports, b, fps, gops(network, fps), measured is not None,
                       network_macs(network))


def uf_candidates(layer, full_space=False):
    if full_space:
        return divisors(layer.cnum)
    return sorted({layer.filter_w * layer.filter_d * h for h in divisors(layer.filter_h)})


def p_candidates(layer):
    return [1 << k for k in range(layer.n_filters.bit_length()) if layer.n_filters % (1 << k) == 0]


def planned_layers(network, include_fc=False):
    return [i for i, l in enumerate(network.layers) if l.is_conv or include_fc]


def layer_options(network, i, budget, ii=1, full_space=False):
    """All ``(cycle_est, lanes, uf, p, luts)`` options for layer ``i``, cheapest first."""
    layer, shape = network.layers[i], network.shapes[i]
    cc = cycle_conv(layer, shape.conv_out)
    opts = []
    for uf in uf_candidates(layer, full_space):
        for p in p_candidates(layer):
            if uf * p > cc:
                continue
            opts.append((cycle_est(cc, uf, p, ii), uf * p, uf, p,
                         layer_luts(uf * p, budget.lut_per_xnor, budget.lut_overhead)))
    opts.sort(key=lambda o: (o[1], o[2]))
    return opts


class InfeasibleBudget(ValueError):
    pass


def plan(network, budget, freq, ii=1, full_space=False, include_fc=False):
    """Balance per-layer (UF, P) to minimize the slowest layer within the LUT budget.

    Among assignments reaching the optimal max cycle_est, the one with the
    fewest total XNOR lanes is returned; remaining ties prefer smaller UF,
    layer by layer. Returns ``(ArchParams, CycleReport)``.
    """
    idx = planned_layers(network, include_fc)
    opts = [layer_options(network, i, budget, ii, full_space) for i in idx]

    def cheapest(target):
        # opts are sorted by lanes then UF, so the first fit is the cheapest
        return [next(o for o in os_ if o[0] <= target) for os_ in opts]

    def cost(choice):
        return sum(o[4] for o in choice)

    floor = max(min(o[0] for o in os_) for os_ in opts)
    targets = sorted({o[0] for os_ in opts for o in os_ if o[0] >= floor})
    if cost(cheapest(targets[-1])) > budget.luts:
        raise InfeasibleBudget(
            f"even the smallest configuration needs {cost(cheapest(targets[-1]))} LUTs "
            f"> budget {budget.luts}")
    lo, hi = 0, len(targets) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cost(cheapest(targets[mid])) <= budget.luts:
            hi = mid
        else:
            lo = mid + 1
    choice = cheapest(targets[lo])
    arch = ArchParams(tuple(LayerArch(network.layer_name(i), o[2], o[3], ii)
                            for i, o in zip(idx, choice)))
    report = estimate(network, arch, freq, lut_per_xnor=budget.lut_per_xnor,
                      overhead=budget.lut_overhead)
    return arch, report


def objective(network, arch, budget):
    """``(max cycle_est, total lanes)`` of an assignment, or None if over budget."""
    ce, lanes, luts = [], 0, 0
    for la in arch:
        i = next(k for k in range(len(network)) if network.layer_name(k) == la.name)
        cc = cycle_conv(network.layers[i], network.shapes[i].conv_out)
        ce.append(cycle_est(cc, la.uf, la.p, la.ii))
        lanes += la.lanes
        luts += layer_luts(la.lanes, budget.lut_per_xnor, budget.lut_overhead)
    if luts > budget.luts:
        return None
    return max(ce), lanes
