"""Folded-dataflow performance and resource model for integer networks.

Every FC layer is time-multiplexed over a pe x simd compute grid; the
pipeline's steady-state rate is set by its slowest layer. Cycle counts are
ideal (no stream/memory overhead term); the gap to measured hardware is
absorbed by an optional efficiency factor that defaults to 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

from .errors import ShapeError

BRAM18_BITS = 18 * 1024
INPUT_BYTES_PER_IMAGE = 1024        # 32x32 8-bit pixels
DEFAULT_CLOCK_MHZ = 100.0

CSV_COLUMNS = ("name", "abits", "wbits", "pe", "simd", "ii_cycles", "img_per_s", "dram_MB_s", "luts", "ffs", "bram18", "fits")


def _load_packaged_json(name: str) -> dict:
    with resources.files("qnnbench.configs").joinpath(name).open("r", encoding="utf-8") as f:
        return json.load(f)


@dataclass(frozen=True)
class BoardBudget:
    name: str
    luts: int
    flip_flops: int
    bram18: int
    bram_bytes: int

    def __post_init__(self):
        for f_name in ("luts", "flip_flops", "bram18", "bram_bytes"):
            if getattr(self, f_name) <= 0:
                raise ValueError(f"board budget {f_name} must be positive")


def board_preset(name: str = "pynq-z1", config_path=None) -> BoardBudget:
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as f:
            presets = json.load(f)
    else:
        presets = _load_packaged_json("boards.json")
    if name not in presets:
        raise KeyError(f"unknown board {name!r}; available: {sorted(presets)}")
    return BoardBudget(name=name, **presets[name])


@dataclass(frozen=True)
class LogicCosts:
    lut_base_per_mac: float = 10.0
    lut_per_mac_bit_product: float = 6.0
    lut_per_threshold: float = 8.0
    ff_base_per_mac: float = 4.0
    ff_per_state_bit: float = 2.0
    efficiency: float = 1.0


def logic_costs(config_path=None) -> LogicCosts:
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    else:
        raw = _load_packaged_json("logic_costs.json")
    raw = {k: v for k, v in raw.items() if k != "comment"}
    return LogicCosts(**raw)


@dataclass
class LayerShape:
    """What the simulator needs to know about one FC stage."""

    in_features: int
    out_features: int
    acc_bits: int
    n_thresholds: int       # 2^a - 1 for hidden stages, 0 for the output FC


@dataclass
class FoldingConfig:
    folds: list        # per FC layer: (pe, simd)
    fifo_depth: int = 2
    clock_mhz: float = DEFAULT_CLOCK_MHZ

    def __post_init__(self):
        if self.clock_mhz <= 0:
            raise ValueError(f"clock_mhz must be positive, got {self.clock_mhz}")
        if self.fifo_depth < 1:
            raise ValueError(f"fifo_depth must be >= 1, got {self.fifo_depth}")
        for pe, simd in self.folds:
            if pe < 1 or simd < 1:
                raise ValueError(f"pe/simd must be positive, got ({pe}, {simd})")

    @classmethod
    def uniform(cls, shapes: list, pe: int, simd: int, clock_mhz: float = DEFAULT_CLOCK_MHZ, fifo_depth: int = 2):
        """One (pe, simd) request clamped per layer to its dimensions.

        Asking for more lanes than any layer offers is an error; exceeding a
        single layer's width (e.g. pe=16 on the 10-logit head) clamps.
        """
        if pe < 1 or simd < 1:
            raise ValueError(f"pe/simd must be positive, got ({pe}, {simd})")
        if pe > max(s.out_features for s in shapes):
            raise ValueError(f"pe={pe} exceeds every layer's output width")
        if simd > max(s.in_features for s in shapes):
            raise ValueError(f"simd={simd} exceeds every layer's input width")
        folds = [(min(pe, s.out_features), min(simd, s.in_features)) for s in shapes]
        return cls(folds=folds, fifo_depth=fifo_depth, clock_mhz=clock_mhz)


def network_shapes(net) -> list:
    """LayerShapes from an IntegerNetwork or a NetworkSpec."""
    shapes = []
    if hasattr(net, "output_affine"):           # IntegerNetwork
        for layer in net.layers:
            n_t = 0 if layer.thresholds is None else layer.thresholds.shape[1]
            shapes.append(LayerShape(layer.in_features, layer.out_features, layer.acc_bits, n_t))
        return shapes
    from .model import FC, QUANT_ACT            # NetworkSpec path

    fc_layers = [l for l in net.layers if l.kind == FC]
    input_bits = 8
    for k, layer in enumerate(fc_layers):
        is_last = k == len(fc_layers) - 1
        acc_bits = int(math.ceil(math.log2(layer.in_features))) + (layer.weight_bits - 1) + input_bits
        n_t = 0 if is_last else (2**net.a_bits - 1)
        shapes.append(LayerShape(layer.in_features, layer.out_features, acc_bits, n_t))
        input_bits = net.a_bits
    return shapes


def layer_cycles(out_features: int, in_features: int, pe: int, simd: int) -> int:
    """ceil(out/pe) * ceil(in/simd) cycles between images for one layer."""
    if out_features < 1 or in_features < 1:
        raise ValueError("layer dimensions must be positive")
    if not 1 <= pe <= out_features:
        raise ValueError(f"pe must lie in [1, {out_features}], got {pe}")
    if not 1 <= simd <= in_features:
        raise ValueError(f"simd must lie in [1, {in_features}], got {simd}")
    return math.ceil(out_features / pe) * math.ceil(in_features / simd)


def initiation_interval(shapes: list, folding: FoldingConfig) -> int:
    """Steady-state cycles per image: the slowest pipeline stage."""
    if len(folding.folds) != len(shapes):
        raise ShapeError(f"folding has {len(folding.folds)} entries for {len(shapes)} FC layers")
    return max(
        layer_cycles(s.out_features, s.in_features, pe, simd)
        for s, (pe, simd) in zip(shapes, folding.folds)
    )


def throughput(shapes: list, folding: FoldingConfig, efficiency: float = 1.0) -> float:
    """Images per second at the configured clock."""
    return efficiency * folding.clock_mhz * 1e6 / initiation_interval(shapes, folding)


def dram_in_bandwidth(img_per_s: float, input_bytes_per_image: int = INPUT_BYTES_PER_IMAGE) -> float:
    """Input-stream bandwidth in bytes/s."""
    return img_per_s * input_bytes_per_image


def threshold_memory_bits(channels: int, a_bits: int, acc_bits: int) -> int:
    """channels * (2^a - 1) thresholds, each an accumulator-wide word."""
    if channels < 1 or a_bits < 1 or acc_bits < 1:
        raise ValueError("threshold memory needs positive channels and widths")
    return channels * (2**a_bits - 1) * acc_bits


def weight_memory_bits(out_features: int, in_features: int, w_bits: int) -> int:
    if out_features < 1 or in_features < 1:
        raise ValueError("layer dimensions must be positive")
    if w_bits < 1:
        raise ValueError("w_bits must be positive")
    return out_features * in_features * w_bits


def bram18_count(total_bits: int) -> int:
    if total_bits < 0:
        raise ValueError("bit count cannot be negative")
    return math.ceil(total_bits / BRAM18_BITS)


def logic_estimate(pe: int, simd: int, w_bits: int, a_bits: int, acc_bits: int, n_thresholds: int = 0, costs: LogicCosts | None = None):
    """(luts, ffs) for one folded layer.

    MAC grid: pe*simd units, each lut_base + lut_coeff*w*a LUTs and
    ff_base + ff_coeff*(w + a + acc_bits) FFs; plus one comparator bank per
    PE over the layer's thresholds.
    """
    costs = costs or LogicCosts()
    macs = pe * simd
    luts = macs * (costs.lut_base_per_mac + costs.lut_per_mac_bit_product * w_bits * a_bits)
    luts += costs.lut_per_threshold * n_thresholds * pe
    ffs = macs * (costs.ff_base_per_mac + costs.ff_per_state_bit * (w_bits + a_bits + acc_bits))
    return int(round(luts)), int(round(ffs))


@dataclass
class LayerReport:
    index: int
    pe: int
    simd: int
    cycles: int
    weight_bits: int
    threshold_bits: int
    luts: int
    ffs: int


@dataclass
class ResourceReport:
    name: str
    a_bits: int
    w_bits: int
    pe: int
    simd: int
    clock_mhz: float
    ii_cycles: int
    img_per_s: float
    dram_bytes_per_s: float
    layers: list = field(default_factory=list)
    luts: int = 0
    ffs: int = 0
    weight_bits_total: int = 0
    threshold_bits_total: int = 0
    bram18: int = 0
    budget_name: str = ""
    fits: bool = True

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "abits": self.a_bits,
            "wbits": self.w_bits,
            "pe": self.pe,
            "simd": self.simd,
            "clock_mhz": self.clock_mhz,
            "ii_cycles": self.ii_cycles,
            "img_per_s": self.img_per_s,
            "dram_MB_s": self.dram_bytes_per_s / 1e6,
            "luts": self.luts,
            "ffs": self.ffs,
            "weight_bits": self.weight_bits_total,
            "threshold_bits": self.threshold_bits_total,
            "bram18": self.bram18,
            "board": self.budget_name,
            "fits": self.fits,
            "layers": [vars(l) for l in self.layers],
        }

    def csv_row(self) -> list:
        return [
            self.name,
            self.a_bits,
            self.w_bits,
            self.pe,
            self.simd,
            self.ii_cycles,
            repr(self.img_per_s),
            repr(self.dram_bytes_per_s / 1e6),
            self.luts,
            self.ffs,
            self.bram18,
            "true" if self.fits else "false",
        ]


def simulate(net, folding_or_pe, simd: int | None = None, budget: BoardBudget | None = None, clock_mhz: float = DEFAULT_CLOCK_MHZ, costs: LogicCosts | None = None) -> ResourceReport:
    """Assemble the full report for one folding of one network.

    `net` may be an IntegerNetwork or a NetworkSpec (topology-level
    estimates only need shapes and bit-widths). The folding is either a
    FoldingConfig or a uniform (pe, simd) request.
    """
    costs = costs or logic_costs()
    budget = budget or board_preset()
    shapes = network_shapes(net)
    if isinstance(folding_or_pe, FoldingConfig):
        folding = folding_or_pe
        pe_req = max(p for p, _ in folding.folds)
        simd_req = max(s for _, s in folding.folds)
    else:
        pe_req, simd_req = int(folding_or_pe), int(simd)
        folding = FoldingConfig.uniform(shapes, pe_req, simd_req, clock_mhz=clock_mhz)

    ii = initiation_interval(shapes, folding)
    img_per_s = throughput(shapes, folding, efficiency=costs.efficiency)
    report = ResourceReport(
        name=getattr(net, "name", "net"),
        a_bits=net.a_bits,
        w_bits=net.w_bits,
        pe=pe_req,
        simd=simd_req,
        clock_mhz=folding.clock_mhz,
        ii_cycles=ii,
        img_per_s=img_per_s,
        dram_bytes_per_s=dram_in_bandwidth(img_per_s),
        budget_name=budget.name,
    )
    total_bits = 0
    for i, (shape, (pe, simd)) in enumerate(zip(shapes, folding.folds)):
        w_bits_mem = weight_memory_bits(shape.out_features, shape.in_features, net.w_bits)
        t_bits = 0
        if shape.n_thresholds:
            t_bits = shape.out_features * shape.n_thresholds * shape.acc_bits
        luts, ffs = logic_estimate(pe, simd, net.w_bits, net.a_bits, shape.acc_bits, shape.n_thresholds, costs)
        report.layers.append(
            LayerReport(
                index=i,
                pe=pe,
                simd=simd,
                cycles=layer_cycles(shape.out_features, shape.in_features, pe, simd),
                weight_bits=w_bits_mem,
                threshold_bits=t_bits,
                luts=luts,
                ffs=ffs,
            )
        )
        report.luts += luts
        report.ffs += ffs
        report.weight_bits_total += w_bits_mem
        report.threshold_bits_total += t_bits
        total_bits += w_bits_mem + t_bits
    report.bram18 = bram18_count(total_bits)
    report.fits = (
        report.luts <= budget.luts
        and report.ffs <= budget.flip_flops
        and report.bram18 <= budget.bram18
        and total_bits <= budget.bram_bytes * 8
    )
    return report
