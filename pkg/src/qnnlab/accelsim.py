"""Tile accelerator model: loop-nest schedule, NFU datapath and buffer traffic.

The accelerator has ``Tn`` neurons of ``Ti`` synapses each. Every cycle it
consumes one ``Ti``-wide slice of the input vector and produces partial sums
for ``Tn`` outputs. For a layer with ``P`` output positions, ``C_out``
outputs per position and fan-in ``K`` the loop nest is::

    for p in positions:                    # P
        for to in range(ceil(C_out / Tn)):  # output tiles
            for ti in range(ceil(K / Ti)):  # input tiles, ascending
                NFU(weights[to, ti], inputs[p, ti])

The NFU has three stages: weight blocks (multiply, shift or negate), an
adder tree, and the nonlinearity (ReLU and pooling are folded in at no
cycle cost). For binary weights the first two stages merge, so the pipeline
fill is one cycle shorter. Accumulators are full precision; results are
quantized to the data format at each layer output, like the software path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .quantcore import BINARY, POW2, PrecisionConfig
from .quantnet import layers as K
from .quantnet.network import Network, bias_view, data_view, output_shift, weight_view
from .quantnet.specs import (AVGPOOL, CONV, INNERPRODUCT, MAXPOOL, RELU, LayerSpec,
                             NetworkSpec)

DEFAULT_CLOCK_HZ = 2.5e8
BUFFERS = ("nbin", "sb", "nbout")


def precision_bits(precision: PrecisionConfig) -> tuple[int, int]:
    """``(weight_bits, data_bits)`` as stored in the buffers."""
    return precision.weight_bits, precision.data_bits


def default_buffer_bytes(precision: PrecisionConfig) -> dict[str, int]:
    """Input/output buffers of 2 KB and a 32 KB weight buffer at 16 bits, scaled by width."""
    wb, db = precision_bits(precision)
    return {"nbin": 2048 * db // 16, "sb": 32768 * wb // 16, "nbout": 2048 * db // 16}


@dataclass(frozen=True)
class AccelConfig:
    tn: int = 16
    ti: int = 16
    clock_hz: float = DEFAULT_CLOCK_HZ
    nfu_stages: int = 3
    buffer_bytes: dict | None = None  # None: sized for the precision

    def __post_init__(self):
        if self.tn < 1 or self.ti < 1:
            raise ConfigError("Tn and Ti must be >= 1")
        if self.nfu_stages not in (2, 3):
            raise ConfigError("nfu_stages must be 2 or 3")
        if not self.clock_hz > 0:
            raise ConfigError("clock_hz must be > 0")

    @classmethod
    def for_precision(cls, precision: PrecisionConfig, tn: int = 16, ti: int = 16,
                      clock_hz: float = DEFAULT_CLOCK_HZ, buffer_bytes=None) -> "AccelConfig":
        return cls(tn, ti, clock_hz, 2 if precision.scheme == BINARY else 3, buffer_bytes)

    def buffers(self, precision: PrecisionConfig) -> dict[str, int]:
        return dict(self.buffer_bytes) if self.buffer_bytes else default_buffer_bytes(precision)

    def check(self, precision: PrecisionConfig) -> None:
        want = 2 if precision.scheme == BINARY else 3
        if self.nfu_stages != want:
            raise ConfigError(
                f"{precision.name} needs a {want}-stage NFU, config has {self.nfu_stages}")
        wb, db = precision_bits(precision)
        need = {"nbin": self.ti * db, "sb": self.tn * self.ti * wb, "nbout": self.tn * db}
        have = self.buffers(precision)
        for buf in BUFFERS:
            if buf not in have:
                raise ConfigError(f"buffer sizes must name {', '.join(BUFFERS)}")
            if have[buf] * 8 < need[buf]:
                raise ConfigError(f"{buf} holds {have[buf]} bytes, one tile needs "
                                  f"{need[buf] / 8:g}")


@dataclass(frozen=True)
class LayerSchedule:
    index: int
    kind: str
    positions: int
    out_tiles: int
    in_tiles: int
    mac_cycles: int
    pipeline_fill: int
    macs: int
    weight_bits: int
    input_bits: int
    output_bits: int

    @property
    def total_cycles(self) -> int:
        return self.mac_cycles + self.pipeline_fill

    @property
    def buffer_loads(self) -> dict[str, float]:
        return {"nbin": self.input_bits / 8, "sb": self.weight_bits / 8,
                "nbout": self.output_bits / 8}


@dataclass(frozen=True)
class TileSchedule:
    layers: tuple[LayerSchedule, ...]
    network: str = ""
    precision: str = ""
    tn: int = 16
    ti: int = 16
    clock_hz: float = DEFAULT_CLOCK_HZ
    nfu_stages: int = 3

    @property
    def mac_cycles(self) -> int:
        return sum(l.mac_cycles for l in self.layers)

    @property
    def pipeline_fill(self) -> int:
        return sum(l.pipeline_fill for l in self.layers)

    @property
    def total_cycles(self) -> int:
        return self.mac_cycles + self.pipeline_fill

    @property
    def buffer_loads(self) -> dict[str, float]:
        out = dict.fromkeys(BUFFERS, 0.0)
        for l in self.layers:
            for k, v in l.buffer_loads.items():
                out[k] += v
        return out

    def dump(self) -> str:
        """Line-oriented ``key=value`` report; see :func:`parse_schedule_dump`."""
        lines = ["# qnnlab schedule v1",
                 f"network={self.network} precision={self.precision} tn={self.tn} ti={self.ti} "
                 f"clock_hz={self.clock_hz:g} nfu_stages={self.nfu_stages}"]
        for l in self.layers:
            b = l.buffer_loads
            lines.append(
                f"layer={l.index} kind={l.kind} positions={l.positions} out_tiles={l.out_tiles} "
                f"in_tiles={l.in_tiles} macs={l.macs} mac_cycles={l.mac_cycles} "
                f"pipeline_fill={l.pipeline_fill} cycles={l.total_cycles} "
                f"nbin_bytes={b['nbin']:g} sb_bytes={b['sb']:g} nbout_bytes={b['nbout']:g}")
        b = self.buffer_loads
        lines.append(
            f"total mac_cycles={self.mac_cycles} pipeline_fill={self.pipeline_fill} "
            f"cycles={self.total_cycles} nbin_bytes={b['nbin']:g} sb_bytes={b['sb']:g} "
            f"nbout_bytes={b['nbout']:g}")
        return "\n".join(lines) + "\n"


def parse_schedule_dump(text: str) -> dict:
    """Header fields and totals of a schedule dump, values as strings."""
    out = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        words = line.split()
        if words[0].startswith("layer="):
            continue
        for w in words:
            if "=" in w:
                k, v = w.split("=", 1)
                out[k] = v
    missing = {"network", "cycles", "nfu_stages"} - out.keys()
    if missing:
        raise ConfigError(f"schedule dump lacks {', '.join(sorted(missing))}")
    return out


def layer_geometry(layer: LayerSpec, in_shape, out_shape) -> tuple[int, int, int]:
    """``(positions, C_out, fan_in)`` of a conv or innerproduct layer."""
    if layer.kind == CONV:
        kh, kw = layer.kernel
        return out_shape[0] * out_shape[1], out_shape[2], kh * kw * in_shape[-1]
    if layer.kind == INNERPRODUCT:
        return 1, layer.channels_out, int(np.prod(in_shape))
    raise ConfigError(f"cannot schedule a {layer.kind} layer on the NFU")


def schedule_layer(layer: LayerSpec, in_shape, out_shape, cfg: AccelConfig,
                   precision: PrecisionConfig | None = None, index: int = 0) -> LayerSchedule:
    """Closed-form schedule of one layer.

    Weight tiles are fetched once per (position, output tile, input tile)
    visit, input tiles once per output tile pass, outputs written once.
    """
    precision = precision or PrecisionConfig.float32()
    wb, db = precision_bits(precision)
    p, co, k = layer_geometry(layer, in_shape, out_shape)
    ot, it = math.ceil(co / cfg.tn), math.ceil(k / cfg.ti)
    return LayerSchedule(index, layer.kind, p, ot, it, p * ot * it, cfg.nfu_stages - 1,
                         p * co * k, p * co * k * wb, p * ot * k * db, p * co * db)


def schedule_network(spec: NetworkSpec, cfg: AccelConfig,
                     precision: PrecisionConfig | None = None) -> TileSchedule:
    precision = precision or PrecisionConfig.float32()
    shapes = spec.shapes()
    rows = tuple(schedule_layer(layer, spec.input_shape_of(i), shapes[i], cfg, precision, i)
                 for i, layer in enumerate(spec.layers) if layer.kind in (CONV, INNERPRODUCT))
    return TileSchedule(rows, spec.name, precision.name, cfg.tn, cfg.ti, cfg.clock_hz,
                        cfg.nfu_stages)


def buffer_traffic(schedule: TileSchedule, precision: PrecisionConfig | None = None,
                   net: Network | NetworkSpec | None = None) -> dict[str, float]:
    """Bytes moved through each on-chip buffer for one inference.

    ``precision``/``net`` are accepted for interface symmetry; the schedule
    already carries the widths it was built with.
    """
    return schedule.buffer_loads


def _pow2_parts(w):
    """Sign and exponent of each nonzero power-of-two weight."""
    m, e = np.frexp(w)
    return np.sign(m), e - 1


def nfu_apply(weights_tile, inputs_tile, scheme: str, width: int | None = None) -> np.ndarray:
    """Partial sums of one NFU pass.

    ``weights_tile`` is ``(ti, tn)``; ``inputs_tile`` is ``(..., ti)``.
    Stage 1 forms the products per scheme (multiply; shift with sign; or
    conditional negation), stage 2 reduces them with a pairwise adder tree
    over ``width`` lanes (defaults to ``ti``), lane ``2j`` with ``2j+1``.
    """
    w = np.asarray(weights_tile, dtype=np.float64)
    x = np.asarray(inputs_tile, dtype=np.float64)[..., :, None]
    ti = w.shape[0]
    if x.shape[-2] != ti:
        raise ConfigError(f"tile mismatch: {x.shape[-2]} inputs for {ti} synapses")
    if scheme == BINARY:
        prod = np.where(w > 0, x, -x)
    elif scheme == POW2:
        sign, exp = _pow2_parts(w)
        prod = np.where(w == 0, 0.0, sign * np.ldexp(x, exp))
    else:
        prod = x * w
    lanes = 1 << max((width or ti) - 1, 0).bit_length()
    if ti > lanes:
        raise ConfigError(f"{ti} inputs exceed {lanes} adder-tree lanes")
    if ti < lanes:
        pad = [(0, 0)] * prod.ndim
        pad[-2] = (0, lanes - ti)
        prod = np.pad(prod, pad)
    while prod.shape[-2] > 1:
        prod = prod[..., 0::2, :] + prod[..., 1::2, :]
    return prod[..., 0, :]


@dataclass
class LoadLog:
    """Bits actually moved while simulating, per buffer."""
    bits: dict = field(default_factory=lambda: dict.fromkeys(BUFFERS, 0))

    def add(self, buf: str, nbits: int) -> None:
        self.bits[buf] += nbits

    @property
    def bytes(self) -> dict[str, float]:
        return {k: v / 8 for k, v in self.bits.items()}


def _run_weighted(cols, wmat, bias, shift, scheme, cfg: AccelConfig, log: LoadLog, wb, db):
    """Accumulate ``cols @ wmat`` tile by tile; ``cols`` is ``(..., P, K)``."""
    k, co = wmat.shape
    positions = int(np.prod(cols.shape[:-1]))
    out_tiles = math.ceil(co / cfg.tn)
    acc = np.zeros(cols.shape[:-1] + (co,))
    for start in range(0, k, cfg.ti):
        stop = min(start + cfg.ti, k)
        # every output tile runs this input tile; tiles are independent columns
        acc = acc + nfu_apply(wmat[start:stop], cols[..., start:stop], scheme, cfg.ti)
        log.add("sb", positions * co * (stop - start) * wb)
        log.add("nbin", positions * out_tiles * (stop - start) * db)
    log.add("nbout", positions * co * db)
    out = acc + (np.zeros_like(bias) if shift else bias)
    return np.ldexp(out, shift) + bias if shift else out


def simulate_network(net: Network, cfg_p: PrecisionConfig, cfg_a: AccelConfig | None, x,
                     *, return_log: bool = False):
    """Run ``x`` (one NHWC image or a batch) through the accelerator model.

    Returns ``(logits, schedule)`` (plus the :class:`LoadLog` when
    ``return_log``). Logits match :func:`qnnlab.quantnet.network.forward`
    under ``cfg_p`` with ``width=cfg_a.ti`` bit for bit.
    """
    cfg_a = cfg_a or AccelConfig.for_precision(cfg_p)
    cfg_a.check(cfg_p)
    spec = net.spec
    h, single = K._batched(x)
    if tuple(h.shape[1:]) != tuple(spec.input_shape):
        raise ConfigError(f"{spec.name}: input shape {h.shape[1:]} != {spec.input_shape}")
    scheme = cfg_p.scheme
    wb, db = precision_bits(cfg_p)
    log = LoadLog()
    h = data_view(net, "in", h, cfg_p)
    for i, layer in enumerate(spec.layers):
        if layer.kind in (CONV, INNERPRODUCT):
            w = weight_view(net, i, cfg_p)
            b = bias_view(net, i, cfg_p)
            shift = output_shift(net, i, cfg_p)
            if layer.kind == CONV:
                kh, kw, c, co = w.shape
                cols = K.im2col(h, kh, kw, layer.stride, layer.pad)
                h = _run_weighted(cols, w.reshape(kh * kw * c, co), b, shift, scheme, cfg_a,
                                  log, wb, db)
            else:
                h = _run_weighted(h.reshape(h.shape[0], -1), w, b, shift, scheme, cfg_a,
                                  log, wb, db)
        elif layer.kind == RELU:
            h = np.maximum(h, 0.0)
        elif layer.kind == MAXPOOL:
            h, _ = K.maxpool_forward(h, layer.kernel, layer.stride, layer.pad)
        elif layer.kind == AVGPOOL:
            h = K.avgpool_forward(h, layer.kernel, layer.stride, layer.pad)
        h = data_view(net, f"a{i}", h, cfg_p)
    sched = schedule_network(spec, cfg_a, cfg_p)
    n = h.shape[0]
    log.bits = {k: v // n for k, v in log.bits.items()}  # per image
    logits = h[0] if single else h
    return (logits, sched, log) if return_log else (logits, sched)
