"""Instantiated networks and the layer-boundary quantized forward pass."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..quantcore import (BINARY, FIXED, FLOAT, POW2, FixedPointFormat, PrecisionConfig,
                         choose_radix, quantize_binary, quantize_fixed, quantize_pow2)
from . import layers as K
from .specs import (AVGPOOL, CONV, INNERPRODUCT, MAXPOOL, RELU, SOFTMAXLOSS, NetworkSpec)


@dataclass
class Network:
    """Full-precision parameters for a spec plus the per-tensor radix choices.

    ``params[i]`` holds ``{"W": ..., "b": ...}`` for every conv/innerproduct
    layer ``i``. Radix keys: ``"in"`` (network input), ``"a{i}"`` (output of
    layer i), ``"w{i}"``/``"b{i}"`` (weights/bias of layer i).
    ``shifts[i]`` is the power-of-two output scale of binary layer ``i``.
    """

    spec: NetworkSpec
    params: dict[int, dict[str, np.ndarray]]
    radix_map: dict[str, FixedPointFormat] = field(default_factory=dict)
    seed: int | None = None
    shifts: dict[int, int] = field(default_factory=dict)

    def copy(self) -> "Network":
        return Network(self.spec, copy.deepcopy(self.params), dict(self.radix_map), self.seed,
                       dict(self.shifts))

    def param_count(self) -> int:
        return sum(p["W"].size + p["b"].size for p in self.params.values())

    def tensors(self):
        """``(name, array)`` for every parameter in a fixed order."""
        for i in sorted(self.params):
            yield f"W{i}", self.params[i]["W"]
            yield f"b{i}", self.params[i]["b"]


def param_shapes(spec: NetworkSpec) -> dict[int, tuple[tuple[int, ...], tuple[int, ...]]]:
    shapes = spec.shapes()
    out = {}
    for i, layer in enumerate(spec.layers):
        in_shape = spec.input_shape if i == 0 else shapes[i - 1]
        if layer.kind == CONV:
            kh, kw = layer.kernel
            out[i] = ((kh, kw, in_shape[-1], layer.channels_out), (layer.channels_out,))
        elif layer.kind == INNERPRODUCT:
            out[i] = ((int(np.prod(in_shape)), layer.channels_out), (layer.channels_out,))
    return out


def param_count(spec: NetworkSpec) -> int:
    return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in param_shapes(spec).values())


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    """He-uniform weights, zero biases; deterministic in ``(spec, seed)``."""
    if spec.output_shape != (10,):
        raise ConfigError(f"{spec.name}: network must end in a 10-way output, got {spec.output_shape}")
    rng = np.random.default_rng(seed)
    params = {}
    for i, (wshape, bshape) in param_shapes(spec).items():
        fan_in = int(np.prod(wshape[:-1]))
        limit = math.sqrt(6.0 / fan_in)
        params[i] = {"W": rng.uniform(-limit, limit, size=wshape), "b": np.zeros(bshape)}
    return Network(spec, params, {}, seed)


def input_key(i: int) -> str:
    return "in" if i == 0 else f"a{i - 1}"


def _radix(net: Network, key: str) -> FixedPointFormat:
    try:
        return net.radix_map[key]
    except KeyError:
        raise ConfigError(
            f"{net.spec.name}: no radix for {key!r}; calibrate the network (warm_start) first") from None


def weight_view(net: Network, i: int, precision: PrecisionConfig | None) -> np.ndarray:
    """Weights of layer ``i`` as the forward pass sees them."""
    w = net.params[i]["W"]
    if precision is None or precision.scheme == FLOAT:
        return w
    if precision.scheme == FIXED:
        return quantize_fixed(w, _radix(net, f"w{i}"))
    if precision.scheme == POW2:
        return quantize_pow2(w, precision.pow2)
    return quantize_binary(w)


def weight_format(net: Network, i: int, precision: PrecisionConfig | None):
    if precision is None or precision.scheme == FLOAT:
        return None
    if precision.scheme == FIXED:
        return _radix(net, f"w{i}")
    return precision.weight_format


def bias_view(net: Network, i: int, precision: PrecisionConfig | None) -> np.ndarray:
    """Biases are held at data width, not weight width."""
    b = net.params[i]["b"]
    if precision is None or precision.scheme == FLOAT:
        return b
    return quantize_fixed(b, _radix(net, f"b{i}"))


def output_shift(net: Network, i: int, precision: PrecisionConfig | None) -> int:
    """Binary layers compute ``2**shift * sum(+-x) + b``; every other layer uses shift 0."""
    if precision is None or precision.scheme != BINARY:
        return 0
    try:
        return net.shifts[i]
    except KeyError:
        raise ConfigError(
            f"{net.spec.name}: no binary scale for layer {i}; calibrate (warm_start) first") from None


def data_view(net: Network, key: str, x, precision: PrecisionConfig | None) -> np.ndarray:
    if precision is None or precision.scheme == FLOAT:
        return x
    return quantize_fixed(x, _radix(net, key))


def _weight_unit_exp(net: Network, i: int, precision: PrecisionConfig) -> int:
    """Exponent ``f`` such that every quantized weight is a multiple of ``2**-f``."""
    if precision.scheme == FIXED:
        return net.radix_map[f"w{i}"].frac_bits
    if precision.scheme == POW2:
        return -precision.pow2.min_exp
    return 0


def blas_is_exact(net: Network, i: int, precision: PrecisionConfig | None,
                  h: np.ndarray, w: np.ndarray, b: np.ndarray) -> bool:
    """True when every partial sum of layer ``i`` is exactly representable in double.

    Then any summation order (BLAS included) gives the adder-tree result bit for bit.
    """
    if precision is None or precision.scheme == FLOAT:
        return False
    fa = net.radix_map[input_key(i)].frac_bits
    fb = net.radix_map[f"b{i}"].frac_bits
    shift = output_shift(net, i, precision)
    fan_in = w.size // w.shape[-1]
    acc = float(np.max(np.abs(h), initial=0.0)) * float(np.max(np.abs(w), initial=0.0)) * fan_in
    acc_unit = fa + _weight_unit_exp(net, i, precision)
    if math.ldexp(acc, acc_unit) >= 2.0 ** 52:
        return False
    unit = max(acc_unit - shift, fb)
    bound = math.ldexp(acc, shift) + float(np.max(np.abs(b), initial=0.0))
    return math.ldexp(bound, unit) < 2.0 ** 52


def forward(net: Network, x, precision: PrecisionConfig | None = None, *,
            accumulate: str = "auto", width: int = K.ADDER_WIDTH,
            calibrate: bool = False, return_all: bool = False):
    """Layer-by-layer forward pass with quantization at every layer boundary.

    ``precision=None`` (or the float scheme) applies no quantization.
    Conv and inner-product sums accumulate in double; ``accumulate`` picks
    the order: ``"tree"`` (adder-tree order, see :func:`layers.tree_matmul`),
    ``"blas"``, or ``"auto"`` which uses BLAS only where it is provably
    exact and the tree otherwise. With ``calibrate=True`` missing radix
    entries are chosen from this batch as it flows through.
    """
    h, single = K._batched(x)
    spec = net.spec
    if tuple(h.shape[1:]) != tuple(spec.input_shape):
        raise ConfigError(f"{spec.name}: input shape {h.shape[1:]} != {spec.input_shape}")
    quantized = precision is not None and precision.scheme != FLOAT
    if calibrate and quantized:
        _calibrate_params(net, precision)
        _calibrate_data(net, "in", h, precision)
    h = data_view(net, "in", h, precision)
    outputs = []
    for i, layer in enumerate(spec.layers):
        if layer.kind in (CONV, INNERPRODUCT):
            w = weight_view(net, i, precision)
            b = bias_view(net, i, precision)
            mode = accumulate
            if mode == "auto":
                mode = "blas" if blas_is_exact(net, i, precision, h, w, b) else "tree"
            shift = output_shift(net, i, precision)
            bias = np.zeros_like(b) if shift else b
            if layer.kind == CONV:
                h = K.conv2d_forward(h, w, bias, layer.stride, layer.pad, name=f"layer {i}",
                                     accumulate=mode, width=width)
            else:
                h = K.fc_forward(h, w, bias, name=f"layer {i}", batched=True,
                                 accumulate=mode, width=width)
            if shift:
                h = np.ldexp(h, shift) + b
        elif layer.kind == RELU:
            h = K.relu_forward(h)
        elif layer.kind == MAXPOOL:
            h, _ = K.maxpool_forward(h, layer.kernel, layer.stride, layer.pad, name=f"layer {i}")
        elif layer.kind == AVGPOOL:
            h = K.avgpool_forward(h, layer.kernel, layer.stride, layer.pad, name=f"layer {i}")
        elif layer.kind == SOFTMAXLOSS:
            pass
        if calibrate and quantized:
            _calibrate_data(net, f"a{i}", h, precision)
        h = data_view(net, f"a{i}", h, precision)
        if return_all:
            outputs.append(h)
    if return_all:
        return outputs
    return h[0] if single else h


def binary_shift(w: np.ndarray) -> int:
    """Power of two nearest (in log scale) to the mean weight magnitude."""
    m = float(np.mean(np.abs(w)))
    return 0 if m == 0.0 else int(round(math.log2(m)))


def _calibrate_params(net: Network, precision: PrecisionConfig) -> None:
    for i, p in net.params.items():
        if precision.scheme == BINARY:
            net.shifts.setdefault(i, binary_shift(p["W"]))
        if precision.scheme == FIXED:
            net.radix_map.setdefault(f"w{i}", choose_radix(p["W"], precision.weight_bits))
        net.radix_map.setdefault(f"b{i}", choose_radix(p["b"], precision.data_bits))


def _calibrate_data(net: Network, key: str, h: np.ndarray, precision: PrecisionConfig) -> None:
    if key not in net.radix_map:
        net.radix_map[key] = choose_radix(h, precision.data_bits)
