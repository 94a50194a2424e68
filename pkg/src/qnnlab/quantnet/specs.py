"""Declarative network descriptions and the line-oriented ``.net`` format.

A ``.net`` file holds one layer per line in the same notation as the
benchmark tables::

    name lenet
    input 28x28x1
    conv 5x5x20 pad=0 stride=1
    relu
    maxpool 2x2 stride=2
    innerproduct 10

``#`` starts a comment. Allowed keys are ``pad=`` and ``stride=`` on conv
and pool lines; anything else is a syntax error.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from ..errors import ConfigError

CONV = "conv"
MAXPOOL = "maxpool"
AVGPOOL = "avgpool"
INNERPRODUCT = "innerproduct"
RELU = "relu"
SOFTMAXLOSS = "softmaxloss"
KINDS = (CONV, MAXPOOL, AVGPOOL, INNERPRODUCT, RELU, SOFTMAXLOSS)
POOLS = (MAXPOOL, AVGPOOL)
WEIGHTED = (CONV, INNERPRODUCT)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: tuple[int, int] | None = None
    channels_out: int | None = None
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind in (CONV, *POOLS):
            if self.kernel is None or min(self.kernel) < 1:
                raise ConfigError(f"{self.kind}: kernel dims must be >= 1, got {self.kernel}")
        if self.kind in WEIGHTED and (self.channels_out is None or self.channels_out < 1):
            raise ConfigError(f"{self.kind}: channels_out must be >= 1")
        if self.stride < 1 or self.pad < 0:
            raise ConfigError(f"{self.kind}: need stride >= 1 and pad >= 0")

    def table_row(self) -> str | None:
        """The layer as printed in the benchmark tables (None for layers the tables omit)."""
        if self.kind == CONV:
            return f"conv {self.kernel[0]}x{self.kernel[1]}x{self.channels_out}"
        if self.kind in POOLS:
            return f"{self.kind} {self.kernel[0]}x{self.kernel[1]}"
        if self.kind == INNERPRODUCT:
            return f"innerproduct {self.channels_out}"
        return None

    def to_line(self) -> str:
        if self.kind == CONV:
            return f"{self.table_row()} pad={self.pad} stride={self.stride}"
        if self.kind in POOLS:
            return f"{self.table_row()} pad={self.pad} stride={self.stride}"
        if self.kind == INNERPRODUCT:
            return self.table_row()
        return self.kind


def conv(k, co, pad=0, stride=1):
    return LayerSpec(CONV, (k, k), co, stride, pad)


def maxpool(k, stride, pad=0):
    return LayerSpec(MAXPOOL, (k, k), None, stride, pad)


def avgpool(k, stride, pad=0):
    return LayerSpec(AVGPOOL, (k, k), None, stride, pad)


def ip(n):
    return LayerSpec(INNERPRODUCT, None, n)


def relu():
    return LayerSpec(RELU)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape of every layer; raises ConfigError at the first inconsistent layer."""
        return infer_shapes(self)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes()[-1] if self.layers else self.input_shape

    def input_shape_of(self, i: int) -> tuple[int, ...]:
        return self.input_shape if i == 0 else self.shapes()[i - 1]

    def table_rows(self) -> list[str]:
        h, w, c = self.input_shape
        return [f"{h}x{w}x{c}"] + [r for r in (l.table_row() for l in self.layers) if r]

    def to_text(self) -> str:
        h, w, c = self.input_shape
        lines = [f"name {self.name}", f"input {h}x{w}x{c}"]
        lines += [layer.to_line() for layer in self.layers]
        return "\n".join(lines) + "\n"

    def weighted_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind in WEIGHTED]


def _describe(i: int, layer: LayerSpec) -> str:
    return f"layer {i} ({layer.to_line()})"


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    shape: tuple[int, ...] = tuple(spec.input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ConfigError(f"{spec.name}: input shape must be (h, w, c) positive, got {shape}")
    out = []
    for i, layer in enumerate(spec.layers):
        if layer.kind in (CONV, *POOLS):
            if len(shape) != 3:
                raise ConfigError(f"{spec.name}: {_describe(i, layer)} needs a spatial input, got {shape}")
            h, w, c = shape
            kh, kw = layer.kernel
            ho = (h + 2 * layer.pad - kh) // layer.stride + 1
            wo = (w + 2 * layer.pad - kw) // layer.stride + 1
            if h + 2 * layer.pad < kh or w + 2 * layer.pad < kw or ho < 1 or wo < 1:
                raise ConfigError(
                    f"{spec.name}: {_describe(i, layer)} kernel larger than input {shape}")
            if layer.kind in POOLS and layer.pad >= max(kh, kw):
                raise ConfigError(f"{spec.name}: {_describe(i, layer)} pad must be < kernel")
            shape = (ho, wo, layer.channels_out if layer.kind == CONV else c)
        elif layer.kind == INNERPRODUCT:
            shape = (layer.channels_out,)
        elif layer.kind == SOFTMAXLOSS and i != len(spec.layers) - 1:
            raise ConfigError(f"{spec.name}: {_describe(i, layer)} must be the last layer")
        out.append(shape)
    return out


# -- built-in benchmark networks ---------------------------------------------

def _lenet():
    return NetworkSpec("lenet", (28, 28, 1), (
        conv(5, 20), relu(), maxpool(2, 2),
        conv(5, 50), relu(), maxpool(2, 2),
        ip(500), relu(), ip(10)))


def _convnet():
    return NetworkSpec("convnet", (32, 32, 3), (
        conv(5, 16), relu(), maxpool(2, 2),
        conv(7, 512), relu(), maxpool(2, 2),
        ip(20), relu(), ip(10)))


def _alex():
    return NetworkSpec("alex", (32, 32, 3), (
        conv(5, 32, pad=2), relu(), maxpool(3, 2, pad=1),
        conv(5, 32, pad=2), relu(), avgpool(3, 2, pad=1),
        conv(5, 64, pad=2), relu(), avgpool(3, 2, pad=1),
        ip(10)))


def _alex_plus():
    return NetworkSpec("alex+", (32, 32, 3), (
        conv(5, 64, pad=2), relu(), maxpool(3, 2, pad=1),
        conv(5, 64, pad=2), relu(), avgpool(3, 2, pad=1),
        conv(5, 128, pad=2), relu(), avgpool(3, 2, pad=1),
        ip(10)))


def _alex_plusplus():
    return NetworkSpec("alex++", (32, 32, 3), (
        conv(3, 64, pad=1), relu(), maxpool(2, 2),
        conv(3, 128, pad=1), relu(), maxpool(2, 2),
        conv(3, 256, pad=1), relu(), maxpool(2, 2),
        ip(512), relu(), ip(10)))


BUILTINS = {
    "lenet": _lenet(),
    "convnet": _convnet(),
    "alex": _alex(),
    "alex+": _alex_plus(),
    "alex++": _alex_plusplus(),
}

NET_FILES = {"lenet": "lenet.net", "convnet": "convnet.net", "alex": "alex.net",
             "alex+": "alex_plus.net", "alex++": "alex_plusplus.net"}

DATASET_OF = {"lenet": "mnist", "convnet": "svhn", "alex": "cifar10", "alex+": "cifar10",
              "alex++": "cifar10"}

# Columns of the two architecture tables, row by row.
ARCH_COLUMNS = {
    "lenet": ["28x28x1", "conv 5x5x20", "maxpool 2x2", "conv 5x5x50", "maxpool 2x2",
              "innerproduct 500", "innerproduct 10"],
    "convnet": ["32x32x3", "conv 5x5x16", "maxpool 2x2", "conv 7x7x512", "maxpool 2x2",
                "innerproduct 20", "innerproduct 10"],
    "alex": ["32x32x3", "conv 5x5x32", "maxpool 3x3", "conv 5x5x32", "avgpool 3x3",
             "conv 5x5x64", "avgpool 3x3", "innerproduct 10"],
    "alex+": ["32x32x3", "conv 5x5x64", "maxpool 3x3", "conv 5x5x64", "avgpool 3x3",
              "conv 5x5x128", "avgpool 3x3", "innerproduct 10"],
    "alex++": ["32x32x3", "conv 3x3x64", "maxpool 2x2", "conv 3x3x128", "maxpool 2x2",
               "conv 3x3x256", "maxpool 2x2", "innerproduct 512", "innerproduct 10"],
}


def get_network_spec(name_or_path: str | Path) -> NetworkSpec:
    """Built-in spec by name, or a parsed ``.net`` file."""
    key = str(name_or_path).lower()
    if key in BUILTINS:
        return BUILTINS[key]
    path = Path(name_or_path)
    if path.exists():
        return parse_network_config(path)
    raise ConfigError(f"unknown network {name_or_path!r}; built-ins are {sorted(BUILTINS)}")


def shipped_net_file(name: str) -> Path:
    return Path(str(resources.files("qnnlab") / "nets" / NET_FILES[name]))


# -- parsing -------------------------------------------------------------------

_DIMS3 = re.compile(r"^(\d+)x(\d+)x(\d+)$")
_DIMS2 = re.compile(r"^(\d+)x(\d+)$")


def parse_network_config(path: str | Path, name: str | None = None) -> NetworkSpec:
    path = Path(path)
    return parse_network_text(path.read_text(), name or path.stem, source=str(path))


def parse_network_text(text: str, default_name: str = "net", source: str = "<text>") -> NetworkSpec:
    name = default_name
    input_shape = None
    layers: list[LayerSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head, args = tokens[0].lower(), tokens[1:]

        def fail(msg):
            raise ConfigError(f"{source}:{lineno}: {msg}: {raw.strip()!r}")

        if head == "name":
            if len(args) != 1:
                fail("expected 'name <identifier>'")
            name = args[0]
            continue
        if head == "input":
            if input_shape is not None or layers:
                fail("'input' must appear once, before any layer")
            m = _DIMS3.match(args[0]) if len(args) == 1 else None
            if not m or min(int(g) for g in m.groups()) < 1:
                fail("expected 'input HxWxC' with positive dims")
            input_shape = tuple(int(g) for g in m.groups())
            continue
        if input_shape is None:
            fail("layer before 'input' line")
        try:
            layers.append(_parse_layer(head, args, fail))
        except ConfigError as e:
            if str(e).startswith(source):
                raise
            fail(str(e))
    if input_shape is None:
        raise ConfigError(f"{source}: missing 'input' line")
    return NetworkSpec(name, input_shape, tuple(layers))


def _parse_layer(head, args, fail) -> LayerSpec:
    if head not in KINDS:
        fail(f"unknown layer kind {head!r}")
    opts = {}
    positional = []
    for a in args:
        if "=" in a:
            k, v = a.split("=", 1)
            if k not in ("pad", "stride") or head not in (CONV, *POOLS):
                fail(f"unknown key {k!r}")
            if not v.isdigit():
                fail(f"{k} must be a non-negative integer")
            opts[k] = int(v)
        else:
            positional.append(a)
    if head == CONV:
        m = _DIMS3.match(positional[0]) if len(positional) == 1 else None
        if not m:
            fail("expected 'conv KHxKWxCOUT'")
        kh, kw, co = (int(g) for g in m.groups())
        if min(kh, kw, co) < 1:
            fail("conv dims must be >= 1")
        return LayerSpec(CONV, (kh, kw), co, opts.get("stride", 1), opts.get("pad", 0))
    if head in POOLS:
        m = _DIMS2.match(positional[0]) if len(positional) == 1 else None
        if not m:
            fail(f"expected '{head} KHxKW'")
        kh, kw = int(m.group(1)), int(m.group(2))
        if min(kh, kw) < 1:
            fail("pool dims must be >= 1")
        return LayerSpec(head, (kh, kw), None, opts.get("stride", 1), opts.get("pad", 0))
    if head == INNERPRODUCT:
        if len(positional) != 1 or not positional[0].isdigit() or int(positional[0]) < 1:
            fail("expected 'innerproduct N' with N >= 1")
        return LayerSpec(INNERPRODUCT, None, int(positional[0]))
    if positional:
        fail(f"{head} takes no arguments")
    return LayerSpec(head)


# -- network expansion ---------------------------------------------------------

PLUS = "plus"
PLUSPLUS = "plusplus"


def expand_network(spec: NetworkSpec, mode: str) -> NetworkSpec:
    """Widen a network: ``plus`` doubles every conv; ``plusplus`` doubles on each spatial halving.

    ``plusplus`` also switches to 3x3 convolutions (pad 1), 2x2/2 max pooling
    and adds a hidden inner-product layer twice the width of the last conv.
    """
    if mode not in (PLUS, PLUSPLUS):
        raise ConfigError(f"expand mode must be 'plus' or 'plusplus', got {mode!r}")
    if spec.name.endswith("+"):
        raise ConfigError(f"{spec.name} is already expanded")
    convs = [l for l in spec.layers if l.kind == CONV]
    if not convs:
        raise ConfigError(f"{spec.name}: expansion needs at least one conv layer")
    if mode == PLUS:
        layers = tuple(replace(l, channels_out=2 * l.channels_out) if l.kind == CONV else l
                       for l in spec.layers)
        return NetworkSpec(spec.name + "+", spec.input_shape, layers)

    width = 2 * convs[0].channels_out
    layers = []
    seen_pool = False
    for l in spec.layers:
        if l.kind == CONV:
            if seen_pool and layers and any(x.kind == CONV for x in layers):
                width *= 2
            seen_pool = False
            layers.append(conv(3, width, pad=1))
        elif l.kind in POOLS:
            seen_pool = True
            layers.append(maxpool(2, 2))
        else:
            layers.append(l)
    last_ip = max(i for i, l in enumerate(layers) if l.kind == INNERPRODUCT)
    layers[last_ip:last_ip] = [ip(2 * width), relu()]
    return NetworkSpec(spec.name + "++", spec.input_shape, tuple(layers))
