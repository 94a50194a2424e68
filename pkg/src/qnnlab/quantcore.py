"""Numeric formats and the four quantization schemes.

Tensors are plain ``numpy.float64`` arrays. Every quantizer is a pure
element-wise function that preserves shape; rounding is half away from
zero and overflow saturates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FIXED_WIDTHS = (4, 8, 16, 32)
RADIX_EPS = 2.0 ** -24

FLOAT = "float"
FIXED = "fixed"
POW2 = "pow2"
BINARY = "binary"
SCHEMES = (FLOAT, FIXED, POW2, BINARY)


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed two's-complement Q format: ``total_bits`` wide, ``frac_bits`` after the point."""

    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.total_bits not in FIXED_WIDTHS:
            raise ConfigError(f"fixed-point width must be one of {FIXED_WIDTHS}, got {self.total_bits}")
        if not 0 <= self.frac_bits <= self.total_bits - 1:
            raise ConfigError(
                f"frac_bits must lie in [0, {self.total_bits - 1}], got {self.frac_bits}")

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def step(self) -> float:
        return math.ldexp(1.0, -self.frac_bits)

    @property
    def bounds(self) -> tuple[float, float]:
        return (math.ldexp(self.min_code, -self.frac_bits),
                math.ldexp(self.max_code, -self.frac_bits))

    def codes(self, x) -> np.ndarray:
        """Integer codes (as float64) of ``x`` after rounding and saturation."""
        y = np.ldexp(as_tensor(x), self.frac_bits)
        a = np.abs(y)
        fl = np.floor(a)
        # a - fl is exact, so the half-way test never suffers double rounding
        r = np.where(a - fl >= 0.5, fl + 1.0, fl)
        return np.clip(np.copysign(r, y), self.min_code, self.max_code) + 0.0

    def quantize(self, x) -> np.ndarray:
        return quantize_fixed(x, self)


@dataclass(frozen=True)
class Pow2Format:
    """Signed powers of two ``±2**e`` for ``min_exp <= e <= max_exp``, plus an optional zero.

    The default packs sign + zero flag + 4-bit exponent into 6 bits.
    """

    total_bits: int = 6
    min_exp: int = -12
    max_exp: int = 3
    has_zero: bool = True

    def __post_init__(self):
        if self.min_exp > self.max_exp:
            raise ConfigError("Pow2Format: min_exp must not exceed max_exp")
        if len(self.values()) > 2 ** self.total_bits:
            raise ConfigError(
                f"Pow2Format: {len(self.values())} values do not fit in {self.total_bits} bits")

    def values(self) -> list[float]:
        mags = [math.ldexp(1.0, e) for e in range(self.min_exp, self.max_exp + 1)]
        vals = [-m for m in reversed(mags)] + mags
        if self.has_zero:
            vals.insert(len(mags), 0.0)
        return vals

    @property
    def bounds(self) -> tuple[float, float]:
        top = math.ldexp(1.0, self.max_exp)
        return (-top, top)

    def quantize(self, x) -> np.ndarray:
        return quantize_pow2(x, self)


@dataclass(frozen=True)
class BinaryFormat:
    total_bits: int = field(default=1, init=False)

    @property
    def bounds(self) -> tuple[float, float]:
        return (-1.0, 1.0)

    def quantize(self, x) -> np.ndarray:
        return quantize_binary(x)


BINARY_FORMAT = BinaryFormat()


def quantize_fixed(x, fmt: FixedPointFormat) -> np.ndarray:
    return np.ldexp(fmt.codes(x), -fmt.frac_bits)


def quantize_pow2(x, fmt: Pow2Format) -> np.ndarray:
    x = as_tensor(x)
    a = np.abs(x)
    m, e = np.frexp(a)  # a = m * 2**e with m in [0.5, 1)
    # floor(log2 a) = e - 1; the upper neighbour wins only past the 1.5 midpoint
    exp = (e - 1) + (m > 0.75)
    exp = np.clip(np.where(a == 0, fmt.min_exp, exp), fmt.min_exp, fmt.max_exp)
    mag = np.ldexp(1.0, exp)
    if fmt.has_zero:
        mag = np.where(a < math.ldexp(1.0, fmt.min_exp - 1), 0.0, mag)
    return np.where(x < 0, -mag, mag)


def quantize_binary(x) -> np.ndarray:
    x = as_tensor(x)
    return np.where(x >= 0, 1.0, -1.0)


def choose_radix(x, total_bits: int) -> FixedPointFormat:
    """Largest fractional width at which ``max|x|`` still fits without saturating."""
    x = as_tensor(x)
    if total_bits not in FIXED_WIDTHS:
        raise ConfigError(f"fixed-point width must be one of {FIXED_WIDTHS}, got {total_bits}")
    if x.size == 0:
        raise ConfigError("choose_radix needs a non-empty tensor")
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        return FixedPointFormat(total_bits, total_bits - 1)
    frac = total_bits - 1 - math.ceil(math.log2(peak + RADIX_EPS))
    frac = min(max(frac, 0), total_bits - 1)
    hi, lo = float(np.max(x)), float(np.min(x))
    while frac > 0 and _saturates(hi, lo, FixedPointFormat(total_bits, frac)):
        frac -= 1
    return FixedPointFormat(total_bits, frac)


def _saturates(hi: float, lo: float, fmt: FixedPointFormat) -> bool:
    return _rounded_code(hi, fmt) > fmt.max_code or _rounded_code(lo, fmt) < fmt.min_code


def _rounded_code(v: float, fmt: FixedPointFormat) -> float:
    y = math.ldexp(v, fmt.frac_bits)
    a = abs(y)
    fl = math.floor(a)
    r = fl + 1.0 if a - fl >= 0.5 else fl
    return math.copysign(r, y)


def ste_backward(grad_out, x, fmt) -> np.ndarray:
    """Clipped straight-through estimator.

    ``fmt`` is the format ``x`` was quantized with (a format object, a
    :class:`PrecisionConfig` meaning its weight format, or None for no
    quantization). Gradient passes where ``x`` is strictly inside the
    representable range and is zero elsewhere.
    """
    grad_out = as_tensor(grad_out)
    x = as_tensor(x)
    if grad_out.shape != x.shape:
        raise ConfigError(f"ste_backward: shapes differ {grad_out.shape} vs {x.shape}")
    if isinstance(fmt, PrecisionConfig):
        fmt = fmt.weight_format
    if fmt is None:
        return grad_out.copy()
    lo, hi = fmt.bounds
    return np.where((x > lo) & (x < hi), grad_out, 0.0)


@dataclass(frozen=True)
class PrecisionConfig:
    """A (weight, data) precision pair.

    ``weight_bits``/``data_bits`` give widths; fixed-point radix points are
    chosen per tensor later and live in the network's radix map.
    """

    scheme: str
    weight_bits: int
    data_bits: int
    pow2: Pow2Format | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == FLOAT:
            if (self.weight_bits, self.data_bits) != (32, 32):
                raise ConfigError("float scheme is (32,32) only")
            return
        if self.data_bits not in FIXED_WIDTHS:
            raise ConfigError(f"data width must be one of {FIXED_WIDTHS}, got {self.data_bits}")
        if self.scheme == FIXED and self.weight_bits not in FIXED_WIDTHS:
            raise ConfigError(f"weight width must be one of {FIXED_WIDTHS}, got {self.weight_bits}")
        if self.scheme == BINARY and self.weight_bits != 1:
            raise ConfigError("binary scheme uses 1-bit weights")
        if self.scheme == POW2:
            fmt = self.pow2 or Pow2Format(total_bits=self.weight_bits)
            if fmt.total_bits != self.weight_bits:
                raise ConfigError("pow2 format width disagrees with weight_bits")
            object.__setattr__(self, "pow2", fmt)

    @classmethod
    def float32(cls):
        return cls(FLOAT, 32, 32)

    @classmethod
    def fixed(cls, weight_bits: int, data_bits: int | None = None):
        return cls(FIXED, weight_bits, weight_bits if data_bits is None else data_bits)

    @classmethod
    def power_of_two(cls, data_bits: int = 16, fmt: Pow2Format | None = None):
        fmt = fmt or Pow2Format()
        return cls(POW2, fmt.total_bits, data_bits, fmt)

    @classmethod
    def binary(cls, data_bits: int = 16):
        return cls(BINARY, 1, data_bits)

    @classmethod
    def parse(cls, text: str) -> "PrecisionConfig":
        """Parse ``"w,in,scheme"``, e.g. ``"16,16,fixed"`` or ``"1,16,binary"``."""
        parts = [p.strip().lower() for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"precision label must look like 'w,in,scheme', got {text!r}")
        try:
            w, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"precision widths must be integers in {text!r}") from None
        scheme = {"float": FLOAT, "float32": FLOAT, "fixed": FIXED, "pow2": POW2,
                  "binary": BINARY}.get(parts[2])
        if scheme is None:
            raise ConfigError(f"unknown scheme {parts[2]!r} in {text!r}")
        if scheme == POW2:
            return cls(POW2, w, d, Pow2Format(total_bits=w))
        return cls(scheme, w, d)

    @property
    def label(self) -> tuple[int, int]:
        return (self.weight_bits, self.data_bits)

    @property
    def tag(self) -> str:
        """Machine-friendly form accepted by :meth:`parse`."""
        return f"{self.weight_bits},{self.data_bits},{self.scheme}"

    @property
    def name(self) -> str:
        prefix = {FLOAT: "Float", FIXED: "Fixed", POW2: "Pow2", BINARY: "Binary"}[self.scheme]
        return f"{prefix}({self.weight_bits},{self.data_bits})"

    @property
    def slug(self) -> str:
        return f"{self.scheme}-{self.weight_bits}-{self.data_bits}"

    @property
    def quantizes(self) -> bool:
        return self.scheme != FLOAT

    @property
    def weight_format(self):
        """Weight format; fixed-point widths without a radix return None here (see radix maps)."""
        if self.scheme == POW2:
            return self.pow2
        if self.scheme == BINARY:
            return BINARY_FORMAT
        return None

    def to_dict(self) -> dict:
        d = {"scheme": self.scheme, "weight_bits": self.weight_bits, "data_bits": self.data_bits}
        if self.pow2 is not None:
            d["pow2"] = {"total_bits": self.pow2.total_bits, "min_exp": self.pow2.min_exp,
                         "max_exp": self.pow2.max_exp, "has_zero": self.pow2.has_zero}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PrecisionConfig":
        p = d.get("pow2")
        return cls(d["scheme"], int(d["weight_bits"]), int(d["data_bits"]),
                   Pow2Format(**p) if p else None)


REFERENCE_PRECISIONS = (
    PrecisionConfig.float32(),
    PrecisionConfig.fixed(32, 32),
    PrecisionConfig.fixed(16, 16),
    PrecisionConfig.fixed(8, 8),
    PrecisionConfig.fixed(4, 4),
    PrecisionConfig.power_of_two(16),
    PrecisionConfig.binary(16),
)
