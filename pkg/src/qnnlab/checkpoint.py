"""Versioned binary checkpoints for QAT states.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"QNNLCKPT"
    8       2     format version (u16, currently 1)
    10      2     reserved, zero
    12      4     header length H in bytes (u32)
    16      H     UTF-8 JSON header
    16+H    P     zero padding so the data block starts on an 8-byte boundary
    ...     D     tensor data: float64 little-endian, C order, concatenated
    end-4   4     CRC-32 (u32) of every preceding byte

The JSON header holds ``network`` (spec name), ``spec`` (the network as
network-config text), ``seed``, ``epoch``, ``step``, ``precision``
(:meth:`PrecisionConfig.to_dict`), ``radix_map`` (key -> [total_bits,
frac_bits]), ``shifts`` (binary layer index -> exponent) and ``tensors``:
a list of ``{"name", "shape", "offset"}`` entries whose offsets are in
bytes from the start of the data block. Shadow parameters are named
``W{i}``/``b{i}``; momentum buffers ``v:W{i}``/``v:b{i}``.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError, MissingCheckpointError
from .quantcore import FixedPointFormat, PrecisionConfig
from .quantnet.network import Network, param_shapes
from .quantnet.specs import parse_network_text
from .quanttrain import QatState

MAGIC = b"QNNLCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sHHI")


def _tensor_list(state: QatState):
    out = list(state.network.tensors())
    out += [(f"v:{k}", v) for k, v in sorted(state.velocity.items())]
    return out


def dumps(state: QatState) -> bytes:
    net = state.network
    entries, blobs, offset = [], [], 0
    for name, arr in _tensor_list(state):
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {
        "network": net.spec.name,
        "spec": net.spec.to_text(),
        "seed": net.seed,
        "epoch": state.epoch,
        "step": state.step,
        "precision": state.precision.to_dict(),
        "radix_map": {k: [f.total_bits, f.frac_bits] for k, f in sorted(net.radix_map.items())},
        "shifts": {str(k): v for k, v in sorted(net.shifts.items())},
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, 0, len(hbytes)) + hbytes
    body += b"\0" * (-len(body) % 8) + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(raw: bytes, source: str = "<bytes>") -> QatState:
    if len(raw) < _PREFIX.size + 4:
        raise CheckpointError(f"{source}: too short for a checkpoint")
    magic, version, _, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise CheckpointError(f"{source}: checksum mismatch")
    hend = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size:hend].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: corrupt header: {e}") from e
    data = memoryview(raw)[hend + (-hend % 8): -4]
    try:
        return _build(header, data, source)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{source}: malformed header: {e!r}") from e


def _build(header: dict, data, source: str) -> QatState:
    spec = parse_network_text(header["spec"], header["network"], source)
    arrays = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) * 8
        if t["offset"] + n > len(data):
            raise CheckpointError(f"{source}: tensor {t['name']} runs past the data block")
        arrays[t["name"]] = np.frombuffer(data[t["offset"]: t["offset"] + n], dtype="<f8") \
            .reshape(t["shape"]).astype(np.float64)
    params = {}
    for name, arr in arrays.items():
        if name.startswith(("W", "b")):
            params.setdefault(int(name[1:]), {})[name[0]] = arr
    for i, (ws, bs) in param_shapes(spec).items():
        got = params.get(i, {})
        if got.get("W") is None or got.get("b") is None \
                or got["W"].shape != ws or got["b"].shape != bs:
            raise CheckpointError(f"{source}: parameters of layer {i} do not match the network")
    net = Network(spec, params,
                  {k: FixedPointFormat(*v) for k, v in header["radix_map"].items()},
                  header["seed"], {int(k): v for k, v in header.get("shifts", {}).items()})
    velocity = {k[2:]: v for k, v in arrays.items() if k.startswith("v:")}
    return QatState(net, PrecisionConfig.from_dict(header["precision"]), velocity,
                    header["epoch"], header["step"])


def save(state: QatState, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(state))
    tmp.replace(path)
    return path


def load(path) -> QatState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise MissingCheckpointError(f"checkpoint {path} not found") from None
    return loads(raw, str(path))
