"""IFQN / IFQC binary containers.

Layout shared by both formats::

    magic      4 bytes   b"IFQN" (network) or b"IFQC" (converted network)
    version    u16 LE    currently 1
    length     u32 LE    byte length of the manifest
    manifest   UTF-8 JSON, keys sorted, no whitespace
    blobs      raw little-endian tensor data

The manifest holds every scalar and a ``blobs`` table of ``[offset, length]``
pairs relative to the start of the blob region. Tensor fields in the manifest
are references ``{"blob": i, "dtype": ..., "shape": [...]}`` where dtype is one
of ``f64``, ``i32``, ``i64`` or ``sign`` (1 bit per element, 1 = +1, MSB first,
each row padded to a byte boundary). Real scalars are stored as ``float.hex``
strings so they round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import convert as C
from . import model as M

VERSION = 1
HEADER = struct.Struct("<4sHI")

_DTYPES = {"f64": "<f8", "i32": "<i4", "i64": "<i8"}

IFQN_MAGIC = b"IFQN"
IFQC_MAGIC = b"IFQC"


class ContainerError(ValueError):
    """Malformed or inconsistent container file."""


def hexf(x: float) -> str:
    return float(x).hex()


def unhexf(s) -> float:
    if isinstance(s, str):
        return float.fromhex(s)
    raise ContainerError(f"expected hex float string, got {s!r}")


def pack_signs(w: np.ndarray) -> np.ndarray:
    """Rows of +/-1 to MSB-first bytes, one padded byte row per output row."""
    w = np.asarray(w)
    rows = w.reshape(w.shape[0], -1)
    return np.packbits((rows > 0).astype(np.uint8), axis=1, bitorder="big")


def unpack_signs(packed: np.ndarray, n: int) -> np.ndarray:
    bits = np.unpackbits(packed, axis=1, count=n, bitorder="big")
    return (bits.astype(np.int8) * 2 - 1)


class BlobWriter:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.table: list[list[int]] = []
        self.offset = 0

    def _push(self, raw: bytes) -> int:
        self.table.append([self.offset, len(raw)])
        self.chunks.append(raw)
        self.offset += len(raw)
        return len(self.table) - 1

    def add(self, arr, dtype: str) -> dict:
        arr = np.asarray(arr)
        if dtype == "sign":
            shape = list(arr.shape)
            raw = pack_signs(arr).tobytes()
        else:
            if dtype == "i32":
                info = np.iinfo(np.int32)
                if arr.size and (arr.min() < info.min or arr.max() > info.max):
                    raise OverflowError("value does not fit in 32 signed bits")
            shape = list(arr.shape)
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        return {"blob": self._push(raw), "dtype": dtype, "shape": shape}

    def payload(self) -> bytes:
        return b"".join(self.chunks)


class BlobReader:
    def __init__(self, region: bytes, table):
        self.region = region
        if not isinstance(table, list):
            raise ContainerError("manifest blob table missing")
        for i, entry in enumerate(table):
            off, length = entry
            if off < 0 or length < 0 or off + length > len(region):
                raise ContainerError(f"blob {i}: blob length mismatch (extends past end of file)")
        self.table = table

    def get(self, ref: dict, where: str = "") -> np.ndarray:
        try:
            idx, dtype, shape = ref["blob"], ref["dtype"], tuple(ref["shape"])
            off, length = self.table[idx]
        except (KeyError, IndexError, TypeError) as exc:
            raise ContainerError(f"{where}: bad tensor reference {ref!r}") from exc
        raw = self.region[off:off + length]
        count = int(np.prod(shape)) if shape else 1
        if dtype == "sign":
            rows = shape[0] if shape else 1
            n = count // rows if rows else 0
            expect = rows * ((n + 7) // 8)
            if length != expect:
                raise ContainerError(f"{where}: blob length mismatch ({length} != {expect})")
            packed = np.frombuffer(raw, dtype=np.uint8).reshape(rows, (n + 7) // 8)
            return unpack_signs(packed, n).reshape(shape)
        if dtype not in _DTYPES:
            raise ContainerError(f"{where}: unknown blob dtype {dtype!r}")
        itemsize = np.dtype(_DTYPES[dtype]).itemsize
        if length != count * itemsize:
            raise ContainerError(f"{where}: blob length mismatch ({length} != {count * itemsize})")
        out = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape)
        return out.astype(np.float64 if dtype == "f64" else np.int64)


def write_frame(magic: bytes, manifest: dict, blobs: BlobWriter) -> bytes:
    manifest = dict(manifest, blobs=blobs.table)
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return HEADER.pack(magic, VERSION, len(text)) + text + blobs.payload()


def read_frame(data: bytes, magic: bytes) -> tuple[dict, BlobReader]:
    if len(data) < HEADER.size:
        raise ContainerError("file too short for header")
    got_magic, version, mlen = HEADER.unpack_from(data)
    if got_magic != magic:
        raise ContainerError(f"bad magic {got_magic!r}, expected {magic!r}")
    if version != VERSION:
        raise ContainerError(f"version mismatch: file has {version}, reader supports {VERSION}")
    start = HEADER.size
    if start + mlen > len(data):
        raise ContainerError("malformed manifest: length exceeds file size")
    try:
        manifest = json.loads(data[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed manifest: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ContainerError("malformed manifest: not an object")
    reader = BlobReader(data[start + mlen:], manifest.get("blobs"))
    return manifest, reader


# -- IFQN ------------------------------------------------------------------

_REAL_SCALARS = {"base", "offset", "beta_out"}
_ARRAYS = {
    "QConv": {"alpha": "f64", "weights_sign": "sign", "bias": "f64"},
    "QFC": {"alpha": "f64", "weights_sign": "sign", "bias": "f64"},
    "Conv": {"weight": "f64", "bias": "f64"},
    "FC": {"weight": "f64", "bias": "f64"},
    "BN": {"theta": "f64", "sigma": "f64"},
}
_INTS = {
    "QConv": ("out_channels", "in_channels", "kernel_h", "kernel_w", "stride", "pad", "act_bits"),
    "QFC": ("out_features", "in_features", "act_bits"),
    "Conv": ("out_channels", "in_channels", "kernel_h", "kernel_w", "stride", "pad", "weight_bits"),
    "FC": ("out_features", "in_features", "weight_bits"),
    "BN": (),
    "MaxPool": ("window", "stride"),
    "Quant": ("k",),
    "ReLU": (),
}


def encode_layer(layer, blobs: BlobWriter) -> dict:
    kind = type(layer).__name__
    entry = {"type": kind, "name": layer.name}
    for attr in _INTS[kind]:
        entry[attr] = int(getattr(layer, attr))
    for attr, dtype in _ARRAYS.get(kind, {}).items():
        entry[attr] = blobs.add(getattr(layer, attr), dtype)
    if kind == "Quant":
        for attr in sorted(_REAL_SCALARS):
            entry[attr] = hexf(getattr(layer, attr))
    return entry


def decode_layer(idx: int, entry: dict, blobs: BlobReader):
    where = f"layer {idx}"
    if not isinstance(entry, dict):
        raise ContainerError(f"{where}: malformed layer entry")
    kind = entry.get("type")
    if kind not in M.LAYER_TYPES:
        raise ContainerError(f"{where}: unknown layer variant {kind!r}")
    kwargs = {"name": entry.get("name", f"layer{idx}")}
    try:
        for attr in _INTS[kind]:
            kwargs[attr] = int(entry[attr])
        for attr in _ARRAYS.get(kind, {}):
            kwargs[attr] = blobs.get(entry[attr], f"{where}.{attr}")
        if kind == "Quant":
            for attr in _REAL_SCALARS:
                kwargs[attr] = unhexf(entry[attr])
        return M.LAYER_TYPES[kind](**kwargs)
    except KeyError as exc:
        raise ContainerError(f"{where}: missing field {exc.args[0]!r}") from exc
    except ContainerError:
        raise
    except (ValueError, TypeError) as exc:
        raise ContainerError(f"{where}: {exc}") from exc


def dumps_model(net: M.NetworkDef) -> bytes:
    blobs = BlobWriter()
    manifest = {
        "format": "IFQN",
        "name": net.name,
        "input_shape": list(net.input_shape),
        "input_bits": int(net.input_bits),
        "input_scale": hexf(net.input_scale),
        "layers": [encode_layer(layer, blobs) for layer in net.layers],
    }
    return write_frame(IFQN_MAGIC, manifest, blobs)


def loads_model(data: bytes, validate: bool = True) -> M.NetworkDef:
    manifest, blobs = read_frame(data, IFQN_MAGIC)
    layers = manifest.get("layers")
    if not isinstance(layers, list):
        raise ContainerError("malformed manifest: no layer list")
    try:
        net = M.NetworkDef(
            name=str(manifest.get("name", "")),
            input_shape=tuple(manifest["input_shape"]),
            input_bits=int(manifest["input_bits"]),
            input_scale=unhexf(manifest["input_scale"]),
            layers=[decode_layer(i, e, blobs) for i, e in enumerate(layers)],
        )
    except KeyError as exc:
        raise ContainerError(f"malformed manifest: missing {exc.args[0]!r}") from exc
    if validate:
        problems = M.validate_model(net)
        if problems:
            raise ContainerError("; ".join(str(p) for p in problems))
    return net


def save_model(net: M.NetworkDef, path) -> None:
    Path(path).write_bytes(dumps_model(net))


def load_model(path, validate: bool = True) -> M.NetworkDef:
    """Read an IFQN file; raises ContainerError on any format or validity problem."""
    return loads_model(Path(path).read_bytes(), validate=validate)


# -- IFQC ------------------------------------------------------------------

def _geometry(op) -> dict:
    return {k: int(getattr(op, k)) for k in
            ("out_channels", "in_channels", "kernel_h", "kernel_w", "stride", "pad")} | {"fc": bool(op.fc)}


def _opt_blob(blobs: BlobWriter, arr, dtype):
    return None if arr is None else blobs.add(arr, dtype)


def _encode_op(op, blobs: BlobWriter, integrated: bool) -> dict:
    entry = {"layer": int(op.layer)}
    if isinstance(op, C.BinaryConvOp):
        entry |= {"op": "binary_conv", "act_bits": int(op.act_bits), **_geometry(op),
                  "signs": blobs.add(op.signs, "sign"),
                  "alpha_fixed": _opt_blob(blobs, op.alpha_fixed, "i64"),
                  "bias_fixed": _opt_blob(blobs, op.bias_fixed, "i64"),
                  "input_scale_fixed": None if op.input_scale_fixed is None else int(op.input_scale_fixed)}
    elif isinstance(op, C.IntLinearOp):
        entry |= {"op": "int_linear", **_geometry(op),
                  "weight_fixed": blobs.add(op.weight_fixed, "i64"),
                  "bias_fixed": blobs.add(op.bias_fixed, "i64"),
                  "input_scale_fixed": None if op.input_scale_fixed is None else int(op.input_scale_fixed),
                  "shift": int(op.shift)}
    elif isinstance(op, C.MaxPoolOp):
        entry |= {"op": "max_pool", "window": int(op.window), "stride": int(op.stride)}
    elif isinstance(op, C.ReLUOp):
        entry |= {"op": "relu"}
    elif isinstance(op, C.LiftOp):
        entry |= {"op": "lift", "scale_fixed": int(op.scale_fixed), "m": int(op.m)}
    elif isinstance(op, C.IntBNOp):
        entry |= {"op": "int_bn", "m": int(op.m),
                  "theta_fixed": blobs.add(op.theta_fixed, "i64"),
                  "sigma_fixed": blobs.add(op.sigma_fixed, "i64")}
    elif isinstance(op, C.ThresholdOp):
        f = op.folded
        entry |= {"op": "threshold", "k": int(f.k), "beta_out": hexf(op.beta_out),
                  "channels": int(f.thresholds.shape[0])}
        if f.compact:
            entry["compact"] = {"frac_bits": int(f.frac_bits),
                                "base_fixed": blobs.add(f.base_fixed, "i64"),
                                "offset_fixed": blobs.add(f.offset_fixed, "i64")}
            entry["thresholds"] = None
        else:
            entry["compact"] = None
            entry["thresholds"] = blobs.add(f.thresholds, "i32" if integrated else "i64")
    else:
        raise TypeError(f"cannot serialise {type(op).__name__}")
    return entry


def _decode_op(entry: dict, blobs: BlobReader, where: str):
    kind = entry["op"]
    layer = int(entry["layer"])
    where = f"{where} layer {layer}"

    def geo():
        return {k: int(entry[k]) for k in
                ("out_channels", "in_channels", "kernel_h", "kernel_w", "stride", "pad")} | {"fc": bool(entry["fc"])}

    def opt(name):
        ref = entry.get(name)
        return None if ref is None else blobs.get(ref, f"{where}.{name}")

    if kind == "binary_conv":
        return C.BinaryConvOp(layer, signs=blobs.get(entry["signs"], f"{where}.signs"),
                              act_bits=int(entry["act_bits"]), alpha_fixed=opt("alpha_fixed"),
                              input_scale_fixed=entry["input_scale_fixed"], bias_fixed=opt("bias_fixed"),
                              **geo())
    if kind == "int_linear":
        return C.IntLinearOp(layer, weight_fixed=blobs.get(entry["weight_fixed"], where),
                             bias_fixed=blobs.get(entry["bias_fixed"], where),
                             input_scale_fixed=entry["input_scale_fixed"], shift=int(entry["shift"]), **geo())
    if kind == "max_pool":
        return C.MaxPoolOp(layer, int(entry["window"]), int(entry["stride"]))
    if kind == "relu":
        return C.ReLUOp(layer)
    if kind == "lift":
        return C.LiftOp(layer, int(entry["scale_fixed"]), int(entry["m"]))
    if kind == "int_bn":
        return C.IntBNOp(layer, blobs.get(entry["theta_fixed"], where),
                         blobs.get(entry["sigma_fixed"], where), int(entry["m"]))
    if kind == "threshold":
        k = int(entry["k"])
        compact = entry.get("compact")
        if compact is not None:
            f = int(compact["frac_bits"])
            b = blobs.get(compact["base_fixed"], where)
            o = blobs.get(compact["offset_fixed"], where)
            thr = C.reconstruct_thresholds(b, o, f, (1 << k) - 1)
            folded = C.FoldedThresholds(thr, k, b, o, f)
        else:
            thr = blobs.get(entry["thresholds"], where)
            folded = C.FoldedThresholds(thr, k)
        if folded.thresholds.shape != (int(entry["channels"]), (1 << k) - 1):
            raise ContainerError(f"{where}: threshold table has shape {folded.thresholds.shape}")
        return C.ThresholdOp(layer, folded, unhexf(entry["beta_out"]))
    raise ContainerError(f"{where}: unknown op {kind!r}")


def dumps_converted(cn) -> bytes:
    blobs = BlobWriter()
    subs = []
    for sub in cn.subs:
        integrated = sub.mode == C.INTEGRATED
        try:
            ops = [_encode_op(op, blobs, integrated) for op in sub.ops]
        except OverflowError as exc:
            raise C.FixedPointOverflow(f"substructure {sub.sub_id}: {exc}") from exc
        subs.append({"sub_id": sub.sub_id, "kind": sub.kind, "mode": sub.mode, "m": int(sub.m),
                     "first": int(sub.first), "last": int(sub.last),
                     "in_scale": hexf(sub.in_scale), "out_scale": hexf(sub.out_scale),
                     "out_codes": bool(sub.out_codes), "ops": ops})
    manifest = {"format": "IFQC", "name": cn.name, "input_shape": list(cn.input_shape),
                "input_bits": int(cn.input_bits), "input_scale": hexf(cn.input_scale),
                "mode": cn.mode, "subs": subs}
    return write_frame(IFQC_MAGIC, manifest, blobs)


def loads_converted(data: bytes):
    manifest, blobs = read_frame(data, IFQC_MAGIC)
    try:
        subs = []
        for s in manifest["subs"]:
            where = f"substructure {s.get('sub_id')}"
            ops = [_decode_op(e, blobs, where) for e in s["ops"]]
            subs.append(C.ConvertedSub(int(s["sub_id"]), s["kind"], s["mode"], int(s["m"]),
                                       int(s["first"]), int(s["last"]), ops,
                                       unhexf(s["in_scale"]), unhexf(s["out_scale"]), bool(s["out_codes"])))
        return C.ConvertedNetwork(str(manifest["name"]), tuple(manifest["input_shape"]),
                                  int(manifest["input_bits"]), unhexf(manifest["input_scale"]),
                                  manifest["mode"], subs)
    except (KeyError, TypeError) as exc:
        raise ContainerError(f"malformed manifest: {exc!r}") from exc


def save_converted(cn, path) -> None:
    Path(path).write_bytes(dumps_converted(cn))


def load_converted(path):
    return loads_converted(Path(path).read_bytes())


def sniff(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(4)
