"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"PTRA"  u32 version  u32 header_len  header (UTF-8 JSON layer table)
    section*:
        tag[4]  u32 layer_index  u16 name_len  name  u64 payload_len  payload

Section tags:

* ``PARM`` dense parameter payload in its storage precision (``<f4``, ``<f2``,
  ``<f8`` or ``i1`` for INT8 values)
* ``DECO`` SVD factor payloads (U, S, V) of decomposed layers, same encoding
* ``BUFR`` layer buffers such as BatchNorm running statistics
* ``QUAN`` per-tensor scales followed by the optional calibrated activation range
* ``MASK`` bit-packed pruning mask

The sum of ``PARM``/``DECO``/``BUFR``/``QUAN`` payload lengths equals
``Network.model_size_bytes()``; masks are bookkeeping and not counted.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from petra.nn import qmath
from petra.nn.layers import QuantRecord, layer_from_config
from petra.nn.network import Network, Task, storage_kind

MAGIC = b"PTRA"
VERSION = 1
SIZE_TAGS = (b"PARM", b"DECO", b"BUFR", b"QUAN")
_STORE = {"fp32": "<f4", "fp16": "<f2", "fp64": "<f8", "int8": "i1"}


class CheckpointError(ValueError):
    pass


def _section(tag: bytes, layer: int, name: str, payload: bytes) -> bytes:
    nb = name.encode("utf-8")
    return tag + struct.pack("<IH", layer, len(nb)) + nb + struct.pack("<Q", len(payload)) + payload


def dumps(net: Network) -> bytes:
    ldt = "<f8" if net.dtype == np.float64 else "<f4"
    table = []
    body = []
    for i, layer in enumerate(net.layers):
        rec = layer.quant
        entry = {
            "kind": layer.kind,
            "config": layer.config(),
            "precision": layer.precision,
            "fake_quant": layer.fake_quant,
            "params": [[k, list(v.shape), storage_kind(layer, k, v)] for k, v in layer.params.items()],
            "buffers": [[k, list(v.shape), storage_kind(layer, k, v)] for k, v in layer.buffers.items()],
            "masks": [[k, list(v.shape)] for k, v in layer.masks.items()],
            "quant": None if rec is None else {
                "mode": rec.mode, "dtype": rec.dtype,
                "scales": list(rec.scales), "act_range": rec.act_range is not None,
            },
        }
        table.append(entry)
        for name, arr in layer.params.items():
            kind = storage_kind(layer, name, arr)
            if kind == "int8":
                scale = rec.scales[name]
                q, _ = qmath.quantize(arr, scale)
                if not np.array_equal(qmath.dequantize(q, scale, arr.dtype), arr):
                    raise CheckpointError(f"layer {i} {name}: values are off the int8 grid")
                payload = q.tobytes()
            else:
                payload = arr.astype(_STORE[kind]).tobytes()
            tag = b"DECO" if name in ("U", "S", "V") else b"PARM"
            body.append(_section(tag, i, name, payload))
        for name, arr in layer.buffers.items():
            body.append(_section(b"BUFR", i, name, arr.astype(_STORE[storage_kind(layer, name, arr)]).tobytes()))
        if rec is not None and rec.dtype == "int8":
            vals = [rec.scales[k] for k in rec.scales]
            if rec.act_range is not None:
                vals += list(rec.act_range)
            body.append(_section(b"QUAN", i, "quant", np.asarray(vals, dtype=ldt).tobytes()))
        for name, m in layer.masks.items():
            body.append(_section(b"MASK", i, name, np.packbits(m.astype(bool).ravel()).tobytes()))
    header = json.dumps({
        "task": {"kind": net.task.kind, "n_classes": net.task.n_classes},
        "input_shape": list(net.input_shape),
        "skips": [list(s) for s in net.skips],
        "loss": net.loss,
        "dtype": np.dtype(net.dtype).name,
        "layers": table,
    }, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(body)


def iter_sections(blob: bytes):
    """Yield ``(tag, layer, name, payload)`` for every section after the header."""
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic, not a PTRA checkpoint")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12 + hlen
    while pos < len(blob):
        try:
            tag = blob[pos:pos + 4]
            layer, nlen = struct.unpack_from("<IH", blob, pos + 4)
            pos += 10
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (plen,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"truncated section header at byte {pos}") from exc
        if pos + plen > len(blob):
            raise CheckpointError(f"section {tag!r} {name!r} truncated: {plen} bytes declared")
        yield tag, layer, name, blob[pos:pos + plen]
        pos += plen


def read_header(blob: bytes) -> dict:
    """Decoded JSON layer table plus the container ``version``."""
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic, not a PTRA checkpoint")
    try:
        version, hlen = struct.unpack_from("<II", blob, 4)
        head = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    head["version"] = version
    return head


def loads(blob: bytes) -> Network:
    try:
        return _loads(blob)
    except CheckpointError:
        raise
    except (KeyError, ValueError, IndexError, StopIteration, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {type(exc).__name__}: {exc}") from exc


def _loads(blob: bytes) -> Network:
    head = read_header(blob)
    dtype = np.dtype(head["dtype"])
    ldt = "<f8" if dtype == np.float64 else "<f4"
    table = head["layers"]
    layers = []
    for entry in table:
        layer = layer_from_config(entry["kind"], entry["config"], dtype=dtype)
        layer.params = {}
        layer.buffers = {}
        layer.precision = entry["precision"]
        layer.fake_quant = entry["fake_quant"]
        layers.append(layer)
    scales = {}
    for tag, li, name, payload in iter_sections(blob):
        entry = table[li]
        layer = layers[li]
        if tag in (b"PARM", b"DECO", b"BUFR"):
            group = entry["buffers"] if tag == b"BUFR" else entry["params"]
            shape, kind = next((s, k) for n, s, k in group if n == name)
            arr = np.frombuffer(payload, dtype=_STORE[kind]).reshape(shape)
            target = layer.buffers if tag == b"BUFR" else layer.params
            target[name] = arr if kind == "int8" else arr.astype(dtype)
        elif tag == b"QUAN":
            scales[li] = np.frombuffer(payload, dtype=ldt).astype(dtype)
        elif tag == b"MASK":
            shape = next(s for n, s in entry["masks"] if n == name)
            bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=int(np.prod(shape)))
            layer.masks[name] = bits.reshape(shape).astype(dtype)
        else:
            raise CheckpointError(f"unknown section tag {tag!r}")
    for li, (entry, layer) in enumerate(zip(table, layers)):
        q = entry["quant"]
        if q is None:
            continue
        if q["dtype"] == "int8":
            vals = scales[li]
            names = q["scales"]
            sc = {n: dtype.type(vals[k]) for k, n in enumerate(names)}
            act = None
            if q["act_range"]:
                act = (float(vals[len(names)]), float(vals[len(names) + 1]))
            layer.quant = QuantRecord(q["mode"], "int8", sc, act)
            for n in names:
                layer.params[n] = qmath.dequantize(layer.params[n], sc[n], dtype)
        else:
            layer.quant = QuantRecord(q["mode"], q["dtype"])
    task = Task(head["task"]["kind"], head["task"]["n_classes"])
    return Network(layers, task, head["input_shape"], head["skips"], head["loss"], dtype)


def save(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(net))


def load(path) -> Network:
    with open(path, "rb") as fh:
        return loads(fh.read())


def payload_bytes(blob: bytes) -> int:
    """Byte-count oracle for model size: sum of counted section payloads."""
    return sum(len(p) for tag, _, _, p in iter_sections(blob) if tag in SIZE_TAGS)
