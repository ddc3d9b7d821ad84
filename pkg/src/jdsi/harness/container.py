"""JKS1 binary container for k-space, images, maps, masks and checkpoints.

Layout (little-endian)::

    header : b"JKS1" | version u16 | record count u32
    record : kind u8 | name length u16 | name (UTF-8) | dims u32 x 4 | dtype u8 | payload

Dims are always (N, C/J, H, W); lower-rank arrays are left-padded with
ones and come back 4D. Complex payloads are interleaved (re, im) pairs.
"""
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"JKS1"
VERSION = 1

KINDS = {"kspace": 1, "image": 2, "maps": 3, "mask": 4, "param": 5, "adam-state": 6}
KIND_NAMES = {v: k for k, v in KINDS.items()}

DTYPES = {
    1: np.dtype("<c8"),
    2: np.dtype("<c16"),
    3: np.dtype("<f4"),
    4: np.dtype("<f8"),
    5: np.dtype("u1"),
}

_HEADER = struct.Struct("<4sHI")
_DIMS = struct.Struct("<IIII")


class ContainerFormatError(ValueError):
    """Malformed container; ``offset`` is the byte position of the problem."""

    def __init__(self, msg, offset):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Record:
    kind: str
    name: str
    data: np.ndarray


def _dims4(shape):
    if len(shape) > 4:
        raise ValueError(f"at most 4 dims supported, got shape {shape}")
    return (1,) * (4 - len(shape)) + tuple(int(s) for s in shape)


def _dtype_code(a):
    if a.dtype == np.bool_:
        return 5
    for code, dt in DTYPES.items():
        if a.dtype == dt:
            return code
    raise ValueError(f"unsupported dtype {a.dtype}")


def encode(records):
    parts = [_HEADER.pack(MAGIC, VERSION, len(records))]
    for r in records:
        if r.kind not in KINDS:
            raise ValueError(f"unknown record kind {r.kind!r}")
        a = np.asarray(r.data)
        code = _dtype_code(a)
        name = r.name.encode("utf-8")
        if len(name) > 0xFFFF:
            raise ValueError("record name too long")
        parts.append(struct.pack("<BH", KINDS[r.kind], len(name)))
        parts.append(name)
        parts.append(_DIMS.pack(*_dims4(a.shape)))
        parts.append(struct.pack("<B", code))
        parts.append(np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes())
    return b"".join(parts)


def decode(buf):
    buf = memoryview(buf)
    if len(buf) < _HEADER.size:
        raise ContainerFormatError("truncated header", len(buf))
    magic, version, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {bytes(magic)!r}", 0)
    if version != VERSION:
        raise ContainerFormatError(f"unsupported version {version}", 4)
    pos = _HEADER.size
    out = []

    def need(n, what):
        if pos + n > len(buf):
            raise ContainerFormatError(f"truncated {what}", pos)

    for _ in range(count):
        need(3, "record header")
        kind, nlen = struct.unpack_from("<BH", buf, pos)
        if kind not in KIND_NAMES:
            raise ContainerFormatError(f"unknown record kind {kind}", pos)
        pos += 3
        need(nlen, "record name")
        try:
            name = bytes(buf[pos:pos + nlen]).decode("utf-8")
        except UnicodeDecodeError:
            raise ContainerFormatError("record name is not UTF-8", pos) from None
        pos += nlen
        need(_DIMS.size + 1, "dims")
        dims = _DIMS.unpack_from(buf, pos)
        pos += _DIMS.size
        code = buf[pos]
        if code not in DTYPES:
            raise ContainerFormatError(f"unknown dtype code {code}", pos)
        pos += 1
        dt = DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        need(nbytes, "payload")
        data = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(dims).copy()
        pos += nbytes
        if code == 5 and KIND_NAMES[kind] == "mask":
            data = data.astype(bool)
        out.append(Record(KIND_NAMES[kind], name, data))
    if pos != len(buf):
        raise ContainerFormatError("trailing bytes after last record", pos)
    return out


def container_write(path, records):
    with open(path, "wb") as f:
        f.write(encode(records))


def container_read(path):
    with open(path, "rb") as f:
        return decode(f.read())


# --- checkpoints -------------------------------------------------------------------

def _text_record(name, text):
    return Record("param", name, np.frombuffer(text.encode("utf-8"), dtype=np.uint8))


def store_records(store):
    """Records for every parameter, buffer and Adam moment of a ParamStore.

    Exact array shapes and the non-negative parameter set travel in two
    UTF-8 ``meta:`` records, since record dims are always padded to 4.
    """
    recs, shapes = [], {}
    for name, t in store.params.items():
        recs.append(Record("param", name, t.value))
        shapes[name] = list(t.value.shape)
    for name, b in store.buffers.items():
        recs.append(Record("param", "buffer:" + name, b))
        shapes["buffer:" + name] = list(b.shape)
    for name, (m, v, t) in store.adam.items():
        recs.append(Record("adam-state", name + ":m", m))
        recs.append(Record("adam-state", name + ":v", v))
        recs.append(Record("adam-state", name + ":t", np.array([t], dtype=np.float64)))
    recs.append(_text_record("meta:shapes", json.dumps(shapes, sort_keys=True)))
    recs.append(_text_record("meta:nonneg", json.dumps(sorted(store.nonneg))))
    return recs


def save_checkpoint(path, store):
    container_write(path, store_records(store))


def load_checkpoint(path):
    """Rebuild the ParamStore written by :func:`save_checkpoint`, bit-exact."""
    from ..nn.optim import ParamStore

    recs = container_read(path)
    meta = {r.name: json.loads(r.data.tobytes().decode("utf-8")) for r in recs if r.name.startswith("meta:")}
    if "meta:shapes" not in meta:
        raise ContainerFormatError("checkpoint has no meta:shapes record", 0)
    shapes, nonneg = meta["meta:shapes"], set(meta.get("meta:nonneg", []))
    params = [r for r in recs if r.kind == "param" and not r.name.startswith(("meta:", "buffer:"))]
    store = ParamStore(params[0].data.dtype if params else np.float64)
    for r in recs:
        if r.kind != "param" or r.name.startswith("meta:"):
            continue
        a = r.data.reshape(shapes[r.name])
        if r.name.startswith("buffer:"):
            store.add_buffer(r.name[7:], a)
        else:
            store.add(r.name, a, nonneg=r.name in nonneg)
    moments = {}
    for r in recs:
        if r.kind == "adam-state":
            base, part = r.name.rsplit(":", 1)
            moments.setdefault(base, {})[part] = r.data
    for k, d in moments.items():
        shp = store.params[k].value.shape
        store.adam[k] = [d["m"].reshape(shp), d["v"].reshape(shp), int(d["t"].reshape(-1)[0])]
    return store


# --- JSON side records ---------------------------------------------------------------

def meta_record(name, obj):
    return _text_record("meta:" + name, json.dumps(obj, sort_keys=True))


def read_meta(records, name):
    for r in records:
        if r.name == "meta:" + name:
            return json.loads(r.data.tobytes().decode("utf-8"))
    raise KeyError(f"no meta:{name} record")


def find(records, name, kind=None):
    for r in records:
        if r.name == name and (kind is None or r.kind == kind):
            return r
    raise KeyError(f"no record named {name!r}")
