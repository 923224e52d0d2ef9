"""Small deterministic binary container for named arrays plus JSON metadata.

Layout: magic, u32 header length, UTF-8 JSON header, then the raw
little-endian array payloads in header order. Unlike ``np.savez`` no
timestamps are embedded, so identical inputs give identical bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import MeshFormatError

MAGIC = b"FMAPBIN1"


def write_container(path, meta: dict, arrays: dict) -> None:
    specs = []
    payload = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|", "<") else a.dtype
        a = a.astype(dt, copy=False)
        specs.append({"name": name, "dtype": dt.str, "shape": list(a.shape)})
        payload.append(a.tobytes())
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in payload:
            fh.write(p)


def read_container(path):
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 4:
        raise MeshFormatError("not a facemap binary container", path)
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except ValueError as exc:
        raise MeshFormatError(f"corrupt container header: {exc}", path) from None
    offset = start + hlen
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise MeshFormatError(f"truncated array {spec['name']!r}", path)
        arrays[spec["name"]] = np.frombuffer(raw, dt, count, offset).reshape(spec["shape"]).copy()
        offset += nbytes
    return header["meta"], arrays
