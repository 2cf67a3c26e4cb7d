"""Named-tensor checkpoint files.

Layout: one UTF-8 JSON header line
    {"format_version": 1, "tensors": {name: {"shape": [...], "byte_offset": o, "byte_len": n}}}
followed by raw little-endian float32 blobs. Offsets count from the first byte after the header line.
"""

import json
import logging

import numpy as np

from ..errors import SchemaError
from ..utils import ensure_parent_dir

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


def save_checkpoint(path, tensors):
    """Write ``{name: array}`` as float32. Returns the header index."""
    index = {}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(np.asarray(arr), dtype=_DTYPE).tobytes()
        index[name] = {"shape": list(np.shape(arr)), "byte_offset": offset, "byte_len": len(blob)}
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps({"format_version": FORMAT_VERSION, "tensors": index}, sort_keys=True)
    ensure_parent_dir(path)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            f.write(blob)
    log.debug("Wrote checkpoint %s (%d tensors, %d bytes)", path, len(index), offset)
    return index


def load_checkpoint_f32(path):
    """Read ``{name: float32 array}`` exactly as stored."""
    with open(path, "rb") as f:
        raw = f.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise SchemaError("missing header line", path=path)
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError(f"bad header: {e}", path=path) from e
    if header.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported format_version {header.get('format_version')!r}", path=path)

    body = raw[newline + 1:]
    out = {}
    for name, entry in header.get("tensors", {}).items():
        shape = tuple(entry["shape"])
        start, length = entry["byte_offset"], entry["byte_len"]
        expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if length != expected:
            raise SchemaError(f"byte_len {length} != {expected} for shape {shape}", path=path, field=name)
        if start + length > len(body):
            raise SchemaError("truncated tensor blob", path=path, field=name)
        out[name] = np.frombuffer(body, dtype=_DTYPE, count=length // _DTYPE.itemsize,
                                  offset=start).reshape(shape).copy()
    return out


def load_checkpoint(path):
    """Read ``{name: float64 array}`` (float32 values widened)."""
    return {name: arr.astype(np.float64) for name, arr in load_checkpoint_f32(path).items()}
