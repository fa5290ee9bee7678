"""Little-endian binary checkpoint format.

Layout::

    b"CCNN"  u32 version  u32 count
    count x { u16 name_len, utf-8 name, u8 rank, rank x u32 dims, float32 data }
    u64 trailer = number of bytes preceding the trailer

Training metadata goes to a ``<path>.meta`` key=value text file next to it.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CCNN"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors):
    """Serialize an ordered ``{name: array}`` mapping to bytes."""
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(getattr(arr, "data", arr))
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", len(body))


def decode(blob):
    """Parse bytes produced by :func:`encode` into ``{name: float32 array}``."""
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise CheckpointError("not a CCNN checkpoint (bad magic)")
    (trailer,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if trailer != len(blob) - 8:
        raise CheckpointError(f"length check failed: trailer says {trailer}, payload is {len(blob) - 8} bytes")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    pos = 12
    out = {}
    end = len(blob) - 8
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > end:
                raise CheckpointError(f"tensor {name!r} runs past the end of the payload at byte {pos}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint at byte {pos}") from exc
    if pos != end:
        raise CheckpointError(f"{end - pos} unexpected bytes after the last tensor")
    return out


def write_meta(path, meta):
    lines = [f"{k}={v}\n" for k, v in meta.items()]
    Path(path).write_text("".join(lines), encoding="ascii", newline="\n")


def read_meta(path):
    meta = {}
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def save_checkpoint(path, tensors, meta=None):
    path = Path(path)
    path.write_bytes(encode(tensors))
    if meta is not None:
        write_meta(str(path) + ".meta", {"format_version": FORMAT_VERSION, **meta})


def load_checkpoint(path):
    """Return ``(tensors, meta)``; meta is empty when no sidecar exists."""
    path = Path(path)
    tensors = decode(path.read_bytes())
    meta_path = Path(str(path) + ".meta")
    meta = read_meta(meta_path) if meta_path.exists() else {}
    return tensors, meta
