"""Writers for the engine's XPE1 embedding file and pair manifest.

Layout (little-endian): magic "XPE1", u32 version=1, u32 D, u64 record
count; per record u16 id length, UTF-8 id, u32 F, then F*D float32 values
row-major. Written independently of the engine package on purpose: the
file format is the interface between the two components.
"""

import os
import struct
import tempfile
from contextlib import contextmanager

import numpy as np

MAGIC = b"XPE1"
VERSION = 1


@contextmanager
def atomic_write(path, mode="wb"):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_records(path, records):
    """records: iterable of (id, array) with arrays (F, D) or (D,)."""
    prepared = []
    dim = None
    for rec_id, arr in records:
        mat = np.asarray(arr, dtype=np.float32)
        if mat.ndim == 1:
            mat = mat[None, :]
        if mat.ndim != 2:
            raise ValueError(f"record '{rec_id}' is not a matrix")
        if dim is None:
            dim = mat.shape[1]
        elif mat.shape[1] != dim:
            raise ValueError(
                f"record '{rec_id}' has dimension {mat.shape[1]}, others have {dim}")
        prepared.append((str(rec_id), np.ascontiguousarray(mat)))
    if dim is None:
        dim = 0
    with atomic_write(path) as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, dim, len(prepared)))
        for rec_id, mat in prepared:
            encoded = rec_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", mat.shape[0]))
            fh.write(mat.tobytes(order="C"))
    return dim


def read_records(path):
    """Minimal reader used only by the exporter's own round-trip tests."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        version, dim, count = struct.unpack("<IIQ", fh.read(16))
        if version != VERSION:
            raise ValueError(f"unsupported version {version}")
        out = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            rec_id = fh.read(id_len).decode("utf-8")
            (f,) = struct.unpack("<I", fh.read(4))
            payload = fh.read(4 * f * dim)
            out[rec_id] = np.frombuffer(payload, dtype="<f4").reshape(f, dim).copy()
    return out, dim


def write_manifest(path, pairs):
    with atomic_write(path, "w") as fh:
        for text_id, video_id in pairs:
            fh.write(f"pair {text_id} {video_id}\n")
