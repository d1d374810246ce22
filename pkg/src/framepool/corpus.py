"""Corpus ingestion, binary embedding/checkpoint formats, frame subsampling,
and the scene-transition augmentation used by the robustness experiments.

Embedding files use the XPE1 layout (little-endian): magic "XPE1",
u32 version=1, u32 D, u64 record count, then per record u16 id length,
UTF-8 id bytes, u32 F, and F*D float32 values row-major. Text records
carry F=1. Checkpoints use the XPC1 layout described in save_checkpoint.
"""

import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, DataError, FormatError, ParameterError
from .numerics import LayerNormParams
from .objective import LogitScale
from .pooling import AttentionPoolHead
from .validation import check_finite, check_nonzero_rows

XPE_MAGIC = b"XPE1"
XPC_MAGIC = b"XPC1"
FORMAT_VERSION = 1


@dataclass
class RetrievalCorpus:
    """Aligned caption embeddings, per-video frame matrices, and ground-truth
    pairs. Videos may have different frame counts; all share dimension d."""

    texts: dict
    videos: dict
    pairs: list
    d: int

    def validate(self):
        for tid, vec in self.texts.items():
            if vec.ndim != 1 or vec.shape[0] != self.d:
                raise DataError(f"text '{tid}' has width {vec.shape}, expected ({self.d},)")
            check_finite(vec, f"text '{tid}'")
            check_nonzero_rows(vec[None, :], f"text '{tid}'")
        for vid, mat in self.videos.items():
            if mat.ndim != 2 or mat.shape[1] != self.d:
                raise DataError(f"video '{vid}' has shape {mat.shape}, expected (F, {self.d})")
            if mat.shape[0] < 1:
                raise DataError(f"video '{vid}' has no frames")
            check_finite(mat, f"video '{vid}'")
            check_nonzero_rows(mat, f"video '{vid}'")
        for tid, vid in self.pairs:
            if tid not in self.texts:
                raise DataError(f"pair references unknown text id '{tid}'")
            if vid not in self.videos:
                raise DataError(f"pair references unknown video id '{vid}'")
        return self

    def subsampled(self, target_f):
        """Corpus view with every video subsampled to target_f frames
        (None keeps all frames)."""
        if target_f is None:
            return self
        videos = {vid: subsample_frames(mat, target_f) for vid, mat in self.videos.items()}
        return RetrievalCorpus(self.texts, videos, list(self.pairs), self.d)


@dataclass
class AugmentationSpec:
    """Scene-transition injection: how many donor videos to splice into
    each host video, and the seeds for donor choice and insertion points."""

    num_transitions: int
    donor_selection_seed: int = 0
    insertion_seed: int = 1

    def __post_init__(self):
        if self.num_transitions < 0:
            raise ParameterError("num_transitions must be >= 0")


@contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temp file in the target directory, rename on success."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
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


def write_embeddings(path, records):
    """Write (id, matrix) records in XPE1 format. Text embeddings should be
    passed as (1, D) or (D,) arrays; everything is stored as float32."""
    items = list(records.items()) if isinstance(records, dict) else list(records)
    prepared = []
    d = None
    for rec_id, mat in items:
        arr = np.asarray(mat, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise DataError(f"record '{rec_id}' is not a matrix")
        if d is None:
            d = arr.shape[1]
        elif arr.shape[1] != d:
            raise DataError(
                f"record '{rec_id}' has dimension {arr.shape[1]}, others have {d}")
        prepared.append((str(rec_id), np.ascontiguousarray(arr)))
    if d is None:
        d = 0
    with atomic_write(path) as fh:
        fh.write(XPE_MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, d, len(prepared)))
        for rec_id, arr in prepared:
            id_bytes = rec_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<I", arr.shape[0]))
            fh.write(arr.tobytes(order="C"))


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CorruptionError(f"truncated while reading {what}", fh.tell() - len(data))
    return data


def read_embeddings(path):
    """Read an XPE1 file. Returns (records: id -> (F, D) float32 array, d)."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise DataError(f"embedding file not found: {path}") from None
    with fh:
        magic = fh.read(4)
        if magic != XPE_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {XPE_MAGIC!r}")
        version, d, count = struct.unpack("<IIQ", _read_exact(fh, 16, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        records = {}
        for idx in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {idx} id length"))
            rec_id = _read_exact(fh, id_len, f"record {idx} id").decode("utf-8")
            (f,) = struct.unpack("<I", _read_exact(fh, 4, f"record '{rec_id}' frame count"))
            payload = _read_exact(fh, 4 * f * d, f"record '{rec_id}' payload")
            arr = np.frombuffer(payload, dtype="<f4").reshape(f, d).copy()
            if rec_id in records:
                raise DataError(f"duplicate record id '{rec_id}'")
            records[rec_id] = arr
        trailing = fh.read(1)
        if trailing:
            raise CorruptionError("trailing bytes after declared records", fh.tell() - 1)
    return records, d


def read_manifest(path):
    """Parse `pair <text_id> <video_id>` lines; '#' lines and blanks skipped."""
    pairs = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"manifest file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 3 or tokens[0] != "pair":
                raise DataError(f"{path}:{lineno}: expected 'pair <text_id> <video_id>'")
            pairs.append((tokens[1], tokens[2]))
    return pairs


def write_manifest(path, pairs):
    with atomic_write(path, "w") as fh:
        for tid, vid in pairs:
            fh.write(f"pair {tid} {vid}\n")


def load_corpus(texts_path, videos_path, manifest_path):
    """Assemble and validate a RetrievalCorpus from XPE1 files + manifest."""
    text_records, d_t = read_embeddings(texts_path)
    video_records, d_v = read_embeddings(videos_path)
    if text_records and video_records and d_t != d_v:
        raise DataError(f"text dimension {d_t} != video dimension {d_v}")
    texts = {}
    for tid, mat in text_records.items():
        if mat.shape[0] != 1:
            raise DataError(f"text record '{tid}' has F={mat.shape[0]}, expected 1")
        texts[tid] = mat[0]
    pairs = read_manifest(manifest_path)
    corpus = RetrievalCorpus(texts=texts, videos=video_records, pairs=pairs, d=d_t)
    return corpus.validate()


def subsample_frames(frames, target_f):
    """Uniformly spaced frame selection over [0, F-1].

    Index rule: floor(i*(F-1)/(target_f-1) + 0.5) (round half up), index 0
    for target_f == 1; target_f >= F returns all frames unchanged.
    """
    frames = np.asarray(frames)
    f = frames.shape[0]
    if f < 1 or target_f < 1:
        raise ParameterError("frame counts must be >= 1")
    if target_f >= f:
        return frames
    if target_f == 1:
        return frames[:1]
    idx = np.floor(np.arange(target_f) * (f - 1) / (target_f - 1) + 0.5).astype(np.int64)
    return frames[idx]


def inject_transitions(corpus, spec):
    """Splice donor videos into each host video to simulate scene cuts.

    For every host video, `num_transitions` donors are drawn uniformly from
    the other videos (with replacement) and each donor's full frame block is
    inserted at an interior boundary of the host sequence, chosen
    independently. Host frames keep their values and relative order; texts
    and pairs are untouched. Pure function: returns a new corpus.
    """
    if spec.num_transitions == 0:
        return RetrievalCorpus(dict(corpus.texts), dict(corpus.videos),
                               list(corpus.pairs), corpus.d)
    ids = list(corpus.videos.keys())
    if len(ids) < 2:
        raise DataError("need at least 2 videos to inject transitions")
    donor_rng = np.random.Generator(np.random.PCG64(spec.donor_selection_seed))
    insert_rng = np.random.Generator(np.random.PCG64(spec.insertion_seed))
    augmented = {}
    for host_id in ids:
        host = corpus.videos[host_id]
        others = [v for v in ids if v != host_id]
        donor_ids = [others[int(donor_rng.integers(0, len(others)))]
                     for _ in range(spec.num_transitions)]
        host_f = host.shape[0]
        insertions = []
        for order, donor_id in enumerate(donor_ids):
            if host_f >= 2:
                pos = int(insert_rng.integers(1, host_f))
            else:
                pos = int(insert_rng.integers(0, 2))
            insertions.append((pos, order, corpus.videos[donor_id]))
        insertions.sort(key=lambda item: (item[0], item[1]))
        chunks = []
        cursor = 0
        for pos, _, donor in insertions:
            chunks.append(host[cursor:pos])
            chunks.append(donor)
            cursor = pos
        chunks.append(host[cursor:])
        augmented[host_id] = np.concatenate(chunks, axis=0)
    return RetrievalCorpus(dict(corpus.texts), augmented, list(corpus.pairs), corpus.d)


def _write_tensor(fh, name, arr):
    arr2 = np.asarray(arr, dtype=np.float32)
    if arr2.ndim == 1:
        arr2 = arr2[None, :]
    name_bytes = name.encode("utf-8")
    fh.write(struct.pack("<H", len(name_bytes)))
    fh.write(name_bytes)
    fh.write(struct.pack("<II", arr2.shape[0], arr2.shape[1]))
    fh.write(np.ascontiguousarray(arr2).tobytes(order="C"))


def save_checkpoint(head, scale, path):
    """XPC1 layout: magic "XPC1", u32 version, u32 D, u32 D_p,
    f32 dropout_rate, f32 log_lambda, then named tensors as
    (u16 name length, name, u32 rows, u32 cols, float32 payload)."""
    with atomic_write(path) as fh:
        fh.write(XPC_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, head.d, head.d_p))
        fh.write(struct.pack("<ff", np.float32(head.dropout_rate),
                             np.float32(scale.log_lambda)))
        tensors = head.tensors()
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            _write_tensor(fh, name, arr)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (head, scale)."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise DataError(f"checkpoint file not found: {path}") from None
    with fh:
        magic = fh.read(4)
        if magic != XPC_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {XPC_MAGIC!r}")
        version, d, d_p = struct.unpack("<III", _read_exact(fh, 12, "checkpoint header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        dropout_rate, log_lambda = struct.unpack("<ff", _read_exact(fh, 8, "scalars"))
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for idx in range(n_tensors):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"tensor {idx} name length"))
            name = _read_exact(fh, name_len, f"tensor {idx} name").decode("utf-8")
            rows, cols = struct.unpack("<II", _read_exact(fh, 8, f"tensor '{name}' shape"))
            payload = _read_exact(fh, 4 * rows * cols, f"tensor '{name}' payload")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
        trailing = fh.read(1)
        if trailing:
            raise CorruptionError("trailing bytes after tensors", fh.tell() - 1)

    def mat(name, rows, cols):
        arr = tensors.get(name)
        if arr is None or arr.shape != (rows, cols):
            raise FormatError(f"checkpoint missing or misshapen tensor '{name}'")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"checkpoint tensor '{name}' has non-finite values")
        return arr

    def vec(name, n):
        return mat(name, 1, n)[0]

    def ln(prefix, n):
        return LayerNormParams(vec(f"{prefix}.gain", n), vec(f"{prefix}.bias", n))

    head = AttentionPoolHead(
        w_q=mat("w_q", d, d_p), b_q=vec("b_q", d_p),
        w_k=mat("w_k", d, d_p), b_k=vec("b_k", d_p),
        w_v=mat("w_v", d, d_p), b_v=vec("b_v", d_p),
        w_o=mat("w_o", d_p, d), b_o=vec("b_o", d),
        ln_text=ln("ln_text", d), ln_frames=ln("ln_frames", d),
        ln_attn_out=ln("ln_attn_out", d), ln_final=ln("ln_final", d),
        fc_w=mat("fc_w", d, d), fc_b=vec("fc_b", d),
        dropout_rate=float(dropout_rate), d=d, d_p=d_p,
    )
    return head, LogitScale(np.float32(log_lambda))
