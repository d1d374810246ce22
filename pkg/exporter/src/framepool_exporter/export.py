"""The export pipeline: decode each video, uniformly sample frames, resize
to 224x224, encode frames and captions, and write XPE1 files plus the pair
manifest. Embeddings are written un-normalized; the engine's cosine scoring
normalizes explicitly."""

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .backbones import make_backbone
from .sampling import uniform_indices
from .xpe import write_manifest, write_records

FRAME_SIZE = 224


@dataclass
class ExportJob:
    """One export run: a caption file of `<video filename>\\t<caption>` lines
    resolved against dataset_dir, a frame budget, and output paths."""

    dataset_dir: str
    caption_file: str
    output_dir: str
    frames_per_video: int = 12
    backbone: str = "seeded-projection"

    def __post_init__(self):
        if self.frames_per_video < 1:
            raise ValueError("frames_per_video must be >= 1")

    @property
    def texts_path(self):
        return os.path.join(self.output_dir, "texts.xpe")

    @property
    def videos_path(self):
        return os.path.join(self.output_dir, "videos.xpe")

    @property
    def manifest_path(self):
        return os.path.join(self.output_dir, "pairs.manifest")


@dataclass
class ExportResult:
    texts: int = 0
    videos: int = 0
    pairs: int = 0
    skipped: list = field(default_factory=list)
    dimension: int = 0

    def summary(self):
        return (f"exported {self.videos} videos, {self.texts} captions, "
                f"{self.pairs} pairs, D={self.dimension}; "
                f"skipped {len(self.skipped)} undecodable video(s)")


def read_caption_file(path):
    """Returns [(video_filename, caption)] keeping file order."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected '<video>\\t<caption>'")
            video, caption = line.split("\t", 1)
            video = video.strip()
            caption = caption.strip()
            if not video or not caption:
                raise ValueError(f"{path}:{lineno}: empty video name or caption")
            entries.append((video, caption))
    return entries


def decode_video(path):
    """All frames of a video as (F, H, W, 3) uint8 RGB, or None if the file
    cannot be decoded or has no frames."""
    capture = cv2.VideoCapture(path)
    if not capture.isOpened():
        return None
    frames = []
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    capture.release()
    if not frames:
        return None
    return np.stack(frames)


def sample_and_resize(frames, target):
    """Uniform index selection (engine rule) then resize to 224x224."""
    indices = uniform_indices(frames.shape[0], target)
    selected = frames[indices]
    resized = np.stack([
        cv2.resize(frame, (FRAME_SIZE, FRAME_SIZE), interpolation=cv2.INTER_AREA)
        for frame in selected])
    return resized


def export(job):
    """Run the full export; returns an ExportResult. Undecodable videos are
    skipped and listed; a backbone emitting an unexpected dimension aborts."""
    backbone = make_backbone(job.backbone)
    entries = read_caption_file(job.caption_file)
    os.makedirs(job.output_dir, exist_ok=True)

    by_video = {}
    for video, caption in entries:
        by_video.setdefault(video, []).append(caption)

    result = ExportResult(dimension=backbone.embedding_dim)
    video_records = []
    text_records = []
    pairs = []
    for video_name in by_video:
        path = os.path.join(job.dataset_dir, video_name)
        frames = decode_video(path)
        if frames is None:
            result.skipped.append(video_name)
            continue
        prepared = sample_and_resize(frames, job.frames_per_video)
        embeddings = backbone.encode_images(prepared)
        if embeddings.shape != (prepared.shape[0], backbone.embedding_dim):
            raise ValueError(
                f"backbone returned {embeddings.shape}, expected "
                f"({prepared.shape[0]}, {backbone.embedding_dim})")
        video_id = os.path.splitext(video_name)[0]
        video_records.append((video_id, embeddings))
        for n, caption in enumerate(by_video[video_name]):
            text_id = f"{video_id}#{n}"
            vec = backbone.encode_texts([caption])[0]
            if vec.shape != (backbone.embedding_dim,):
                raise ValueError(
                    f"backbone returned text width {vec.shape}, expected "
                    f"({backbone.embedding_dim},)")
            text_records.append((text_id, vec))
            pairs.append((text_id, video_id))

    write_records(job.videos_path, video_records)
    write_records(job.texts_path, text_records)
    write_manifest(job.manifest_path, pairs)
    result.videos = len(video_records)
    result.texts = len(text_records)
    result.pairs = len(pairs)
    return result
