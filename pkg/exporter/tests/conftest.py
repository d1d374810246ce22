import os

import cv2
import numpy as np
import pytest


def synth_frames(seed, count, height=96, width=128):
    """Distinct structured frames: a moving bright square over a seeded
    background, so different videos embed differently."""
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 120, (height, width, 3), dtype=np.uint8)
    frames = []
    for i in range(count):
        frame = base.copy()
        x = (i * 17 + seed * 5) % (width - 30)
        y = (i * 11) % (height - 30)
        frame[y:y + 30, x:x + 30] = 200 + (seed % 55)
        frames.append(frame)
    return frames


def write_video(path, frames, fps=5.0):
    height, width = frames[0].shape[:2]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"),
                             fps, (width, height))
    assert writer.isOpened()
    for frame in frames:
        writer.write(frame)
    writer.release()


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    """Four small videos plus a caption file (one video gets two captions)."""
    root = tmp_path_factory.mktemp("videos")
    names = []
    for i in range(4):
        name = f"clip{i}.avi"
        write_video(root / name, synth_frames(seed=i + 1, count=10 + 3 * i))
        names.append(name)
    captions = root / "captions.tsv"
    lines = [f"{names[i]}\ta sample scene number {i} with motion" for i in range(4)]
    lines.append(f"{names[0]}\tanother caption for the first clip")
    captions.write_text("\n".join(lines) + "\n")
    return {"dir": str(root), "captions": str(captions), "names": names}
