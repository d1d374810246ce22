"""Synthetic corpora with planted text-frame alignment.

Each caption embedding is a random unit vector; its paired video carries
`relevant_frames` noisy copies of that vector plus distractor frames, so
ground truth is known by construction. Distractors either follow other
captions' directions ("other", which actively confuses text-agnostic
pooling) or are independent random vectors ("random").
"""

import numpy as np

from .corpus import RetrievalCorpus
from .errors import ParameterError
from .seeding import generator


def _unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.sqrt((rows * rows).sum(axis=1, keepdims=True))


def make_planted_corpus(n_pairs=64, d=16, relevant_frames=2, distractor_frames=2,
                        noise=0.08, seed=0, distractors="other"):
    """Corpus of n_pairs captions, one video each, with known alignment."""
    if relevant_frames < 1:
        raise ParameterError("relevant_frames must be >= 1")
    if distractors not in ("other", "random"):
        raise ParameterError(f"unknown distractor mode '{distractors}'")
    rng = generator(seed, "planted")
    texts_mat = _unit_rows(rng, n_pairs, d).astype(np.float32)

    texts = {}
    videos = {}
    pairs = []
    for i in range(n_pairs):
        tid = f"t{i:04d}"
        vid = f"v{i:04d}"
        rows = []
        for _ in range(relevant_frames):
            rows.append(texts_mat[i] + noise * rng.standard_normal(d).astype(np.float32))
        for _ in range(distractor_frames):
            if distractors == "other" and n_pairs > 1:
                j = int(rng.integers(0, n_pairs - 1))
                j = j if j < i else j + 1
                base = texts_mat[j]
            else:
                base = _unit_rows(rng, 1, d)[0].astype(np.float32)
            rows.append(base + noise * rng.standard_normal(d).astype(np.float32))
        frames = np.stack(rows).astype(np.float32)
        frames = frames[rng.permutation(frames.shape[0])]
        texts[tid] = texts_mat[i]
        videos[vid] = frames
        pairs.append((tid, vid))
    return RetrievalCorpus(texts=texts, videos=videos, pairs=pairs, d=d).validate()
