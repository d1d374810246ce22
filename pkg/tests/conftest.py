import numpy as np
import pytest

from framepool.corpus import RetrievalCorpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_corpus(n=6, d=8, frames=3, seed=7):
    """Small random corpus with aligned pair structure; pair i's video has
    its text vector planted as frame 0 so retrieval is nontrivial but easy."""
    r = np.random.default_rng(seed)
    texts, videos, pairs = {}, {}, []
    for i in range(n):
        t = r.standard_normal(d).astype(np.float32)
        t /= np.linalg.norm(t)
        rows = [t + 0.05 * r.standard_normal(d).astype(np.float32)]
        for _ in range(frames - 1):
            v = r.standard_normal(d).astype(np.float32)
            rows.append(v / np.linalg.norm(v))
        tid, vid = f"t{i}", f"v{i}"
        texts[tid] = t
        videos[vid] = np.stack(rows)
        pairs.append((tid, vid))
    return RetrievalCorpus(texts=texts, videos=videos, pairs=pairs, d=d).validate()


@pytest.fixture
def small_corpus():
    return tiny_corpus()
