"""Ranking, retrieval metrics, the two-stage candidate/re-rank pipeline,
and the per-pair optimal-k analysis.

Ranking is deterministic: candidates sort by descending score with ties
broken by ascending id, and a query's rank is its ground truth's 1-based
position under that order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError
from .objective import cosine_sim
from .pooling import attention_pool_fwd, mean_pool, top_k_pool

RECALL_LEVELS = (1, 5, 10)


class MeanPoolMethod:
    """Text-agnostic mean pooling baseline."""

    name = "mean"
    needs_head = False

    def video_embedding(self, frames, text):
        return mean_pool(frames)


class TopKPoolMethod:
    """Top-k cosine frame selection; text-conditioned but parameter-free."""

    needs_head = False

    def __init__(self, k):
        if k < 1:
            raise ParameterError(f"k must be >= 1, got {k}")
        self.k = int(k)
        self.name = f"topk:{self.k}"

    def video_embedding(self, frames, text):
        pooled, _ = top_k_pool(frames, text, self.k)
        return pooled


class AttentionPoolMethod:
    """Learned text-conditioned attention pooling (eval mode)."""

    name = "attention"
    needs_head = True

    def __init__(self, head):
        self.head = head

    def video_embedding(self, frames, text):
        pooled, _ = attention_pool_fwd(self.head, frames, text, training=False)
        return pooled

    def trace(self, frames, text):
        _, trace = attention_pool_fwd(self.head, frames, text, training=False)
        return trace


def make_method(selector, head=None):
    """Parse a pooling selector: 'mean', 'topk:K', or 'attention'."""
    if selector == "mean":
        return MeanPoolMethod()
    if selector.startswith("topk:"):
        try:
            k = int(selector.split(":", 1)[1])
        except ValueError:
            raise ParameterError(f"bad top-k selector '{selector}'") from None
        return TopKPoolMethod(k)
    if selector in ("attention", "attn"):
        if head is None:
            raise ParameterError("attention pooling requires a checkpoint")
        return AttentionPoolMethod(head)
    raise ParameterError(f"unknown pooling method '{selector}'")


def _score_t2v(method, text, frames):
    return cosine_sim(text, method.video_embedding(frames, text))


def rank_t2v(method, query_text, videos):
    """Score a text query against every index video; returns
    [(video_id, score)] sorted by descending score, ties by ascending id."""
    if not videos:
        raise DataError("video index is empty")
    scored = [(vid, _score_t2v(method, query_text, frames))
              for vid, frames in videos.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def rank_v2t(method, query_frames, texts):
    """Score a video query against every index text. Each candidate text
    induces its own conditioned pooling of the query video."""
    if not texts:
        raise DataError("text index is empty")
    scored = [(tid, _score_t2v(method, text, query_frames))
              for tid, text in texts.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def rank_of(ordering, target_id):
    for pos, (item_id, _) in enumerate(ordering, 1):
        if item_id == target_id:
            return pos
    raise DataError(f"ground truth '{target_id}' missing from ranking")


@dataclass
class RankingReport:
    """Per-query ranks plus the usual aggregate retrieval metrics."""

    direction: str
    method: str
    records: list = field(default_factory=list)  # (query_id, gt_id, rank)
    index_size: int = 0

    @property
    def ranks(self):
        return [rank for _, _, rank in self.records]

    @property
    def recall_at(self):
        ranks = self.ranks
        return {k: sum(1 for r in ranks if r <= k) / len(ranks) for k in RECALL_LEVELS}

    @property
    def median_rank(self):
        return float(np.median(self.ranks))

    @property
    def mean_rank(self):
        return float(np.mean(self.ranks))

    def summary(self):
        r = self.recall_at
        return (f"{self.direction} {self.method} n={len(self.records)} "
                f"R@1={r[1]:.4f} R@5={r[5]:.4f} R@10={r[10]:.4f} "
                f"MdR={self.median_rank:.2f} MnR={self.mean_rank:.4f}")

    def to_records(self):
        for query_id, gt_id, rank in self.records:
            yield {"query_id": query_id, "gt_id": gt_id, "rank": rank}


def evaluate(method, corpus, direction="t2v", multi_caption_policy="separate",
             threads=1):
    """Rank every ground-truth pair's query against the full index.

    Each caption-video pair is a separate evaluation instance, so videos
    with several captions contribute several queries (the only supported
    multi-caption policy).
    """
    if multi_caption_policy != "separate":
        raise ParameterError(f"unknown multi-caption policy '{multi_caption_policy}'")
    if direction not in ("t2v", "v2t"):
        raise ParameterError(f"direction must be t2v or v2t, got '{direction}'")
    if not corpus.pairs:
        raise DataError("corpus has no ground-truth pairs")

    def run_instance(pair):
        tid, vid = pair
        if direction == "t2v":
            ordering = rank_t2v(method, corpus.texts[tid], corpus.videos)
            return (tid, vid, rank_of(ordering, vid))
        ordering = rank_v2t(method, corpus.videos[vid], corpus.texts)
        return (vid, tid, rank_of(ordering, tid))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_instance, corpus.pairs))
    else:
        records = [run_instance(pair) for pair in corpus.pairs]
    index_size = len(corpus.videos) if direction == "t2v" else len(corpus.texts)
    return RankingReport(direction=direction, method=method.name,
                         records=records, index_size=index_size)


@dataclass
class TwoStageConfig:
    """Candidate generation by mean pooling, then attention re-ranking of
    the top candidate_count videos."""

    candidate_count: int
    first_stage: str = "mean"

    def __post_init__(self):
        if self.candidate_count < 1:
            raise ParameterError("candidate_count must be >= 1")
        if self.first_stage != "mean":
            raise ParameterError(f"unsupported first stage '{self.first_stage}'")


def two_stage_rank(head, query_text, videos, cfg, mean_embeddings=None):
    """Stage 1 ranks by cosine against precomputed mean-pooled embeddings
    and keeps the top P; stage 2 re-ranks only those P with the attention
    head. Returns the stage-2 ordering followed by the remaining stage-1
    ordering, so the result is always a total ordering of the index.
    """
    if cfg.candidate_count > len(videos):
        raise ParameterError(
            f"candidate_count {cfg.candidate_count} exceeds index size {len(videos)}")
    if mean_embeddings is None:
        mean_embeddings = {vid: mean_pool(frames) for vid, frames in videos.items()}
    stage1 = [(vid, cosine_sim(query_text, emb)) for vid, emb in mean_embeddings.items()]
    stage1.sort(key=lambda item: (-item[1], item[0]))
    candidates = stage1[:cfg.candidate_count]
    rest = stage1[cfg.candidate_count:]
    method = AttentionPoolMethod(head)
    reranked = [(vid, _score_t2v(method, query_text, videos[vid]))
                for vid, _ in candidates]
    reranked.sort(key=lambda item: (-item[1], item[0]))
    return reranked + rest


def evaluate_two_stage(head, corpus, cfg, threads=1):
    """t2v evaluation through the two-stage pipeline."""
    if not corpus.pairs:
        raise DataError("corpus has no ground-truth pairs")
    mean_embeddings = {vid: mean_pool(frames) for vid, frames in corpus.videos.items()}

    def run_instance(pair):
        tid, vid = pair
        ordering = two_stage_rank(head, corpus.texts[tid], corpus.videos, cfg,
                                  mean_embeddings=mean_embeddings)
        return (tid, vid, rank_of(ordering, vid))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_instance, corpus.pairs))
    else:
        records = [run_instance(pair) for pair in corpus.pairs]
    return RankingReport(direction="t2v", method=f"two-stage:{cfg.candidate_count}",
                         records=records, index_size=len(corpus.videos))


def optimal_k_histogram(corpus):
    """For each ground-truth pair, the k in 1..F whose top-k pooled video
    embedding is most cosine-similar to the text (ties to the smallest k).
    Returns {k: pair count}; needs no trained head."""
    if not corpus.pairs:
        raise DataError("corpus has no ground-truth pairs")
    histogram = {}
    for tid, vid in corpus.pairs:
        text = corpus.texts[tid]
        frames = corpus.videos[vid]
        best_k, best_s = None, None
        for k in range(1, frames.shape[0] + 1):
            pooled, _ = top_k_pool(frames, text, k)
            s = cosine_sim(text, pooled)
            if best_s is None or s > best_s:
                best_k, best_s = k, s
        histogram[best_k] = histogram.get(best_k, 0) + 1
    return dict(sorted(histogram.items()))
