"""Joint text-image encoders with a 512-wide embedding space.

The default "seeded-projection" backbone is a deterministic stand-in for a
pretrained model: captions embed via hashed token vectors, frames via a
fixed random projection of a downsampled grayscale image. It needs no
weights or network access, is deterministic in eval mode, and keeps the
full export pipeline (decode, sample, resize, encode, serialize) honest.
The "clip" backbone routes to a real pretrained joint model when its
weights are available locally.
"""

import zlib

import numpy as np

EMBED_DIM = 512
_IMG_POOL = 16  # frames downsample to 16x16 grayscale before projection
_PROJECTION_SEED = 0xC0FFEE


class SeededProjectionBackbone:
    """Deterministic text/image encoder; no learned weights."""

    name = "seeded-projection"
    embedding_dim = EMBED_DIM

    def __init__(self):
        rng = np.random.Generator(np.random.PCG64(_PROJECTION_SEED))
        self._image_proj = rng.standard_normal(
            (_IMG_POOL * _IMG_POOL, EMBED_DIM)).astype(np.float32)

    @staticmethod
    def _token_vector(token):
        seed = zlib.crc32(token.encode("utf-8"))
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.standard_normal(EMBED_DIM).astype(np.float32)

    def encode_texts(self, captions):
        out = np.zeros((len(captions), EMBED_DIM), dtype=np.float32)
        for i, caption in enumerate(captions):
            tokens = [t for t in "".join(
                c.lower() if c.isalnum() else " " for c in caption).split() if t]
            if not tokens:
                raise ValueError(f"caption {i} has no tokens: {caption!r}")
            acc = np.zeros(EMBED_DIM, dtype=np.float32)
            for token in tokens:
                acc += self._token_vector(token)
            out[i] = acc / len(tokens)
        return out

    def encode_images(self, frames):
        """frames: (N, H, W, 3) uint8 RGB -> (N, 512) float32."""
        frames = np.asarray(frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"expected (N, H, W, 3) frames, got {frames.shape}")
        n, h, w, _ = frames.shape
        gray = frames.astype(np.float32).mean(axis=3) / 255.0
        # average-pool onto a fixed 16x16 grid
        ys = np.linspace(0, h, _IMG_POOL + 1).astype(int)
        xs = np.linspace(0, w, _IMG_POOL + 1).astype(int)
        pooled = np.zeros((n, _IMG_POOL, _IMG_POOL), dtype=np.float32)
        for i in range(_IMG_POOL):
            for j in range(_IMG_POOL):
                block = gray[:, ys[i]:max(ys[i + 1], ys[i] + 1),
                             xs[j]:max(xs[j + 1], xs[j] + 1)]
                pooled[:, i, j] = block.mean(axis=(1, 2))
        flat = pooled.reshape(n, -1)
        return np.einsum("np,pd->nd", flat, self._image_proj)


class ClipBackbone:
    """Pretrained joint text-image model via transformers; requires local
    weights (this environment has no model hub access)."""

    name = "clip-vit-base-patch32"
    embedding_dim = EMBED_DIM

    def __init__(self, model_id="openai/clip-vit-base-patch32"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "the clip backbone needs torch and transformers installed") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise RuntimeError(
                f"could not load pretrained weights for '{model_id}'; "
                "use --backbone seeded-projection in offline environments") from exc
        self._torch = torch
        self._model.eval()

    def encode_texts(self, captions):
        with self._torch.no_grad():
            inputs = self._processor(text=list(captions), return_tensors="pt",
                                     padding=True, truncation=True)
            features = self._model.get_text_features(**inputs)
        return features.cpu().numpy().astype(np.float32)

    def encode_images(self, frames):
        with self._torch.no_grad():
            inputs = self._processor(images=[f for f in frames], return_tensors="pt")
            features = self._model.get_image_features(**inputs)
        return features.cpu().numpy().astype(np.float32)


def make_backbone(name):
    if name in ("seeded-projection", "default"):
        return SeededProjectionBackbone()
    if name in ("clip", "clip-vit-base-patch32"):
        return ClipBackbone()
    raise ValueError(f"unknown backbone '{name}'")
