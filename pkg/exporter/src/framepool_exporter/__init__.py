"""Embedding exporter: decodes videos, samples frames, and writes caption
and per-frame embeddings in the retrieval engine's XPE1 wire format."""

from .backbones import make_backbone
from .export import ExportJob, ExportResult, export
from .sampling import uniform_indices

__version__ = "0.1.0"
