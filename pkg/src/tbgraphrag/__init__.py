"""Hybrid GraphRAG engine and evaluation harness for clinical TB question
answering: corpus ingestion, instruction-dataset construction, BM25 + dense
+ knowledge-graph retrieval, pluggable LLM endpoints, and the full metric
battery with report rendering.
"""

from .embeddings import HashedTrigramEmbedder
from .index import Bm25Index, DenseIndex
from .graph import KnowledgeGraph, KnowledgeGraphBuilder
from .retrieve import HybridRetriever, RetrievalConfig, RetrievalResult

__version__ = "0.1.0"

__all__ = [
    "Bm25Index",
    "DenseIndex",
    "HashedTrigramEmbedder",
    "HybridRetriever",
    "KnowledgeGraph",
    "KnowledgeGraphBuilder",
    "RetrievalConfig",
    "RetrievalResult",
    "__version__",
]
