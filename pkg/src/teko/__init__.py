"""Knowledge-augmented heterogeneous graph attention for text-rich networks."""

from .config import PipelineConfig, load_config
from .corpus_io import Document, DocumentSet, SplitSpec, TextRichGraph, load_graph, make_splits
from .entity_linking import AnnotationSet, LinkerLexicon, Mention, annotate, filter_mentions
from .evaluation import MetricsReport, classification_metrics, clustering_metrics, kmeans
from .hga_model import GCN, HeteroGraphAttention, ModelParams, gcn_forward
from .knowledge_embed import EntityFeatures, KnowledgeBase, fuse, train_lda, train_transe
from .semantic_graph import HeteroGraph, assemble, build_entity_edges
from .training import grad_check, supervised_loss, train, unsupervised_loss

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet",
    "Document",
    "DocumentSet",
    "EntityFeatures",
    "GCN",
    "HeteroGraph",
    "HeteroGraphAttention",
    "KnowledgeBase",
    "LinkerLexicon",
    "Mention",
    "MetricsReport",
    "ModelParams",
    "PipelineConfig",
    "SplitSpec",
    "TextRichGraph",
    "annotate",
    "assemble",
    "build_entity_edges",
    "classification_metrics",
    "clustering_metrics",
    "filter_mentions",
    "fuse",
    "gcn_forward",
    "grad_check",
    "kmeans",
    "load_config",
    "load_graph",
    "make_splits",
    "supervised_loss",
    "train",
    "train_lda",
    "train_transe",
    "unsupervised_loss",
]
