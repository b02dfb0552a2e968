"""In-memory pipeline stages shared by the CLI, sweeps and experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .corpus_io import SplitSpec, TextRichGraph, make_splits
from .entity_linking import AnnotationSet, LinkerLexicon, Mention, annotate, filter_mentions
from .evaluation import MetricsReport, evaluate_outputs
from .hga_model import GCN, HeteroGraphAttention, ModelParams
from .knowledge_embed import (
    EntityFeatures,
    KnowledgeBase,
    LDAConfig,
    TopicModelState,
    TransEConfig,
    TransEState,
    entity_features,
    fuse,
    train_lda,
    train_transe,
)
from .semantic_graph import HeteroGraph, assemble, build_entity_edges
from .training import History, OptimizerConfig, SupervisedTask, UnsupervisedTask, sample_pairs, \
    train

log = logging.getLogger(__name__)


def link(docs, lexicon: LinkerLexicon | None = None, mentions: list[Mention] | None = None,
         delta_tag: float = 0.2) -> AnnotationSet:
    if mentions is None:
        if lexicon is None:
            raise ValueError("need a lexicon or precomputed mentions")
        mentions = annotate(docs, lexicon)
    return filter_mentions(mentions, delta_tag)


@dataclass
class KnowledgeStage:
    transe: TransEState | None
    lda: TopicModelState | None
    features: EntityFeatures


def train_knowledge(kb: KnowledgeBase, ann: AnnotationSet, cfg: PipelineConfig) -> KnowledgeStage:
    """TransE and LDA over the knowledge base, looked up for the linked entities."""
    ents = ann.entity_ids
    if cfg.hyper["head_filter"]:
        kb = kb.head_filtered(ents)
    seed = cfg.hyper["kb_seed"]
    transe = None
    if kb.triplets:
        transe = train_transe(kb, TransEConfig(
            dim=cfg.hyper["dim"], margin=cfg.hyper["margin"], lr=cfg.hyper["transe_lr"],
            epochs=cfg.hyper["transe_epochs"], batch_size=cfg.hyper["transe_batch"], seed=seed))
    else:
        log.warning("no triplets survive filtering; triplet vectors fall back to random")
    lda = None
    if any(kb.descriptions.get(e, "").strip() for e in kb.descriptions):
        lda = train_lda(kb, LDAConfig(topics=cfg.topics, alpha=cfg.hyper["lda_alpha"],
                                      beta=cfg.hyper["lda_beta"], iters=cfg.hyper["lda_iters"],
                                      seed=seed))
    feats = entity_features(ents, transe, lda, cfg.hyper["dim"], seed=seed, topics=cfg.topics)
    return KnowledgeStage(transe, lda, feats)


def similarity_embeddings(feats: EntityFeatures, cfg: PipelineConfig) -> dict[str, np.ndarray]:
    """Initial entity embeddings used for the entity-entity edges."""
    if cfg.hyper["similarity_source"] == "triplet":
        M = feats.triplet
    else:
        gate = np.zeros(feats.triplet.shape[1])
        M = fuse(feats.triplet, feats.textual, gate, cfg.fusion_mode)
    return {e: M[i] for i, e in enumerate(feats.entity_ids)}


def build_graph(text_graph: TextRichGraph, ann: AnnotationSet, feats: EntityFeatures,
                cfg: PipelineConfig) -> HeteroGraph:
    emb = similarity_embeddings(feats, cfg)
    e_w = build_entity_edges(emb, cfg.hyper["delta_sim"]) if len(emb) >= 2 else frozenset()
    return assemble(text_graph, ann, e_w)


def align_features(graph: HeteroGraph, text_graph: TextRichGraph, feats: EntityFeatures | None):
    """Reorder document rows and entity rows to the graph's canonical order."""
    rows = [text_graph.documents.index(d) for d in graph.doc_ids]
    X = text_graph.attributes[rows]
    if feats is None or graph.n_ent == 0:
        return X, feats
    pos = {e: i for i, e in enumerate(feats.entity_ids)}
    idx = [pos[e] for e in graph.ent_ids]
    return X, EntityFeatures(list(graph.ent_ids), feats.triplet[idx], feats.textual[idx])


def node_labels(graph: HeteroGraph, text_graph: TextRichGraph) -> np.ndarray:
    """Label per output row; entities and unlabeled documents get -1."""
    out = np.full(graph.n_nodes, -1, dtype=np.int64)
    for i, d in enumerate(graph.doc_ids):
        lab = text_graph.documents.get(d).label
        if lab is not None:
            out[i] = lab
    return out


def build_model(graph: HeteroGraph, text_graph: TextRichGraph, feats: EntityFeatures | None,
                cfg: PipelineConfig, model_kind: str | None = None, fusion_mode: str | None = None):
    kind = model_kind or cfg.model
    X, ef = align_features(graph, text_graph, feats)
    h = cfg.hyper
    if cfg.objective == "supervised":
        out_dim, head = max(text_graph.class_count, 2), "softmax"
    else:
        out_dim, head = h["embed_dim"] or h["hidden"], "linear"
    if kind == "gcn":
        return GCN(graph, X, hidden=h["hidden"], out_dim=out_dim, layers=h["layers"],
                   leaky_slope=h["leaky_slope"], dropout=h["dropout"], head=head)
    if ef is None:
        ef = EntityFeatures([], np.zeros((0, h["dim"])), np.zeros((0, cfg.topics)))
    return HeteroGraphAttention(graph, X, ef, hidden=h["hidden"], out_dim=out_dim,
                                layers=h["layers"], leaky_slope=h["leaky_slope"],
                                dropout=h["dropout"], fusion_mode=fusion_mode or cfg.fusion_mode,
                                alpha_placement=h["alpha_placement"], head=head,
                                standardize=h["entity_standardize"])


def split_indices(graph: HeteroGraph, split: SplitSpec):
    pos = {d: i for i, d in enumerate(graph.doc_ids)}
    return tuple(np.array([pos[d] for d in ids], dtype=np.int64)
                 for ids in (split.train_ids, split.val_ids, split.test_ids))


def optimizer_config(cfg: PipelineConfig, seed: int) -> OptimizerConfig:
    h = cfg.hyper
    return OptimizerConfig(learning_rate=h["lr"], weight_decay=h["weight_decay"],
                           epochs=h["epochs"], patience=h["patience"], seed=seed)


def make_task(graph, labels, split: SplitSpec | None, cfg: PipelineConfig, seed: int):
    if cfg.objective == "supervised":
        tr, va, _ = split_indices(graph, split)
        return SupervisedTask(labels, tr, va)
    pairs = sample_pairs(graph, cfg.hyper["neg_ratio"], seed)
    return UnsupervisedTask(pairs)


@dataclass
class FitResult:
    params: ModelParams
    history: History
    split: SplitSpec | None
    output: np.ndarray


def fit(model, graph, text_graph, cfg: PipelineConfig, seed: int,
        split: SplitSpec | None = None) -> FitResult:
    """Initialize with ``seed``, train, and return the best-epoch output."""
    labels = node_labels(graph, text_graph)
    if split is None and cfg.objective == "supervised":
        split = make_splits(text_graph.documents, cfg.hyper["split_ratios"], seed)
    task = make_task(graph, labels, split, cfg, seed)
    params = model.init_params(seed)
    params, history = train(model, params, task, optimizer_config(cfg, seed))
    return FitResult(params, history, split, model.forward(params).output)


def eval_indices(graph, text_graph, split: SplitSpec | None):
    if split is not None:
        return split_indices(graph, split)[2]
    labels = node_labels(graph, text_graph)
    return np.flatnonzero(labels[: graph.n_doc] >= 0)


def score(result: FitResult, graph, text_graph, cfg: PipelineConfig, seed: int) -> dict:
    labels = node_labels(graph, text_graph)
    mode = "classify" if cfg.objective == "supervised" else "cluster"
    idx = eval_indices(graph, text_graph, result.split)
    return evaluate_outputs(result.output, labels, idx, mode, text_graph.class_count, seed,
                            cfg.hyper["kmeans_restarts"])


def run_variant(text_graph: TextRichGraph, kb: KnowledgeBase, cfg: PipelineConfig, *,
                lexicon=None, mentions=None, variant: str = "teko", seeds=None,
                cache: dict | None = None, split: SplitSpec | None = None) -> MetricsReport:
    """Link, embed, assemble, train and score one model variant over seeds.

    ``variant`` is ``"gcn"``, ``"teko"`` (the configured fusion mode) or a
    fusion mode name. ``cache`` memoizes the knowledge stage across calls.
    ``split`` fixes the labeled split; by default each seed draws its own.
    """
    seeds = cfg.seeds if seeds is None else seeds
    mode = "classify" if cfg.objective == "supervised" else "cluster"
    report = MetricsReport(mode)
    if variant == "gcn":
        ann = AnnotationSet([], cfg.hyper["delta_tag"])
        graph = assemble(text_graph, ann)
        for s in seeds:
            model = build_model(graph, text_graph, None, cfg, model_kind="gcn")
            res = fit(model, graph, text_graph, cfg, s, split)
            vals = score(res, graph, text_graph, cfg, s)
            report.add(s, vals, vals.get("table"))
        return report
    fusion = cfg.fusion_mode if variant == "teko" else variant
    vcfg = PipelineConfig(**{**cfg.__dict__, "fusion_mode": fusion})
    ann = link(text_graph.documents, lexicon, mentions, cfg.hyper["delta_tag"])
    key = ("kb", cfg.hyper["delta_tag"])
    if cache is not None and key in cache:
        kstage = cache[key]
    else:
        kstage = train_knowledge(kb, ann, cfg)
        if cache is not None:
            cache[key] = kstage
    graph = build_graph(text_graph, ann, kstage.features, vcfg)
    for s in seeds:
        model = build_model(graph, text_graph, kstage.features, vcfg, model_kind="teko")
        res = fit(model, graph, text_graph, vcfg, s, split)
        vals = score(res, graph, text_graph, vcfg, s)
        report.add(s, vals, vals.get("table"))
    return report
