"""Command-line entry point: ``teko <command> --config <path> [--set k=v ...] [--seed N]``.

Every stage writes into ``<output_dir>/<stage>/`` together with a
``manifest.json`` that records the stage key, the seeds and a SHA-256 of
each output file. The stage key hashes the configuration subset the stage
depends on, the contents of its input files and the keys of its upstream
stages, so

* re-running a stage whose key is unchanged and whose outputs are intact
  is a no-op,
* changing a hyperparameter changes the key of the stages that read it
  and of everything downstream, and a downstream command then refuses to
  run on the stale upstream output.

Keys depend on file contents, never on paths, so two runs of one
configuration in different directories stamp identical artifacts.

Exit codes
----------
0  all requested stages completed
1  unexpected internal error
2  invalid configuration or command line
3  a required upstream stage has not been run or is stale
4  input data error (missing or malformed file, degenerate data)
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DEFAULT_HYPER, PipelineConfig, load_config
from .corpus_io import VocabConfig, load_documents, load_edges, build_attributes, load_splits, \
    write_splits, TextRichGraph
from .entity_linking import annotate, filter_mentions, load_annotations, load_lexicon, \
    write_annotations
from .errors import ConfigInvalid, MissingUpstreamArtifact, TekoError
from .evaluation import MetricsReport
from .hga_model import load_checkpoint, save_checkpoint
from .knowledge_embed import EntityFeatures, KnowledgeBase, fuse, load_descriptions, \
    load_triplets, read_embeddings, write_embeddings
from .semantic_graph import read_graph, write_graph
from . import pipeline

log = logging.getLogger("teko")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_UPSTREAM, EXIT_DATA = 0, 1, 2, 3, 4

_KB_HYPER = ("dim", "lda_topics", "margin", "transe_epochs", "transe_lr", "transe_batch",
             "lda_iters", "lda_alpha", "lda_beta", "head_filter", "kb_seed")
_VOCAB_HYPER = ("min_df", "max_features")
_TRAIN_HYPER = ("hidden", "layers", "lr", "weight_decay", "dropout", "leaky_slope", "epochs",
                "patience", "neg_ratio", "split_ratios", "alpha_placement",
                "entity_standardize", "embed_dim")


@dataclass(frozen=True)
class StageSpec:
    name: str
    deps: tuple
    config_keys: tuple
    files: tuple  # path keys whose contents feed the stage


STAGES = {
    "link": StageSpec("link", (), ("hyper.delta_tag",), ("documents", "lexicon", "annotations")),
    "train-kb": StageSpec("train-kb", ("link",), tuple(f"hyper.{k}" for k in _KB_HYPER),
                          ("triplets", "descriptions")),
    "build-graph": StageSpec("build-graph", ("link", "train-kb"),
                             ("hyper.delta_sim", "hyper.similarity_source", "fusion_mode",
                              *(f"hyper.{k}" for k in _VOCAB_HYPER)),
                             ("documents", "edges")),
    "train": StageSpec("train", ("build-graph", "train-kb"),
                       ("model", "objective", "fusion_mode", "seeds",
                        *(f"hyper.{k}" for k in _TRAIN_HYPER + _VOCAB_HYPER)),
                       ("documents", "edges", "splits")),
    "eval": StageSpec("eval", ("train",), ("hyper.kmeans_restarts",), ()),
    "embed": StageSpec("embed", ("train",), (), ()),
    "sweep": StageSpec("sweep", (), ("model", "objective", "fusion_mode", "seeds", "sweep",
                                     *(f"hyper.{k}" for k in DEFAULT_HYPER)),
                       ("documents", "edges", "lexicon", "annotations", "triplets",
                        "descriptions", "splits")),
}
PIPELINE_ORDER = ("link", "train-kb", "build-graph", "train", "eval")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def content_hash(cfg: PipelineConfig) -> str:
    """Hash of the whole configuration except file locations."""
    d = cfg.to_dict()
    keys = [f"hyper.{k}" for k in d["hyper"]] + ["fusion_mode", "objective", "model", "seeds",
                                                   "sweep"]
    return cfg.hash(keys)


class Workspace:
    """Stage bookkeeping for one configuration."""

    def __init__(self, cfg: PipelineConfig, force=False):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        self.force = force
        self._keys: dict[str, str] = {}

    def stage_dir(self, stage) -> Path:
        return self.root / stage

    def manifest_path(self, stage) -> Path:
        return self.stage_dir(stage) / "manifest.json"

    def expected_key(self, stage) -> str:
        """Key the stage would have if run now with this configuration."""
        if stage in self._keys:
            return self._keys[stage]
        spec = STAGES[stage]
        files = {}
        for k in spec.files:
            p = self.cfg.path(k)
            files[k] = file_digest(p) if p is not None and p.is_file() else None
        blob = dict(stage=stage, config=self.cfg.hash(spec.config_keys), files=files,
                    upstream={d: self.expected_key(d) for d in spec.deps})
        key = hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]
        self._keys[stage] = key
        return key

    def read_manifest(self, stage) -> dict | None:
        p = self.manifest_path(stage)
        if not p.is_file():
            return None
        try:
            return json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return None

    def is_current(self, stage) -> bool:
        m = self.read_manifest(stage)
        if m is None or m.get("key") != self.expected_key(stage):
            return False
        d = self.stage_dir(stage)
        return all((d / f).is_file() and file_digest(d / f) == h
                   for f, h in m.get("outputs", {}).items())

    def require(self, stage) -> Path:
        """Directory of an upstream stage, which must be complete and current."""
        m = self.read_manifest(stage)
        if m is None:
            raise MissingUpstreamArtifact(stage, self.manifest_path(stage))
        if not self.is_current(stage):
            raise MissingUpstreamArtifact(stage, f"{self.stage_dir(stage)} is stale; re-run "
                                                 f"`teko {stage}`")
        return self.stage_dir(stage)

    def run(self, stage, body) -> tuple[Path, bool]:
        """Run ``body(tmp_dir)`` unless current; publish outputs atomically.

        Returns the stage directory and whether work was done. On failure the
        previous outputs are left untouched.
        """
        for dep in STAGES[stage].deps:
            self.require(dep)
        final = self.stage_dir(stage)
        if not self.force and self.is_current(stage):
            log.info("%s: up to date (key %s)", stage, self.expected_key(stage))
            return final, False
        tmp = self.root / f".tmp-{stage}"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        try:
            body(tmp)
            outputs = {p.name: file_digest(p) for p in sorted(tmp.iterdir()) if p.is_file()}
            manifest = dict(stage=stage, key=self.expected_key(stage),
                            config_hash=content_hash(self.cfg), seeds=list(self.cfg.seeds),
                            upstream={d: self.expected_key(d) for d in STAGES[stage].deps},
                            outputs=outputs)
            (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True)
                                               + "\n", encoding="utf-8")
            if final.exists():
                shutil.rmtree(final)
            tmp.rename(final)
        finally:
            if tmp.exists():
                shutil.rmtree(tmp)
        log.info("%s: wrote %s", stage, final)
        return final, True


# -- shared loaders ---------------------------------------------------------


def vocab_config(cfg) -> VocabConfig:
    return VocabConfig(min_df=cfg.hyper["min_df"], max_features=cfg.hyper["max_features"])


def stamp(path: Path, ws: Workspace, stage: str, seed=None) -> None:
    """Prefix a text artifact with a ``#`` line naming its stage key and seed."""
    head = f"# teko stage={stage} key={ws.expected_key(stage)}"
    if seed is not None:
        head += f" seed={seed}"
    path.write_text(head + "\n" + path.read_text(encoding="utf-8"), encoding="utf-8")


def load_text_graph(cfg: PipelineConfig, stage: str) -> TextRichGraph:
    docs = load_documents(cfg.require_path("documents", stage))
    edges = load_edges(cfg.require_path("edges", stage), docs)
    X, terms = build_attributes(docs, vocab_config(cfg))
    return TextRichGraph(docs, edges, X, terms)


def load_mentions(cfg: PipelineConfig, docs, stage):
    if cfg.path("annotations") is not None:
        return load_annotations(cfg.require_path("annotations", stage), docs)
    if cfg.path("lexicon") is None:
        raise ConfigInvalid("paths.lexicon", f"stage {stage!r} needs a lexicon or annotations")
    return annotate(docs, load_lexicon(cfg.require_path("lexicon", stage)))


def load_kb(cfg: PipelineConfig, stage) -> KnowledgeBase:
    trips = load_triplets(cfg.require_path("triplets", stage)) if cfg.path("triplets") else []
    descs = load_descriptions(cfg.require_path("descriptions", stage)) \
        if cfg.path("descriptions") else {}
    if not trips and not descs:
        raise ConfigInvalid("paths.triplets", f"stage {stage!r} needs triplets or descriptions")
    return KnowledgeBase.from_records(trips, descs)


def load_entity_features(kb_dir: Path) -> EntityFeatures:
    ids, S = read_embeddings(kb_dir / "entity_triplet.tsv")
    ids_t, T = read_embeddings(kb_dir / "entity_textual.tsv")
    if ids != ids_t:
        raise MissingUpstreamArtifact("train-kb", "triplet and textual tables disagree")
    return EntityFeatures(ids, S, T)


def model_graph(cfg, graph):
    return graph.doc_graph() if cfg.model == "gcn" else graph


# -- stages -----------------------------------------------------------------


def stage_link(ws: Workspace):
    cfg = ws.cfg

    def body(out: Path):
        docs = load_documents(cfg.require_path("documents", "link"))
        ann = filter_mentions(load_mentions(cfg, docs, "link"), cfg.hyper["delta_tag"])
        write_annotations(ann.mentions, out / "annotations.tsv")
        stamp(out / "annotations.tsv", ws, "link")
        log.info("link: %d mentions of %d entities kept at delta_tag=%s", len(ann),
                 len(ann.entity_ids), cfg.hyper["delta_tag"])

    return ws.run("link", body)


def _linked(ws: Workspace, docs):
    link_dir = ws.require("link")
    return filter_mentions(load_annotations(link_dir / "annotations.tsv", docs),
                           ws.cfg.hyper["delta_tag"])


def stage_train_kb(ws: Workspace):
    cfg = ws.cfg

    def body(out: Path):
        docs = load_documents(cfg.require_path("documents", "train-kb"))
        ann = _linked(ws, docs)
        kstage = pipeline.train_knowledge(load_kb(cfg, "train-kb"), ann, cfg)
        f = kstage.features
        write_embeddings(f.entity_ids, f.triplet, out / "entity_triplet.tsv")
        write_embeddings(f.entity_ids, f.textual, out / "entity_textual.tsv")
        gate = np.zeros(f.triplet.shape[1])
        write_embeddings(f.entity_ids, fuse(f.triplet, f.textual, gate, cfg.fusion_mode),
                         out / "entity_fused.tsv")
        for name in ("entity_triplet.tsv", "entity_textual.tsv", "entity_fused.tsv"):
            stamp(out / name, ws, "train-kb")
        if kstage.transe is not None:
            t = kstage.transe
            write_embeddings(t.relations, t.relation_matrix, out / "relations.tsv")
            stamp(out / "relations.tsv", ws, "train-kb")
            (out / "transe_loss.csv").write_text(
                "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(t.history)),
                encoding="utf-8")

    return ws.run("train-kb", body)


def stage_build_graph(ws: Workspace):
    cfg = ws.cfg

    def body(out: Path):
        tg = load_text_graph(cfg, "build-graph")
        ann = _linked(ws, tg.documents)
        feats = load_entity_features(ws.require("train-kb"))
        graph = pipeline.build_graph(tg, ann, feats, cfg)
        write_graph(graph, out / "graph.txt")
        stamp(out / "graph.txt", ws, "build-graph")
        log.info("build-graph: %d docs, %d entities, |E_D|=%d |E_DW|=%d |E_W|=%d", graph.n_doc,
                 graph.n_ent, len(graph.edges_dd), len(graph.edges_de), len(graph.edges_ee))

    return ws.run("build-graph", body)


def _training_inputs(ws: Workspace, stage):
    cfg = ws.cfg
    tg = load_text_graph(cfg, stage)
    graph = model_graph(cfg, read_graph(ws.require("build-graph") / "graph.txt"))
    feats = load_entity_features(ws.require("train-kb"))
    return tg, graph, feats


def _stamp(params, ws: Workspace, seed):
    params.meta["config"] = ws.expected_key("train")
    params.meta["seed"] = seed
    return params


def stage_train(ws: Workspace):
    cfg = ws.cfg

    def body(out: Path):
        tg, graph, feats = _training_inputs(ws, "train")
        given = load_splits(cfg.require_path("splits", "train"), tg.documents) \
            if cfg.path("splits") else None
        for seed in cfg.seeds:
            model = pipeline.build_model(graph, tg, feats, cfg)
            res = pipeline.fit(model, graph, tg, cfg, seed, split=given)
            save_checkpoint(_stamp(res.params, ws, seed), out / f"checkpoint_seed{seed}.txt")
            res.history.to_csv(out / f"history_seed{seed}.csv")
            if res.split is not None:
                write_splits(res.split, out / f"split_seed{seed}.txt")
                stamp(out / f"split_seed{seed}.txt", ws, "train", seed)
            log.info("train: seed %d best epoch %d of %d", seed, res.history.best_epoch,
                     len(res.history))

    return ws.run("train", body)


def _trained_outputs(ws: Workspace, stage):
    """Yield ``(seed, output, split, graph, text_graph)`` from saved checkpoints."""
    cfg = ws.cfg
    train_dir = ws.require("train")
    tg, graph, feats = _training_inputs(ws, stage)
    model = pipeline.build_model(graph, tg, feats, cfg)
    for seed in cfg.seeds:
        params = load_checkpoint(train_dir / f"checkpoint_seed{seed}.txt")
        split_path = train_dir / f"split_seed{seed}.txt"
        split = load_splits(split_path, tg.documents) if split_path.is_file() else None
        yield seed, model.forward(params).output, split, graph, tg


def stage_eval(ws: Workspace) -> tuple[Path, bool, MetricsReport]:
    cfg = ws.cfg
    report_box = {}

    def body(out: Path):
        mode = "classify" if cfg.objective == "supervised" else "cluster"
        report = MetricsReport(mode)
        for seed, output, split, graph, tg in _trained_outputs(ws, "eval"):
            res = pipeline.FitResult(None, None, split, output)
            vals = pipeline.score(res, graph, tg, cfg, seed)
            report.add(seed, vals, vals.get("table"))
        report.to_csv(out / "metrics.csv")
        (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True)
                                          + "\n", encoding="utf-8")
        report_box["r"] = report

    path, ran = ws.run("eval", body)
    report = report_box.get("r") or read_report(path)
    return path, ran, report


def read_report(eval_dir: Path) -> MetricsReport:
    d = json.loads((eval_dir / "metrics.json").read_text(encoding="utf-8"))
    r = MetricsReport(d["mode"])
    for i, s in enumerate(d["seeds"]):
        r.add(s, {k: v[i] for k, v in d["per_seed"].items()})
    return r


def stage_embed(ws: Workspace):
    def body(out: Path):
        for seed, output, _, graph, _ in _trained_outputs(ws, "embed"):
            write_embeddings(graph.node_ids, output, out / f"embeddings_seed{seed}.tsv")
            stamp(out / f"embeddings_seed{seed}.tsv", ws, "embed", seed)

    return ws.run("embed", body)


def run_sweep(cfg: PipelineConfig, which=("delta_tag", "delta_sim"), force=False):
    """Per-threshold metric tables; each grid point runs the full in-memory pipeline."""
    ws = Workspace(cfg, force)
    which = tuple(which)
    tables = {}

    def body(out: Path):
        tg = load_text_graph(cfg, "sweep")
        mentions = load_mentions(cfg, tg.documents, "sweep")
        kb = load_kb(cfg, "sweep")
        split = load_splits(cfg.require_path("splits", "sweep"), tg.documents) \
            if cfg.path("splits") else None
        variant = "gcn" if cfg.model == "gcn" else "teko"
        cache = {}
        for param in which:
            rows = []
            for value in cfg.sweep[param]:
                pcfg = PipelineConfig(**{**cfg.__dict__, "hyper": {**cfg.hyper, param: value}})
                pcfg.validate()
                rep = pipeline.run_variant(tg, kb, pcfg, mentions=mentions, variant=variant,
                                           cache=cache, split=split)
                rows.append((value, *(rep.summary()[m][0] for m in rep.metric_names)))
                log.info("sweep %s=%s: %s", param, value, rows[-1][1:])
            names = rep.metric_names
            with (out / f"sweep_{param}.csv").open("w", encoding="utf-8") as fh:
                fh.write(",".join(("threshold", *names)) + "\n")
                fh.writelines(",".join(repr(float(x)) for x in row) + "\n" for row in rows)
            tables[param] = (names, rows)

    path, ran = ws.run("sweep", body)
    if not tables:
        for param in which:
            lines = (path / f"sweep_{param}.csv").read_text(encoding="utf-8").splitlines()
            names = tuple(lines[0].split(",")[1:])
            tables[param] = (names, [tuple(float(x) for x in ln.split(",")) for ln in lines[1:]])
    return path, ran, tables


# -- command line -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="run a single seed instead of config seeds")
    common.add_argument("--force", action="store_true", help="re-run even if up to date")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="teko", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "link": "annotate documents with entities above delta_tag",
        "train-kb": "train TransE and LDA, write entity embeddings",
        "build-graph": "assemble the heterogeneous document-entity graph",
        "train": "train the model for each seed (checkpoints and histories)",
        "eval": "score trained checkpoints; write metrics CSV/JSON",
        "embed": "write final-layer node representations",
        "sweep": "metric table over delta_tag and/or delta_sim grids",
        "run": "link, train-kb, build-graph, train and eval in order",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "sweep":
            p.add_argument("--param", choices=("delta_tag", "delta_sim", "both"), default="both")
    p = sub.add_parser("demo-data", help="write a synthetic benchmark corpus and config")
    p.add_argument("directory")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


STAGE_FUNCS = {"link": stage_link, "train-kb": stage_train_kb, "build-graph": stage_build_graph,
               "train": stage_train, "eval": stage_eval, "embed": stage_embed}


def write_demo(directory, data_seed=0) -> Path:
    """Synthetic benchmark files plus a config tuned for it; returns the config path."""
    from .synthetic import benchmark_corpus

    d = Path(directory)
    paths = benchmark_corpus(seed=data_seed).write(d)
    raw = dict(paths={k: p.name for k, p in paths.items()}, output_dir="runs",
               seeds=[0, 1, 2, 3, 4],
               hyper=dict(dim=16, hidden=32, split_ratios=[0.2, 0.2, 0.6], epochs=300,
                          patience=100))
    cfg_path = d / "config.json"
    cfg_path.write_text(json.dumps(raw, indent=2) + "\n", encoding="utf-8")
    return cfg_path


def _emit(args, payload: dict, text: str):
    print(json.dumps(payload, sort_keys=True) if args.json else text)


def dispatch(args) -> int:
    if args.command == "demo-data":
        path = write_demo(args.directory, args.data_seed)
        print(f"wrote {path}")
        return EXIT_OK
    cfg = load_config(args.config, args.overrides, args.seed)
    if args.command == "sweep":
        which = ("delta_tag", "delta_sim") if args.param == "both" else (args.param,)
        path, ran, tables = run_sweep(cfg, which, args.force)
        payload = {p: [dict(zip(("threshold", *names), row)) for row in rows]
                   for p, (names, rows) in tables.items()}
        text = "\n".join(f"{p}\n" + "\n".join("  " + "  ".join(f"{x:.4f}" for x in row)
                                               for row in rows)
                         for p, (names, rows) in tables.items())
        _emit(args, payload, text)
        return EXIT_OK
    ws = Workspace(cfg, args.force)
    stages = PIPELINE_ORDER if args.command == "run" else (args.command,)
    report = None
    for st in stages:
        result = STAGE_FUNCS[st](ws)
        path, ran = result[0], result[1]
        if st == "eval":
            report = result[2]
        if not args.json:
            print(f"{st}: {'done' if ran else 'up to date'} -> {path}")
    if report is not None:
        _emit(args, report.to_dict(), report.format_table())
    elif args.json:
        print(json.dumps({st: str(ws.stage_dir(st)) for st in stages}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return dispatch(args)
    except ConfigInvalid as exc:
        print(f"teko: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingUpstreamArtifact as exc:
        print(f"teko: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except TekoError as exc:
        print(f"teko: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("internal error")
        print(f"teko: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
