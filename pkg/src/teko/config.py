"""Pipeline configuration: JSON file plus ``key=value`` overrides.

Schema (all keys optional unless a stage needs them)::

    {
      "paths": {"documents": ..., "edges": ..., "triplets": ...,
                "descriptions": ..., "lexicon": ..., "annotations": ...,
                "splits": ...},
      "output_dir": "runs/default",
      "seeds": [0],
      "objective": "supervised" | "unsupervised",
      "model": "teko" | "gcn",
      "fusion_mode": "gated" | "concat" | "triplet_only" | "textual_only",
      "hyper": {"dim": 64, "delta_tag": 0.2, "delta_sim": 0.7, ...},
      "sweep": {"delta_tag": [...], "delta_sim": [...]}
    }

Relative paths are resolved against the config file's directory.
Overrides use dotted keys (``hyper.delta_sim=0.8``, ``paths.edges=e.tsv``,
``seeds=1,2,3``); a bare hyperparameter name is looked up under ``hyper``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid, MissingFile
from .knowledge_embed import FUSION_MODES

PATH_KEYS = ("documents", "edges", "triplets", "descriptions", "lexicon", "annotations", "splits")

DEFAULT_HYPER = dict(
    dim=64,
    lda_topics=None,  # must equal dim for gated fusion; None means "same as dim"
    delta_tag=0.2,
    delta_sim=0.7,
    hidden=64,
    layers=2,
    lr=0.005,
    weight_decay=5e-4,
    dropout=0.5,
    leaky_slope=0.2,
    margin=1.0,
    epochs=200,
    patience=30,
    neg_ratio=1,
    transe_epochs=200,
    transe_lr=0.1,
    transe_batch=32,
    lda_iters=500,
    lda_alpha=None,
    lda_beta=0.01,
    min_df=1,
    max_features=None,
    split_ratios=[0.1, 0.1, 0.8],
    head_filter=True,
    similarity_source="fused",
    alpha_placement="feature",
    entity_standardize=True,
    kmeans_restarts=10,
    kb_seed=0,
    embed_dim=None,  # output width for the unsupervised objective; None means hidden
)

DEFAULT_SWEEP = dict(delta_tag=[0.1, 0.2, 0.3, 0.4], delta_sim=[0.5, 0.6, 0.7, 0.8, 0.9])


@dataclass
class PipelineConfig:
    paths: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_HYPER))
    fusion_mode: str = "gated"
    objective: str = "supervised"
    model: str = "teko"
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs/default"
    sweep: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_SWEEP))

    def __getattr__(self, name):
        hyper = self.__dict__.get("hyper", {})
        if name in hyper:
            return hyper[name]
        raise AttributeError(name)

    @property
    def topics(self) -> int:
        t = self.hyper.get("lda_topics")
        return self.hyper["dim"] if t is None else t

    def path(self, key) -> Path | None:
        p = self.paths.get(key)
        return Path(p) if p else None

    def to_dict(self) -> dict:
        return dict(paths={k: str(v) for k, v in sorted(self.paths.items()) if v},
                    hyper=dict(sorted(self.hyper.items())), fusion_mode=self.fusion_mode,
                    objective=self.objective, model=self.model, seeds=list(self.seeds),
                    output_dir=str(self.output_dir), sweep=self.sweep)

    def validate(self) -> "PipelineConfig":
        h = self.hyper
        unknown = set(h) - set(DEFAULT_HYPER)
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown hyperparameter")
        if not 0.0 <= h["delta_tag"] <= 1.0:
            raise ConfigInvalid("delta_tag", "must lie in [0, 1]")
        if not -1.0 <= h["delta_sim"] <= 1.0:
            raise ConfigInvalid("delta_sim", "must lie in [-1, 1]")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigInvalid("fusion_mode", f"one of {FUSION_MODES}")
        if self.fusion_mode == "gated" and self.topics != h["dim"]:
            raise ConfigInvalid("lda_topics", "must equal dim for gated fusion")
        if self.objective not in ("supervised", "unsupervised"):
            raise ConfigInvalid("objective", "supervised or unsupervised")
        if self.model not in ("teko", "gcn"):
            raise ConfigInvalid("model", "teko or gcn")
        for key in ("dim", "hidden", "layers", "epochs", "neg_ratio", "transe_epochs",
                    "lda_iters", "transe_batch", "kmeans_restarts", "min_df"):
            if not isinstance(h[key], int) or isinstance(h[key], bool) or h[key] < 1:
                raise ConfigInvalid(key, "must be a positive integer")
        if h["dim"] < 2 or self.topics < 2:
            raise ConfigInvalid("dim", "must be >= 2")
        if not isinstance(h["patience"], int) or h["patience"] < 0:
            raise ConfigInvalid("patience", "must be a nonnegative integer")
        if not h["lr"] >= 0:
            raise ConfigInvalid("lr", "must be >= 0")
        if not h["weight_decay"] >= 0:
            raise ConfigInvalid("weight_decay", "must be >= 0")
        if not 0.0 <= h["dropout"] < 1.0:
            raise ConfigInvalid("dropout", "must lie in [0, 1)")
        if h["similarity_source"] not in ("fused", "triplet"):
            raise ConfigInvalid("similarity_source", "fused or triplet")
        if h["alpha_placement"] not in ("feature", "logit"):
            raise ConfigInvalid("alpha_placement", "feature or logit")
        r = h["split_ratios"]
        if len(r) != 3 or any(x < 0 for x in r) or sum(r) > 1 + 1e-9:
            raise ConfigInvalid("split_ratios", "three nonnegative values summing to <= 1")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigInvalid("seeds", "a nonempty list of integers")
        unknown_paths = set(self.paths) - set(PATH_KEYS)
        if unknown_paths:
            raise ConfigInvalid("paths." + sorted(unknown_paths)[0], "unknown path key")
        for name in ("delta_tag", "delta_sim"):
            if name in self.sweep and not isinstance(self.sweep[name], list):
                raise ConfigInvalid(f"sweep.{name}", "must be a list")
        return self

    def require_path(self, key, stage) -> Path:
        p = self.path(key)
        if p is None:
            raise ConfigInvalid(f"paths.{key}", f"required by stage {stage!r}")
        if not p.is_file():
            raise MissingFile(str(p))
        return p

    def hash(self, keys=None) -> str:
        """SHA-256 prefix of the canonical JSON of (a subset of) the config."""
        d = self.to_dict()
        flat = {**{f"paths.{k}": v for k, v in d["paths"].items()},
                **{f"hyper.{k}": v for k, v in d["hyper"].items()},
                **{k: v for k, v in d.items() if k not in ("paths", "hyper")}}
        if keys is not None:
            flat = {k: flat.get(k) for k in sorted(keys)}
        blob = json.dumps(flat, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_value(x.strip()) for x in text.split(",") if x.strip()]
    return text


def apply_override(raw: dict, assignment: str) -> None:
    key, sep, value = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigInvalid(assignment, "override must look like key=value")
    val = _parse_value(value.strip())
    parts = key.split(".")
    if len(parts) == 1 and parts[0] in DEFAULT_HYPER:
        parts = ["hyper", parts[0]]
    if len(parts) == 1 and parts[0] in PATH_KEYS:
        parts = ["paths", parts[0]]
    if parts[0] == "seeds" and not isinstance(val, list):
        val = [val]
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigInvalid(key, "cannot descend into a non-section")
    node[parts[-1]] = val


def build_config(raw: dict, base_dir: Path | None = None) -> PipelineConfig:
    known = {"paths", "hyper", "fusion_mode", "objective", "model", "seeds", "output_dir", "sweep"}
    extra = set(raw) - known
    if extra:
        raise ConfigInvalid(sorted(extra)[0], "unknown top-level key")
    hyper = copy.deepcopy(DEFAULT_HYPER)
    hyper.update(raw.get("hyper", {}))
    sweep = copy.deepcopy(DEFAULT_SWEEP)
    sweep.update(raw.get("sweep", {}))
    paths = {}
    for k, v in raw.get("paths", {}).items():
        if v:
            p = Path(v)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            paths[k] = str(p)
    out = raw.get("output_dir", "runs/default")
    if base_dir is not None and not Path(out).is_absolute():
        out = str(base_dir / out)
    cfg = PipelineConfig(paths=paths, hyper=hyper,
                         fusion_mode=raw.get("fusion_mode", "gated"),
                         objective=raw.get("objective", "supervised"),
                         model=raw.get("model", "teko"),
                         seeds=list(raw.get("seeds", [0])),
                         output_dir=out, sweep=sweep)
    return cfg.validate()


def load_config(path=None, overrides=(), seed=None) -> PipelineConfig:
    raw: dict = {}
    base = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingFile(str(path))
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(str(path), f"not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigInvalid(str(path), "top level must be an object")
        base = path.resolve().parent
    for ov in overrides:
        apply_override(raw, ov)
    if seed is not None:
        raw["seeds"] = [seed]
    return build_config(raw, base)
