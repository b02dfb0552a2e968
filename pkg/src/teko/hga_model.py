"""Heterogeneous graph attention network and a GCN baseline.

Both models are full-graph, dense numpy implementations with hand-written
backward passes. Each layer of :class:`HeteroGraphAttention`

1. projects every node into a common space with a per-type matrix,
2. builds per-type neighbourhood summaries from the normalized adjacency,
3. scores node types with per-type attention vectors (type-level
   attention, softmax over the types present around a node),
4. scores individual neighbours with a shared attention vector, the pair
   features being weighted by the type attention of the neighbour's type,
   softmax jointly over all neighbours (node-level attention),
5. aggregates projected neighbours with the node-level weights.

Hidden layers apply LeakyReLU; the last layer applies a row softmax
(``head="softmax"``) or nothing (``head="linear"``, used for embeddings).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyNeighborhood, MalformedRecord, MissingFile, \
    NonFiniteActivation
from .knowledge_embed import EntityFeatures, fuse, fused_dim, sigmoid
from .semantic_graph import DOC, ENT, NODE_TYPES, HeteroGraph, full_normalized_adjacency, \
    normalized_adjacency

CHECKPOINT_MAGIC = "teko-checkpoint"
CHECKPOINT_VERSION = 1


def leaky_relu(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x, slope=0.2):
    return np.where(x > 0, 1.0, slope)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def masked_softmax(x, mask, axis=-1):
    """Softmax over entries where ``mask`` is true; masked-out entries are 0."""
    safe = np.where(mask, x, -np.inf)
    m = np.max(safe, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x, m) - m), 0.0)
    s = np.sum(e, axis=axis, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def softmax_backward(p, dp, axis=-1):
    return p * (dp - np.sum(p * dp, axis=axis, keepdims=True))


def standardize_columns(M, floor=1e-12) -> np.ndarray:
    """Center each column and divide by its population std (constant columns stay 0)."""
    M = np.asarray(M, dtype=np.float64)
    if len(M) == 0:
        return M.copy()
    return (M - M.mean(axis=0)) / np.maximum(M.std(axis=0), floor)


def glorot(rng, fan_in, fan_out, shape=None):
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape if shape is not None else (fan_in, fan_out))


# ---------------------------------------------------------------------------
# parameters and checkpoints


@dataclass
class ModelParams:
    """Named parameter arrays plus the metadata needed to rebuild a model.

    Names follow ``<group>.<layer>[.<type>]``: ``W.0.DOC``, ``eta.1.ENT``,
    ``gamma.0`` and the shared ``gate`` logits.
    """

    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, dict(self.meta))

    @property
    def names(self) -> list[str]:
        return list(self.arrays)

    @staticmethod
    def group(name: str) -> str:
        return name.split(".", 1)[0]

    def groups(self) -> list[str]:
        return list(dict.fromkeys(self.group(n) for n in self.arrays))

    def equals(self, other: "ModelParams") -> bool:
        return (self.names == other.names and self.meta == other.meta
                and all(np.array_equal(self[n], other[n]) for n in self.names))


def save_checkpoint(params: ModelParams, path) -> None:
    """Text checkpoint; floats written with ``repr`` so reloading is bit-exact."""
    meta = " ".join(f"{k}={params.meta[k]}" for k in sorted(params.meta))
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION} {meta}".rstrip()]
    for name, arr in params.arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            lines.append(f"vector {name} {arr.shape[0]}")
            lines.append(" ".join(repr(float(x)) for x in arr))
        else:
            lines.append(f"matrix {name} {arr.shape[0]} {arr.shape[1]}")
            lines.extend(" ".join(repr(float(x)) for x in row) for row in arr)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_meta_value(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return {"True": True, "False": False, "None": None}.get(v, v)


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    lines = path.read_text(encoding="utf-8").split("\n")
    head = lines[0].split()
    if len(head) < 2 or head[0] != CHECKPOINT_MAGIC or head[1] != f"v{CHECKPOINT_VERSION}":
        raise MalformedRecord(1, "not a checkpoint file")
    meta = {}
    for tok in head[2:]:
        k, _, v = tok.partition("=")
        meta[k] = _parse_meta_value(v)
    arrays = {}
    i = 1
    while i < len(lines) and lines[i]:
        parts = lines[i].split()
        try:
            if parts[0] == "vector":
                name, d = parts[1], int(parts[2])
                vals = lines[i + 1].split() if d else []
                arr = np.array([float(x) for x in vals], dtype=np.float64)
                if arr.shape != (d,):
                    raise ValueError("vector length")
                i += 2
            elif parts[0] == "matrix":
                name, r, c = parts[1], int(parts[2]), int(parts[3])
                rows = [[float(x) for x in lines[i + 1 + k].split()] for k in range(r)]
                arr = np.array(rows, dtype=np.float64).reshape(r, c)
                i += 1 + r
            else:
                raise ValueError(parts[0])
        except (IndexError, ValueError) as exc:
            raise MalformedRecord(i + 1, f"bad checkpoint block: {exc}") from None
        arrays[name] = arr
    return ModelParams(arrays, meta)


# ---------------------------------------------------------------------------
# single-node reference operations


def project(features, W):
    """Type-specific linear projection ``features @ W`` (no bias)."""
    features, W = np.asarray(features, dtype=np.float64), np.asarray(W, dtype=np.float64)
    if features.shape[-1] != W.shape[0]:
        raise DimensionMismatch(f"features {features.shape} vs W {W.shape}")
    return features @ W


def type_embedding(a_row, H_proj):
    """Adjacency-weighted sum of the projected neighbours of one type."""
    a_row = np.asarray(a_row, dtype=np.float64)
    H_proj = np.asarray(H_proj, dtype=np.float64)
    if a_row.size == 0:
        return np.zeros(H_proj.shape[-1] if H_proj.ndim == 2 else 0)
    return a_row @ H_proj


def type_attention(h_i, type_embeds: dict, eta: dict, slope=0.2) -> dict:
    """Softmax over the present types of ``LeakyReLU(eta_t . [h_i, h_t])``."""
    types = list(type_embeds)
    logits = np.array([leaky_relu(eta[t] @ np.concatenate([h_i, type_embeds[t]]), slope)
                       for t in types])
    return dict(zip(types, softmax(logits)))


def node_attention(h_i, neighbors, alpha: dict, gamma, slope=0.2, placement="feature") -> dict:
    """Attention of one node over ``neighbors = [(j, h_j, type_j), ...]``."""
    if not neighbors:
        raise EmptyNeighborhood("node has no neighbours")
    logits = []
    for _, h_j, t in neighbors:
        pair = gamma @ np.concatenate([h_i, h_j])
        if placement == "feature":
            logits.append(leaky_relu(alpha[t] * pair, slope))
        else:
            logits.append(alpha[t] * leaky_relu(pair, slope))
    return dict(zip([j for j, _, _ in neighbors], softmax(np.array(logits))))


# ---------------------------------------------------------------------------
# models


@dataclass
class ForwardResult:
    output: np.ndarray
    alphas: list[np.ndarray]
    betas: list[np.ndarray]
    cache: dict | None = None


class HeteroGraphAttention:
    """Two-type (document/entity) graph attention network.

    Parameters
    ----------
    graph : HeteroGraph
    doc_features : ndarray, shape (n_doc, f)
        Rows aligned with ``graph.doc_ids``.
    ent_features : EntityFeatures or None
        Triplet and textual vectors aligned with ``graph.ent_ids``. Fused
        inside the forward pass so the gate logits get gradients.
    hidden, out_dim, layers : int
    leaky_slope, dropout : float
    fusion_mode : {"gated", "concat", "triplet_only", "textual_only"}
    alpha_placement : {"feature", "logit"}
        Whether the type weight scales the concatenated pair features
        before the dot product with the attention vector, or scales the
        resulting attention logit.
    head : {"softmax", "linear"}
    standardize : bool
        Z-score each column of the triplet and textual matrices over the
        entity nodes before fusion. Topic proportions are small positive
        numbers while TransE rows are unit vectors; without this the
        bias-free projection learns from the textual side far more slowly.
    """

    kind = "hga"

    def __init__(self, graph: HeteroGraph, doc_features, ent_features: EntityFeatures | None,
                 *, hidden=64, out_dim=2, layers=2, leaky_slope=0.2, dropout=0.5,
                 fusion_mode="gated", alpha_placement="feature", head="softmax",
                 standardize=False):
        X = np.asarray(doc_features, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != graph.n_doc:
            raise DimensionMismatch(f"doc features {X.shape} vs {graph.n_doc} documents")
        if graph.n_ent:
            if ent_features is None or ent_features.triplet.shape[0] != graph.n_ent \
                    or ent_features.textual.shape[0] != graph.n_ent:
                raise DimensionMismatch("entity features must have one row per entity node")
            if list(ent_features.entity_ids) != list(graph.ent_ids):
                raise DimensionMismatch("entity feature order differs from graph entity order")
        if layers < 1:
            raise ValueError("need at least one layer")
        if alpha_placement not in ("feature", "logit"):
            raise ValueError(f"unknown alpha placement {alpha_placement!r}")
        if head not in ("softmax", "linear"):
            raise ValueError(f"unknown head {head!r}")
        self.graph = graph
        self.X = X
        self.ent = ent_features
        self.standardize = bool(standardize)
        if graph.n_ent:
            prep = standardize_columns if standardize else (lambda M: np.asarray(M, np.float64))
            self.e_s, self.e_d = prep(ent_features.triplet), prep(ent_features.textual)
        self.u = ent_features.triplet.shape[1] if ent_features is not None else 0
        self.hidden, self.out_dim, self.layers = hidden, out_dim, layers
        self.slope, self.dropout = leaky_slope, dropout
        self.fusion_mode, self.alpha_placement, self.head = fusion_mode, alpha_placement, head

        self.n_doc, self.n = graph.n_doc, graph.n_nodes
        self.A = full_normalized_adjacency(graph)
        self.mask = self.A != 0
        self.col_type = np.array([0] * graph.n_doc + [1] * graph.n_ent)
        self.present = np.stack([self.mask[:, : self.n_doc].any(axis=1),
                                 self.mask[:, self.n_doc:].any(axis=1)], axis=1)
        self.in_dims = {DOC: X.shape[1], ENT: fused_dim(self.u, fusion_mode) if graph.n_ent else 0}

    # -- parameters ----------------------------------------------------------

    def layer_dims(self, k):
        d_out = self.out_dim if k == self.layers - 1 else self.hidden
        if k == 0:
            return self.in_dims, d_out
        return {DOC: self.hidden, ENT: self.hidden}, d_out

    def init_params(self, seed=0) -> ModelParams:
        rng = np.random.default_rng(seed)
        arrays = {}
        for k in range(self.layers):
            d_in, d_out = self.layer_dims(k)
            for t in NODE_TYPES:
                arrays[f"W.{k}.{t}"] = glorot(rng, d_in[t], d_out)
            for t in NODE_TYPES:
                arrays[f"eta.{k}.{t}"] = glorot(rng, 2 * d_out, 1, shape=2 * d_out)
            arrays[f"gamma.{k}"] = glorot(rng, 2 * d_out, 1, shape=2 * d_out)
        arrays["gate"] = np.zeros(self.u)
        return ModelParams(arrays, self.describe(seed))

    def describe(self, seed=None) -> dict:
        meta = dict(model=self.kind, layers=self.layers, in_doc=self.in_dims[DOC],
                    in_ent=self.in_dims[ENT], u=self.u, hidden=self.hidden, out=self.out_dim,
                    fusion=self.fusion_mode, placement=self.alpha_placement, head=self.head,
                    slope=self.slope, dropout=self.dropout,
                    standardize=int(self.standardize))
        if seed is not None:
            meta["seed"] = seed
        return meta

    def check_params(self, params: ModelParams):
        for k in range(self.layers):
            d_in, d_out = self.layer_dims(k)
            for t in NODE_TYPES:
                if params[f"W.{k}.{t}"].shape != (d_in[t], d_out):
                    raise DimensionMismatch(f"W.{k}.{t} has shape {params[f'W.{k}.{t}'].shape}, "
                                            f"expected {(d_in[t], d_out)}")
                if params[f"eta.{k}.{t}"].shape != (2 * d_out,):
                    raise DimensionMismatch(f"eta.{k}.{t} must have length {2 * d_out}")
            if params[f"gamma.{k}"].shape != (2 * d_out,):
                raise DimensionMismatch(f"gamma.{k} must have length {2 * d_out}")
        if params["gate"].shape != (self.u,):
            raise DimensionMismatch(f"gate must have length {self.u}")

    # -- forward / backward --------------------------------------------------

    def entity_inputs(self, params: ModelParams) -> np.ndarray:
        if self.graph.n_ent == 0:
            return np.zeros((0, self.in_dims[ENT]))
        return fuse(self.e_s, self.e_d, params["gate"], self.fusion_mode)

    def _layer_forward(self, k, Hd, He, params):
        nd, slope = self.n_doc, self.slope
        _, d_out = self.layer_dims(k)
        Wd, We = params[f"W.{k}.{DOC}"], params[f"W.{k}.{ENT}"]
        P = np.vstack([Hd @ Wd, He @ We])
        # type-level attention
        T = [self.A[:, :nd] @ P[:nd], self.A[:, nd:] @ P[nd:]]
        etas = [params[f"eta.{k}.{t}"] for t in NODE_TYPES]
        y = np.stack([P @ etas[t][:d_out] + T[t] @ etas[t][d_out:] for t in (0, 1)], axis=1)
        alpha = masked_softmax(leaky_relu(y, slope), self.present)
        # node-level attention
        gamma = params[f"gamma.{k}"]
        q = (P @ gamma[:d_out])[:, None] + (P @ gamma[d_out:])[None, :]
        a_sel = alpha[:, self.col_type]
        if self.alpha_placement == "feature":
            s = a_sel * q
            e = leaky_relu(s, slope)
        else:
            s = q
            e = a_sel * leaky_relu(q, slope)
        beta = masked_softmax(e, self.mask)
        Z = beta @ P
        cache = dict(Hd=Hd, He=He, P=P, T=T, y=y, alpha=alpha, q=q, a_sel=a_sel, s=s, beta=beta)
        return Z, cache

    def _layer_backward(self, k, dZ, c, params, grads):
        nd, slope = self.n_doc, self.slope
        _, d_out = self.layer_dims(k)
        P, beta, alpha = c["P"], c["beta"], c["alpha"]
        dP = beta.T @ dZ
        dbeta = dZ @ P.T
        de = softmax_backward(beta, dbeta) * self.mask
        q, a_sel, s = c["q"], c["a_sel"], c["s"]
        if self.alpha_placement == "feature":
            ds = de * leaky_relu_grad(s, slope)
            da_sel = ds * q
            dq = ds * a_sel
        else:
            da_sel = de * leaky_relu(q, slope)
            dq = de * a_sel * leaky_relu_grad(q, slope)
        gamma = params[f"gamma.{k}"]
        du, dv = dq.sum(axis=1), dq.sum(axis=0)
        grads[f"gamma.{k}"] = np.concatenate([P.T @ du, P.T @ dv])
        dP += np.outer(du, gamma[:d_out]) + np.outer(dv, gamma[d_out:])
        dalpha = np.stack([da_sel[:, :nd].sum(axis=1), da_sel[:, nd:].sum(axis=1)], axis=1)
        dz = softmax_backward(alpha, dalpha) * self.present
        dy = dz * leaky_relu_grad(c["y"], slope)
        for t, name in enumerate(NODE_TYPES):
            eta = params[f"eta.{k}.{name}"]
            grads[f"eta.{k}.{name}"] = np.concatenate([P.T @ dy[:, t], c["T"][t].T @ dy[:, t]])
            dP += np.outer(dy[:, t], eta[:d_out])
            dT = np.outer(dy[:, t], eta[d_out:])
            cols = slice(0, nd) if t == 0 else slice(nd, self.n)
            dP[cols] += self.A[:, cols].T @ dT
        Wd, We = params[f"W.{k}.{DOC}"], params[f"W.{k}.{ENT}"]
        grads[f"W.{k}.{DOC}"] = c["Hd"].T @ dP[:nd]
        grads[f"W.{k}.{ENT}"] = c["He"].T @ dP[nd:]
        return dP[:nd] @ Wd.T, dP[nd:] @ We.T

    def forward(self, params: ModelParams, training=False, rng=None, keep_cache=False) -> ForwardResult:
        self.check_params(params)
        if training and self.dropout > 0 and rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        nd = self.n_doc
        Hd, He = self.X, self.entity_inputs(params)
        caches, alphas, betas = [], [], []
        for k in range(self.layers):
            masks = None
            if training and self.dropout > 0:
                keep = 1.0 - self.dropout
                masks = ((rng.random(Hd.shape) < keep) / keep, (rng.random(He.shape) < keep) / keep)
                Hd, He = Hd * masks[0], He * masks[1]
            Z, c = self._layer_forward(k, Hd, He, params)
            c["drop"] = masks
            c["Z"] = Z
            if k < self.layers - 1:
                H = leaky_relu(Z, self.slope)
            elif self.head == "softmax":
                H = softmax(Z, axis=1)
            else:
                H = Z
            if not np.all(np.isfinite(H)):
                raise NonFiniteActivation(f"non-finite activation in layer {k}")
            c["H"] = H
            caches.append(c)
            alphas.append(c["alpha"])
            betas.append(c["beta"])
            Hd, He = H[:nd], H[nd:]
        cache = dict(layers=caches) if keep_cache else None
        if not keep_cache:
            for c in caches:
                c.clear()
        return ForwardResult(H, alphas, betas, cache)

    def backward(self, result: ForwardResult, d_output, params: ModelParams) -> dict:
        """Gradients of a scalar loss given ``d loss / d output``."""
        if result.cache is None:
            raise ValueError("forward must be run with keep_cache=True")
        caches = result.cache["layers"]
        grads = {}
        dH = np.asarray(d_output, dtype=np.float64)
        for k in range(self.layers - 1, -1, -1):
            c = caches[k]
            if k < self.layers - 1:
                dZ = dH * leaky_relu_grad(c["Z"], self.slope)
            elif self.head == "softmax":
                dZ = softmax_backward(c["H"], dH, axis=1)
            else:
                dZ = dH
            dHd, dHe = self._layer_backward(k, dZ, c, params, grads)
            if c["drop"] is not None:
                dHd, dHe = dHd * c["drop"][0], dHe * c["drop"][1]
            dH = np.vstack([dHd, dHe]) if k > 0 else None
            if k == 0:
                grads["gate"] = self._gate_grad(dHe, params)
        return {name: grads[name] for name in params.names}

    def _gate_grad(self, dE, params):
        if self.fusion_mode != "gated" or self.graph.n_ent == 0:
            return np.zeros_like(params["gate"])
        g = sigmoid(params["gate"])
        return np.sum(dE * (self.e_s - self.e_d), axis=0) * g * (1.0 - g)


class GCN:
    """Vanilla graph convolution over the document network only.

    ``H1 = LeakyReLU(A_hat X W0)``, ``out = head(A_hat H1 W1)``.
    """

    kind = "gcn"

    def __init__(self, graph: HeteroGraph, doc_features, *, hidden=64, out_dim=2, layers=2,
                 leaky_slope=0.2, dropout=0.5, head="softmax"):
        X = np.asarray(doc_features, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != graph.n_doc:
            raise DimensionMismatch(f"doc features {X.shape} vs {graph.n_doc} documents")
        self.graph = graph
        self.X = X
        self.A = normalized_adjacency(graph.doc_graph(), DOC, DOC)
        self.hidden, self.out_dim, self.layers = hidden, out_dim, layers
        self.slope, self.dropout, self.head = leaky_slope, dropout, head
        self.n_doc = self.n = graph.n_doc

    def layer_dims(self, k):
        d_in = self.X.shape[1] if k == 0 else self.hidden
        return d_in, self.out_dim if k == self.layers - 1 else self.hidden

    def describe(self, seed=None) -> dict:
        meta = dict(model=self.kind, layers=self.layers, in_doc=self.X.shape[1],
                    hidden=self.hidden, out=self.out_dim, head=self.head, slope=self.slope,
                    dropout=self.dropout)
        if seed is not None:
            meta["seed"] = seed
        return meta

    def init_params(self, seed=0) -> ModelParams:
        rng = np.random.default_rng(seed)
        arrays = {f"W.{k}": glorot(rng, *self.layer_dims(k)) for k in range(self.layers)}
        return ModelParams(arrays, self.describe(seed))

    def forward(self, params: ModelParams, training=False, rng=None, keep_cache=False) -> ForwardResult:
        H = self.X
        caches = []
        for k in range(self.layers):
            W = params[f"W.{k}"]
            if W.shape != self.layer_dims(k):
                raise DimensionMismatch(f"W.{k} has shape {W.shape}, expected {self.layer_dims(k)}")
            mask = None
            if training and self.dropout > 0:
                keep = 1.0 - self.dropout
                mask = (rng.random(H.shape) < keep) / keep
                H = H * mask
            AH = self.A @ H
            Z = AH @ W
            if k < self.layers - 1:
                out = leaky_relu(Z, self.slope)
            elif self.head == "softmax":
                out = softmax(Z, axis=1)
            else:
                out = Z
            if not np.all(np.isfinite(out)):
                raise NonFiniteActivation(f"non-finite activation in layer {k}")
            caches.append(dict(AH=AH, Z=Z, H=out, drop=mask))
            H = out
        return ForwardResult(H, [], [], dict(layers=caches) if keep_cache else None)

    def backward(self, result: ForwardResult, d_output, params: ModelParams) -> dict:
        grads = {}
        dH = np.asarray(d_output, dtype=np.float64)
        caches = result.cache["layers"]
        for k in range(self.layers - 1, -1, -1):
            c = caches[k]
            if k < self.layers - 1:
                dZ = dH * leaky_relu_grad(c["Z"], self.slope)
            elif self.head == "softmax":
                dZ = softmax_backward(c["H"], dH, axis=1)
            else:
                dZ = dH
            grads[f"W.{k}"] = c["AH"].T @ dZ
            dH = self.A.T @ (dZ @ params[f"W.{k}"].T)
            if c["drop"] is not None:
                dH = dH * c["drop"]
        return {name: grads[name] for name in params.names}


def gcn_forward(graph: HeteroGraph, X, params: ModelParams, **kwargs) -> np.ndarray:
    """Inference-mode GCN output for a parameter set."""
    layers = sum(1 for n in params.names if n.startswith("W."))
    hidden = params["W.0"].shape[1]
    out_dim = params[f"W.{layers - 1}"].shape[1]
    model = GCN(graph, X, hidden=hidden, out_dim=out_dim, layers=layers, **kwargs)
    return model.forward(params).output
