"""Objectives, optimizer and training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergedLoss, EmptyMask, EmptyPairs, GraphTooDense, NoEdges
from .hga_model import ModelParams
from .semantic_graph import HeteroGraph

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# losses


def _as_index(mask, n):
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return np.flatnonzero(mask)
    return mask.astype(np.int64).ravel()


def supervised_loss(H, labels, mask) -> float:
    """Mean cross entropy over the masked rows of a probability matrix.

    ``labels`` holds one class index per row of ``H`` (ignored outside the
    mask); probabilities are clamped to ``[1e-12, 1]`` before the log.
    """
    idx = _as_index(mask, len(H))
    if idx.size == 0:
        raise EmptyMask("supervised loss needs at least one labeled node")
    y = np.asarray(labels)[idx]
    p = np.clip(np.asarray(H)[idx, y], PROB_FLOOR, 1.0)
    return float(-np.mean(np.log(p)))


def supervised_loss_grad(H, labels, mask) -> np.ndarray:
    idx = _as_index(mask, len(H))
    if idx.size == 0:
        raise EmptyMask("supervised loss needs at least one labeled node")
    H = np.asarray(H)
    y = np.asarray(labels)[idx]
    p = H[idx, y]
    g = np.zeros_like(H)
    # clamped entries have zero slope
    g[idx, y] = np.where(p > PROB_FLOOR, -1.0 / (np.maximum(p, PROB_FLOOR) * idx.size), 0.0)
    return g


@dataclass(frozen=True)
class PairSets:
    """Positive and negative document pairs as node-index arrays."""

    positives: np.ndarray
    negatives: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        pos = {tuple(p) for p in np.asarray(self.positives).reshape(-1, 2)}
        neg = {tuple(p) for p in np.asarray(self.negatives).reshape(-1, 2)}
        canon = lambda s: {(min(a, b), max(a, b)) for a, b in s}
        if canon(pos) & canon(neg):
            raise ValueError("positive and negative pair sets overlap")
        if any(a == b for a, b in pos | neg):
            raise ValueError("pairs must join distinct nodes")

    def __len__(self):
        return len(self.positives) + len(self.negatives)

    def swapped(self) -> "PairSets":
        return PairSets(self.negatives, self.positives, self.seed)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def unsupervised_loss(H, pairs: PairSets) -> float:
    """Mean negative-sampling loss over positive and negative pairs."""
    total = len(pairs)
    if total == 0:
        raise EmptyPairs("negative sampling loss needs at least one pair")
    H = np.asarray(H)
    pos, neg = np.asarray(pairs.positives).reshape(-1, 2), np.asarray(pairs.negatives).reshape(-1, 2)
    sp = np.sum(H[pos[:, 0]] * H[pos[:, 1]], axis=1)
    sn = np.sum(H[neg[:, 0]] * H[neg[:, 1]], axis=1)
    return float(-(np.sum(_log_sigmoid(sp)) + np.sum(_log_sigmoid(-sn))) / total)


def unsupervised_loss_grad(H, pairs: PairSets) -> np.ndarray:
    total = len(pairs)
    if total == 0:
        raise EmptyPairs("negative sampling loss needs at least one pair")
    H = np.asarray(H)
    g = np.zeros_like(H)
    pos, neg = np.asarray(pairs.positives).reshape(-1, 2), np.asarray(pairs.negatives).reshape(-1, 2)
    # d/dx -log sigmoid(x) = -sigmoid(-x)
    cp = -np.exp(_log_sigmoid(-np.sum(H[pos[:, 0]] * H[pos[:, 1]], axis=1))) / total
    cn = np.exp(_log_sigmoid(np.sum(H[neg[:, 0]] * H[neg[:, 1]], axis=1))) / total
    np.add.at(g, pos[:, 0], cp[:, None] * H[pos[:, 1]])
    np.add.at(g, pos[:, 1], cp[:, None] * H[pos[:, 0]])
    np.add.at(g, neg[:, 0], cn[:, None] * H[neg[:, 1]])
    np.add.at(g, neg[:, 1], cn[:, None] * H[neg[:, 0]])
    return g


def sample_pairs(graph: HeteroGraph, neg_ratio: int = 1, seed: int = 0) -> PairSets:
    """Doc-doc edges as positives plus uniformly drawn non-adjacent doc pairs.

    Negatives are rejection sampled (distinct, unordered, no self pairs);
    gives up with :class:`GraphTooDense` after ``100 x`` the requested
    number of draws.
    """
    if neg_ratio < 1:
        raise ValueError("neg_ratio must be >= 1")
    if not graph.edges_dd:
        raise NoEdges("document graph has no edges")
    pos_ix = {d: i for i, d in enumerate(graph.doc_ids)}
    positives = np.array(sorted({(min(pos_ix[a], pos_ix[b]), max(pos_ix[a], pos_ix[b]))
                                 for a, b in graph.edges_dd}), dtype=np.int64)
    taken = {tuple(p) for p in positives}
    want = neg_ratio * len(positives)
    n = graph.n_doc
    rng = np.random.default_rng(seed)
    negatives = []
    attempts = 0
    while len(negatives) < want:
        if attempts >= 100 * want:
            raise GraphTooDense(f"found {len(negatives)} of {want} negative pairs")
        attempts += 1
        a, b = rng.integers(0, n, size=2)
        if a == b:
            continue
        pair = (int(min(a, b)), int(max(a, b)))
        if pair in taken:
            continue
        taken.add(pair)
        negatives.append(pair)
    return PairSets(positives, np.array(negatives, dtype=np.int64).reshape(-1, 2), seed)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.005
    weight_decay: float = 5e-4
    epochs: int = 200
    patience: int = 30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        # zero is allowed: a frozen run
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, lr=0.005, weight_decay=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd = lr, weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ModelParams, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name in params.names:
            theta = params.arrays[name]
            g = grads[name] + self.wd * theta
            m = self.m.setdefault(name, np.zeros_like(theta))
            v = self.v.setdefault(name, np.zeros_like(theta))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            theta -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class SupervisedTask:
    labels: np.ndarray  # one entry per output row, -1 where unknown
    train_idx: np.ndarray
    val_idx: np.ndarray

    objective = "supervised"

    def loss(self, H):
        return supervised_loss(H, self.labels, self.train_idx)

    def grad(self, H):
        return supervised_loss_grad(H, self.labels, self.train_idx)

    def validate(self, H):
        """Validation accuracy (higher is better) and validation loss."""
        if self.val_idx.size == 0:
            return float("nan"), float("nan")
        pred = np.argmax(H[self.val_idx], axis=1)
        acc = float(np.mean(pred == self.labels[self.val_idx]))
        return acc, supervised_loss(H, self.labels, self.val_idx)


@dataclass
class UnsupervisedTask:
    pairs: PairSets
    val_pairs: PairSets | None = None

    objective = "unsupervised"

    def loss(self, H):
        return unsupervised_loss(H, self.pairs)

    def grad(self, H):
        return unsupervised_loss_grad(H, self.pairs)

    def validate(self, H):
        """Negated validation loss, so that higher is better."""
        loss = unsupervised_loss(H, self.val_pairs if self.val_pairs is not None else self.pairs)
        return -loss, loss


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_metric"])
            for e, (tl, vm) in enumerate(zip(self.train_loss, self.val_metric)):
                w.writerow([e, repr(tl), repr(vm)])

    @classmethod
    def from_csv(cls, path) -> "History":
        h = cls()
        with Path(path).open(encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                h.train_loss.append(float(row["train_loss"]))
                h.val_metric.append(float(row["val_metric"]))
        return h


def loss_and_grads(model, params: ModelParams, task, training=False, rng=None):
    res = model.forward(params, training=training, rng=rng, keep_cache=True)
    loss = task.loss(res.output)
    grads = model.backward(res, task.grad(res.output), params)
    return loss, grads


def train(model, params: ModelParams, task, opt: OptimizerConfig = OptimizerConfig(),
          callback=None) -> tuple[ModelParams, History]:
    """Full-batch Adam with early stopping on the validation metric.

    Returns a copy of the parameters from the best validation epoch. Ties
    on the validation metric are broken by the validation loss.
    """
    params = params.copy()
    rng = np.random.default_rng(opt.seed)
    adam = Adam(opt.learning_rate, opt.weight_decay, opt.beta1, opt.beta2, opt.eps)
    history = History()
    best_key, best_params, since_best = None, params.copy(), 0
    for epoch in range(opt.epochs):
        loss, grads = loss_and_grads(model, params, task, training=True, rng=rng)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergedLoss(f"non-finite loss or gradient at epoch {epoch}")
        adam.step(params, grads)
        metric, val_loss = task.validate(model.forward(params).output)
        history.train_loss.append(loss)
        history.val_metric.append(metric)
        key = (metric, -val_loss)
        if best_key is None or (key > best_key and not np.isnan(metric)):
            best_key, best_params, since_best = key, params.copy(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
        if callback is not None:
            callback(epoch, loss, metric)
        if since_best > opt.patience:
            log.debug("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break
    return best_params, history


def grad_check(model, params: ModelParams, task, eps: float = 1e-5, floor: float = 1e-6) -> dict:
    """Compare analytic gradients with central finite differences.

    Returns ``{group: {"max_rel_error", "max_abs_analytic", "max_abs_numeric"}}``
    with one entry per parameter group. The relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, analytic = loss_and_grads(model, params, task)
    probe = params.copy()
    report: dict[str, dict] = {}
    for name in probe.names:
        arr = probe.arrays[name]
        num = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = task.loss(model.forward(probe).output)
            flat[i] = orig - eps
            lm = task.loss(model.forward(probe).output)
            flat[i] = orig
            nflat[i] = (lp - lm) / (2 * eps)
        a = analytic[name]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        entry = report.setdefault(ModelParams.group(name), dict(
            max_rel_error=0.0, max_abs_analytic=0.0, max_abs_numeric=0.0, params=[]))
        entry["params"].append(name)
        if rel.size:
            entry["max_rel_error"] = max(entry["max_rel_error"], float(rel.max()))
            entry["max_abs_analytic"] = max(entry["max_abs_analytic"], float(np.abs(a).max()))
            entry["max_abs_numeric"] = max(entry["max_abs_numeric"], float(np.abs(num).max()))
    return report
