"""Training and evaluation for the three model variants."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .data import Poi, Post, batches
from .fusion import TransTagger
from .hierarchy import (
    LcpnModel,
    PoiTree,
    build_tree,
    correlation_matrix,
    lcpn_fit,
    lcpn_predict_batch,
    mtl_classes,
    mtl_forward,
    mtl_labels,
    mtl_loss,
)
from .metrics import MetricsReport, metrics_report, poi_coords
from .textenc import Vocab, build_vocab
from .fusion import text_corpus

log = logging.getLogger(__name__)

EVAL_BATCH = 256


class TrainingError(RuntimeError):
    pass


@dataclass
class Tagger:
    """A model of any variant together with what it needs at prediction time."""

    config: RunConfig
    pois: list[Poi]
    model: TransTagger | None = None
    lcpn: LcpnModel | None = None
    tree: PoiTree | None = None

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def poi_ids(self) -> list[str]:
        if self.model is not None:
            return self.model.classes["poi"]
        return self.lcpn.tree.leaves()

    def models(self) -> dict[str, TransTagger]:
        if self.lcpn is not None:
            return self.lcpn.classifiers
        return {"main": self.model}

    def poi_scores(self, posts: Sequence[Post]) -> np.ndarray:
        """(len(posts), |POI|) scores in :attr:`poi_ids` order."""
        if self.lcpn is not None:
            index = {leaf: j for j, leaf in enumerate(self.poi_ids)}
            out = np.zeros((len(posts), len(index)))
            for i, pred in enumerate(lcpn_predict_batch(posts, self.lcpn)):
                for leaf, score in zip(pred.ranking, pred.scores):
                    out[i, index[leaf]] = score
            return out
        return self.model.predict_proba(posts, "poi", EVAL_BATCH)

    def rank(self, posts: Sequence[Post]) -> list[list[str]]:
        """Full POI rankings, best first."""
        if self.lcpn is not None:
            return [pred.ranking for pred in lcpn_predict_batch(posts, self.lcpn)]
        ids = self.poi_ids
        scores = self.poi_scores(posts)
        order = np.argsort(-scores, axis=1, kind="stable")
        return [[ids[j] for j in row] for row in order]


@dataclass
class TrainResult:
    tagger: Tagger
    initial_loss: float | None
    history: list[dict] = field(default_factory=list)


def _labels(model: TransTagger, posts: Sequence[Post], head: str = "poi") -> np.ndarray:
    index = {c: i for i, c in enumerate(model.classes[head])}
    try:
        return np.array([index[p.label] for p in posts], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} is not a class of head {head!r}") from None


def _ce_loss(model: TransTagger, posts, rng=None, training=False):
    return nx.cross_entropy(model.logits(posts, rng, training)["poi"], _labels(model, posts))


def _mean_loss(loss_fn, posts: Sequence[Post]) -> float:
    total = 0.0
    for lo in range(0, len(posts), EVAL_BATCH):
        chunk = posts[lo : lo + EVAL_BATCH]
        total += float(loss_fn(chunk).data) * len(chunk)
    return total / len(posts)


def _check_finite(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at {where}")


def _epoch(model: TransTagger, posts, loss_fn, state: nx.AdamState, batch_size: int, rng, where: str) -> float:
    losses = []
    for b, batch in enumerate(batches(posts, batch_size, rng)):
        loss = loss_fn(batch, rng, True)
        value = float(loss.data)
        _check_finite(value, f"{where}, batch {b}")
        grads = nx.backward(loss)
        try:
            nx.adam_step(model.params, grads, state)
        except FloatingPointError as exc:
            raise TrainingError(f"{where}, batch {b}: {exc}") from exc
        losses.append(value * len(batch))
    return sum(losses) / len(posts)


def _val_acc1(tagger: Tagger, val: Sequence[Post]) -> float | None:
    if not val:
        return None
    top = [r[0] for r in tagger.rank(val)]
    return float(np.mean([t == p.label for t, p in zip(top, val)]))


def _vocab(cfg: RunConfig, posts: Sequence[Post]) -> Vocab:
    return build_vocab(text_corpus(posts, cfg.schema), cfg.vocab_size)


def _new_model(cfg: RunConfig, classes, posts, vocab, rng) -> TransTagger:
    return TransTagger.build(
        replace(cfg.schema), replace(cfg.encoder), replace(cfg.fusion), classes, posts, rng, vocab=vocab
    )


def train(cfg: RunConfig, train_posts: Sequence[Post], val_posts: Sequence[Post], pois: Sequence[Poi]) -> TrainResult:
    """Train ``cfg.variant`` for exactly ``cfg.epochs`` epochs.

    Each history row records the epoch, the running mean of the mini-batch
    losses (``batch_loss``), the eval-mode loss over the whole training set at
    the end of the epoch (``train_loss``) and validation acc@1.
    ``initial_loss`` is the eval-mode training loss before the first update.
    """
    cfg.validate()
    if not train_posts:
        raise ValueError("empty training set")
    for p in list(train_posts) + list(val_posts):
        if p.label is None:
            raise ValueError(f"post {p.id} is unlabelled")
    init_rng = np.random.default_rng(cfg.seed)
    run_rng = np.random.default_rng([cfg.seed, 1])
    vocab = _vocab(cfg, train_posts)
    pois = list(pois)
    if cfg.variant == "hier":
        return _train_hier(cfg, train_posts, val_posts, pois, vocab, init_rng, run_rng)

    tree = None
    if cfg.variant == "mtl":
        tree = build_tree(pois, ["theme", "subtheme", "poi"])
        classes = mtl_classes(tree)
        M_ts = correlation_matrix(tree, "theme", "subtheme").M
        M_sp = correlation_matrix(tree, "subtheme", "poi").M

        def loss_fn(batch, rng=None, training=False):
            out = mtl_forward(batch, model, rng, training)
            labels = mtl_labels(tree, classes, [p.label for p in batch])
            return mtl_loss(out, labels, M_ts, M_sp, cfg.mtl_weights, cfg.mtl_lambda)

    else:
        classes = {"poi": sorted(p.id for p in pois)}

        def loss_fn(batch, rng=None, training=False):
            return _ce_loss(model, batch, rng, training)

    model = _new_model(cfg, classes, train_posts, vocab, init_rng)
    tagger = Tagger(cfg, pois, model=model, tree=tree)
    if cfg.epochs == 0:
        return TrainResult(tagger, None)
    state = nx.AdamState(lr=cfg.lr)
    initial = _mean_loss(loss_fn, train_posts)
    _check_finite(initial, "initialisation")
    result = TrainResult(tagger, initial)
    for epoch in range(1, cfg.epochs + 1):
        batch_loss = _epoch(model, train_posts, loss_fn, state, cfg.batch_size, run_rng, f"epoch {epoch}")
        row = {
            "epoch": epoch,
            "batch_loss": batch_loss,
            "train_loss": _mean_loss(loss_fn, train_posts),
            "val_acc1": _val_acc1(tagger, val_posts),
        }
        log.info("epoch %d: %s", epoch, row)
        result.history.append(row)
    return result


def _train_hier(cfg, train_posts, val_posts, pois, vocab, init_rng, run_rng) -> TrainResult:
    tree = build_tree(pois, cfg.hier_levels)

    def make_local(parent, children, local_posts):
        return _new_model(cfg, {"poi": list(children)}, train_posts, vocab, init_rng)

    lcpn = lcpn_fit(train_posts, tree, make_local, cfg.theta)
    tagger = Tagger(cfg, pois, lcpn=lcpn, tree=tree)
    if cfg.epochs == 0:
        return TrainResult(tagger, None)
    states = {parent: nx.AdamState(lr=cfg.lr) for parent in lcpn.classifiers}
    n_routed = sum(len(v) for v in lcpn.local_posts.values())

    def node_loss(parent):
        model = lcpn.classifiers[parent]
        return lambda batch, rng=None, training=False: _ce_loss(model, batch, rng, training)

    def routed_mean():
        return sum(_mean_loss(node_loss(k), v) * len(v) for k, v in lcpn.local_posts.items()) / n_routed

    initial = routed_mean()
    result = TrainResult(tagger, initial)
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for parent, model in lcpn.classifiers.items():
            local = lcpn.local_posts[parent]
            where = f"epoch {epoch}, node {parent}"
            total += _epoch(model, local, node_loss(parent), states[parent], cfg.batch_size, run_rng, where) * len(local)
        row = {
            "epoch": epoch,
            "batch_loss": total / n_routed,
            "train_loss": routed_mean(),
            "val_acc1": _val_acc1(tagger, val_posts),
        }
        log.info("epoch %d: %s", epoch, row)
        result.history.append(row)
    return result


def evaluate(tagger: Tagger, posts: Sequence[Post]) -> MetricsReport:
    """POI-level acc@{1,5,10,20} and distance errors."""
    if not posts:
        raise ValueError("evaluate on empty data")
    known = set(tagger.poi_ids)
    for p in posts:
        if p.label not in known:
            raise ValueError(f"post {p.id} label {p.label!r} is not among the model's {len(known)} POI classes")
    if len(known) != len(tagger.pois):
        raise ValueError(f"model has {len(known)} POI classes but {len(tagger.pois)} POIs are attached")
    return metrics_report(tagger.rank(posts), [p.label for p in posts], poi_coords(tagger.pois))
