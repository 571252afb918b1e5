"""Location class hierarchy, LCPN top-down prediction and the multi-task loss."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data import Poi, Post
from .fusion import TransTagger
from .numerics import Tensor

log = logging.getLogger(__name__)

LEVELS = ("theme", "subtheme", "poi")
ROOT = "root"


@dataclass
class Node:
    id: str
    name: str
    level: str
    parent: str | None
    children: list[str] = field(default_factory=list)
    lat: float | None = None
    lon: float | None = None


@dataclass
class PoiTree:
    levels: list[str]
    nodes: dict[str, Node]

    @property
    def root(self) -> Node:
        return self.nodes[ROOT]

    def level_nodes(self, level: str) -> list[str]:
        if level not in self.levels:
            raise KeyError(f"level {level!r} not in tree levels {self.levels}")
        return [nid for nid in self._preorder() if self.nodes[nid].level == level]

    def leaves(self) -> list[str]:
        return self.level_nodes("poi")

    def _preorder(self) -> list[str]:
        out, stack = [], [ROOT]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return out

    def ancestors(self, nid: str) -> list[str]:
        """Ancestors from the parent up to and including the root."""
        out = []
        node = self.nodes[nid]
        while node.parent is not None:
            out.append(node.parent)
            node = self.nodes[node.parent]
        return out

    def path(self, nid: str) -> list[str]:
        return list(reversed(self.ancestors(nid))) + [nid]

    def ancestor_at(self, nid: str, level: str) -> str:
        for a in [nid] + self.ancestors(nid):
            if self.nodes[a].level == level:
                return a
        raise KeyError(f"{nid} has no ancestor at level {level!r}")

    def descendants_at(self, nid: str, level: str) -> list[str]:
        return [leaf for leaf in self.level_nodes(level) if nid in self.ancestors(leaf)]

    def parents(self) -> list[str]:
        """Internal nodes in pre-order."""
        return [nid for nid in self._preorder() if self.nodes[nid].children]

    def to_json(self) -> dict:
        nodes = []
        for nid in self._preorder():
            n = self.nodes[nid]
            d = {"id": n.id, "name": n.name, "level": n.level, "parent": n.parent, "children": n.children}
            if n.level == "poi":
                d["lat"], d["lon"] = n.lat, n.lon
            nodes.append(d)
        return {"levels": self.levels, "nodes": nodes}

    @classmethod
    def from_json(cls, obj: dict) -> "PoiTree":
        nodes = {
            d["id"]: Node(d["id"], d["name"], d["level"], d["parent"], list(d["children"]), d.get("lat"), d.get("lon"))
            for d in obj["nodes"]
        }
        return cls(list(obj["levels"]), nodes)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PoiTree":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _node_id(poi: Poi, level: str) -> tuple[str, str]:
    if level == "theme":
        return f"theme:{poi.theme}", poi.theme
    if level == "subtheme":
        return f"subtheme:{poi.theme}/{poi.subtheme}", poi.subtheme
    return poi.id, poi.name


def build_tree(pois: Sequence[Poi], levels: Sequence[str] = ("theme", "poi")) -> PoiTree:
    levels = list(levels)
    if not levels or levels[-1] != "poi" or any(lv not in LEVELS for lv in levels):
        raise ValueError(f"levels must be an ordered subset of {LEVELS} ending in 'poi', got {levels}")
    if [lv for lv in LEVELS if lv in levels] != levels:
        raise ValueError(f"levels out of order: {levels}")
    nodes = {ROOT: Node(ROOT, ROOT, "root", None)}
    seen = set()
    for poi in pois:
        if poi.id in seen:
            raise ValueError(f"duplicate POI id {poi.id!r}")
        seen.add(poi.id)
        if not poi.theme:
            raise ValueError(f"POI {poi.id!r} has an empty theme")
        if "subtheme" in levels and not poi.subtheme:
            raise ValueError(f"POI {poi.id!r} has an empty subtheme")
        parent = ROOT
        for level in levels:
            nid, name = _node_id(poi, level)
            if nid not in nodes:
                nodes[nid] = Node(nid, name, level, parent)
                nodes[parent].children.append(nid)
            elif nodes[nid].parent != parent:
                raise ValueError(f"node {nid!r} reached from two parents")
            parent = nid
        nodes[poi.id].lat, nodes[poi.id].lon = poi.lat, poi.lon
    for n in nodes.values():
        n.children.sort()
    return PoiTree(levels, nodes)


@dataclass
class CorrelationMatrix:
    M: np.ndarray
    coarse: list[str]
    fine: list[str]


def correlation_matrix(tree: PoiTree, coarse: str, fine: str) -> CorrelationMatrix:
    """Row-normalised membership matrix from coarse classes to fine classes."""
    if coarse not in tree.levels or fine not in tree.levels:
        raise KeyError(f"levels {coarse!r}/{fine!r} not both in tree levels {tree.levels}")
    if tree.levels.index(coarse) >= tree.levels.index(fine):
        raise ValueError(f"{coarse!r} is not above {fine!r}")
    rows, cols = tree.level_nodes(coarse), tree.level_nodes(fine)
    row_of = {c: i for i, c in enumerate(rows)}
    M = np.zeros((len(rows), len(cols)))
    for j, f in enumerate(cols):
        M[row_of[tree.ancestor_at(f, coarse)], j] = 1.0
    M /= M.sum(axis=1, keepdims=True)
    return CorrelationMatrix(M, rows, cols)


# ---------------------------------------------------------------------------
# hierTagger (local classifier per parent node)


@dataclass
class LcpnModel:
    tree: PoiTree
    classifiers: dict[str, TransTagger]
    theta: float = 0.01
    # parents without a classifier: fixed child distribution
    priors: dict[str, np.ndarray] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    local_posts: dict[str, list[Post]] = field(default_factory=dict, repr=False)


def local_target(tree: PoiTree, parent: str, leaf: str) -> str | None:
    """Child of ``parent`` on the path to ``leaf``, or None if outside its subtree."""
    path = tree.path(leaf)
    if parent not in path:
        return None
    return path[path.index(parent) + 1]


MakeLocal = Callable[[str, list[str], list[Post]], TransTagger]


def lcpn_fit(posts: Sequence[Post], tree: PoiTree, make_local: MakeLocal, theta: float = 0.01) -> LcpnModel:
    """Set up one local classifier per parent with two or more children.

    Posts are routed to every parent on their path and relabelled with the
    child they descend through; ``make_local(parent_id, child_ids,
    subtree_posts)`` returns the classifier for that parent, whose ``"poi"``
    head ranges over ``child_ids``.  The routed posts are kept in
    ``local_posts`` so each classifier can be optimised on its own subtree.
    """
    for p in posts:
        if p.label is None or p.label not in tree.nodes or tree.nodes[p.label].level != "poi":
            raise ValueError(f"post {p.id} is not labelled with a leaf of the tree")
    model = LcpnModel(tree, {}, theta)
    for parent in tree.parents():
        children = tree.nodes[parent].children
        if len(children) == 1:
            model.priors[parent] = np.ones(1)
            continue
        local = []
        for p in posts:
            child = local_target(tree, parent, p.label)
            if child is not None:
                local.append(replace(p, label=child))
        if not local:
            msg = f"no training posts under {parent!r}; using a uniform prior over its {len(children)} children"
            log.warning(msg)
            model.warnings.append(msg)
            model.priors[parent] = np.full(len(children), 1.0 / len(children))
            continue
        model.local_posts[parent] = local
        model.classifiers[parent] = make_local(parent, children, local)
    return model


def conditional_probs(model: LcpnModel, posts: Sequence[Post]) -> dict[str, np.ndarray]:
    """Per parent, an array (len(posts), n_children) of child probabilities."""
    out = {}
    for parent in model.tree.parents():
        if parent in model.classifiers:
            out[parent] = model.classifiers[parent].predict_proba(posts)
        else:
            out[parent] = np.tile(model.priors[parent], (len(posts), 1))
    return out


@dataclass
class LcpnPrediction:
    ranking: list[str]
    scores: list[float]
    expanded: set[str]


def descend(tree: PoiTree, cond: Mapping[str, np.ndarray], theta: float) -> LcpnPrediction:
    """Beam descent from the root for one example.

    ``cond[parent]`` holds the child probabilities.  A child whose conditional
    probability is below ``theta`` is pruned unless it is the argmax child.
    Leaf score is the product of conditional probabilities on its path.
    Pruned leaves follow the scored ones with score 0, in tree order.
    """
    scores: dict[str, float] = {}
    expanded: set[str] = set()
    frontier = [(ROOT, 1.0)]
    while frontier:
        nid, score = frontier.pop()
        node = tree.nodes[nid]
        if not node.children:
            scores[nid] = score
            continue
        expanded.add(nid)
        probs = np.asarray(cond[nid], dtype=np.float64)
        best = int(np.argmax(probs))
        for j, child in enumerate(node.children):
            if probs[j] >= theta or j == best:
                frontier.append((child, score * float(probs[j])))
    leaves = tree.leaves()
    position = {leaf: i for i, leaf in enumerate(leaves)}
    kept = sorted(scores, key=lambda leaf: (-scores[leaf], position[leaf]))
    pruned = [leaf for leaf in leaves if leaf not in scores]
    return LcpnPrediction(kept + pruned, [scores[k] for k in kept] + [0.0] * len(pruned), expanded)


def lcpn_predict_batch(posts: Sequence[Post], model: LcpnModel) -> list[LcpnPrediction]:
    cond = conditional_probs(model, posts)
    return [descend(model.tree, {k: v[i] for k, v in cond.items()}, model.theta) for i in range(len(posts))]


def lcpn_predict(post: Post, model: LcpnModel) -> LcpnPrediction:
    return lcpn_predict_batch([post], model)[0]


# ---------------------------------------------------------------------------
# mtlTagger (hard parameter sharing)

MTL_LEVELS = ("theme", "subtheme", "poi")
MTL_WEIGHTS = (0.1, 0.1, 1.0)


@dataclass
class MtlOutput:
    """Logits per level; probabilities via :attr:`q_theme`, :attr:`q_subtheme`, :attr:`p_poi`."""

    logits: dict[str, Tensor]

    def probs(self, level: str) -> Tensor:
        return nx.softmax(self.logits[level], axis=-1)

    @property
    def q_theme(self) -> np.ndarray:
        return self.probs("theme").data

    @property
    def q_subtheme(self) -> np.ndarray:
        return self.probs("subtheme").data

    @property
    def p_poi(self) -> np.ndarray:
        return self.probs("poi").data


def mtl_classes(tree: PoiTree) -> dict[str, list[str]]:
    return {level: tree.level_nodes(level) for level in MTL_LEVELS}


def mtl_forward(posts: Sequence[Post], model: TransTagger, rng=None, training: bool = False) -> MtlOutput:
    missing = [lv for lv in MTL_LEVELS if lv not in model.classes]
    if missing:
        raise ValueError(f"model lacks heads for {missing}")
    return MtlOutput(model.logits(posts, rng, training))


def mtl_labels(tree: PoiTree, classes: Mapping[str, list[str]], leaves: Sequence[str]) -> dict[str, np.ndarray]:
    out = {}
    for level in MTL_LEVELS:
        index = {c: i for i, c in enumerate(classes[level])}
        out[level] = np.array([index[tree.ancestor_at(leaf, level)] for leaf in leaves], dtype=np.int64)
    return out


def mtl_loss(
    out: MtlOutput,
    labels: Mapping[str, np.ndarray],
    M_ts: np.ndarray,
    M_sp: np.ndarray,
    weights: Sequence[float] = MTL_WEIGHTS,
    lam: float = 0.1,
) -> Tensor:
    """Weighted per-level cross-entropy plus the coarse-to-fine consistency term.

    The consistency term is the cross-entropy of each finer prediction against
    the coarser prediction pushed through the correlation matrix.
    """
    total = None
    for w, level in zip(weights, MTL_LEVELS):
        n_classes = out.logits[level].shape[-1]
        y = np.asarray(labels[level], dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"{level} label outside [0, {n_classes})")
        term = nx.mul(nx.cross_entropy(out.logits[level], y), float(w))
        total = term if total is None else nx.add(total, term)
    if lam != 0.0:
        theme_to_sub = nx.matmul(out.probs("theme"), M_ts)
        sub_to_poi = nx.matmul(out.probs("subtheme"), M_sp)
        consistency = nx.add(
            nx.cross_entropy(out.logits["subtheme"], theme_to_sub),
            nx.cross_entropy(out.logits["poi"], sub_to_poi),
        )
        total = nx.add(total, nx.mul(consistency, float(lam)))
    return total
