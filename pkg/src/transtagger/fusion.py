"""transTagger: per-field representations fused by a transformer encoder.

A post becomes a feature matrix with one row per field (Text fields, then
categorical fields, then time fields).  Fixed sinusoidal position codes are
concatenated to (or added onto) the rows, a linear map brings the rows to the
fusion width, a stack of encoder blocks mixes them, and the flattened result
feeds one softmax head per label level.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import layers, temporal, textenc
from . import numerics as nx
from .data import Post
from .layers import Params
from .numerics import Tensor
from .textenc import EncoderConfig, Vocab

CT_MODES = ("text", "onehot")
TIME_MODES = ("text", "onehot", "unihier")
POSITION_MODES = ("concat", "add", "none")
UNK_CATEGORY = "[UNK]"
_BUCKET = 128


@dataclass
class FeatureSchema:
    text_fields: list[str] = field(default_factory=lambda: ["text", "user_location", "user_description"])
    ct_fields: list[str] = field(default_factory=lambda: ["source"])
    time_fields: list[str] = field(default_factory=lambda: ["created_at"])
    ct_mode: str = "text"
    time_mode: str = "unihier"
    time_elements: list[str] = field(default_factory=lambda: list(temporal.DEFAULT_ELEMENTS))

    def validate(self) -> None:
        if not self.text_fields:
            raise ValueError("schema needs at least one Text field")
        if self.ct_mode not in CT_MODES:
            raise ValueError(f"ct_mode must be one of {CT_MODES}, got {self.ct_mode!r}")
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"time_mode must be one of {TIME_MODES}, got {self.time_mode!r}")
        names = self.text_fields + self.ct_fields + self.time_fields
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in schema: {names}")

    @property
    def n_rows(self) -> int:
        return len(self.text_fields) + len(self.ct_fields) + len(self.time_fields)


@dataclass
class FusionConfig:
    layers: int = 3
    heads: int = 4
    width: int = 128
    ff: int = 256
    position_mode: str = "concat"
    use_fusion_encoder: bool = True
    dropout: float = 0.1

    def validate(self) -> None:
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"position_mode must be one of {POSITION_MODES}, got {self.position_mode!r}")
        if self.width % self.heads:
            raise ValueError(f"fusion width {self.width} not divisible by {self.heads} heads")
        if self.layers < 0:
            raise ValueError("fusion layers must be >= 0")

    @property
    def active_layers(self) -> int:
        return self.layers if self.use_fusion_encoder else 0


def make_positional_encoding(rows: int, hidden: int) -> np.ndarray:
    """Fixed sinusoidal codes: sin at even columns, cos at odd, frequency 10000^(-2i/H)."""
    if hidden % 2:
        raise ValueError(f"positional encoding width must be even, got {hidden}")
    if rows < 1:
        raise ValueError("rows must be >= 1")
    pos = np.arange(rows, dtype=np.float64)[:, None]
    i2 = np.arange(0, hidden, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i2 / hidden)
    pe = np.empty((rows, hidden))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def apply_positions(F: Tensor, pe: np.ndarray, mode: str) -> Tensor:
    """Attach position codes to a (rows, H) or (B, rows, H) feature tensor."""
    rows = F.shape[-2]
    if pe.shape[0] != rows:
        raise ValueError(f"positional encoding has {pe.shape[0]} rows, features have {rows}")
    if mode == "none":
        return F
    if mode == "add":
        return nx.add(F, pe)
    if mode == "concat":
        return nx.concat([F, np.broadcast_to(pe, F.shape[:-1] + pe.shape[-1:])], axis=-1)
    raise ValueError(f"unknown position mode {mode!r}")


def fuse(X: Tensor, cfg: FusionConfig, params: Params, rng=None, training: bool = False) -> Tensor:
    """Project (B, rows, W) inputs to the fusion width and run the encoder blocks."""
    w_in = params["fusion.in.w"]
    if X.shape[-1] != w_in.shape[0]:
        raise ValueError(f"fusion input width {X.shape[-1]} != projection input {w_in.shape[0]}")
    h = layers.linear(params, "fusion.in", X)
    for i in range(cfg.active_layers):
        h = layers.encoder_block(params, f"fusion.block{i}", h, cfg.heads, None, cfg.dropout, rng, training)
    return h


def classify_logits(fused: Tensor, params: Params, head: str) -> Tensor:
    batch = fused.shape[0]
    flat = nx.reshape(fused, (batch, -1))
    return layers.linear(params, f"head.{head}", flat)


def classify(fused: Tensor, params: Params, head: str = "poi") -> Tensor:
    """POI probabilities for a (B, rows, d_f) fused tensor."""
    return nx.softmax(classify_logits(fused, params, head), axis=-1)


@dataclass
class TransTagger:
    """A trained or freshly initialised transTagger with one or more heads.

    ``classes`` maps each head name to its ordered class labels; a plain
    transTagger has the single head ``"poi"``.
    """

    schema: FeatureSchema
    encoder: EncoderConfig
    fusion: FusionConfig
    vocab: Vocab
    categories: dict[str, list[str]]
    classes: dict[str, list[str]]
    params: Params = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        schema: FeatureSchema,
        encoder: EncoderConfig,
        fusion: FusionConfig,
        classes: dict[str, list[str]],
        train_posts: Sequence[Post],
        rng: np.random.Generator,
        vocab_size: int = 5000,
        vocab: Vocab | None = None,
    ) -> "TransTagger":
        if vocab is None:
            vocab = textenc.build_vocab(text_corpus(train_posts, schema), vocab_size)
        categories = {
            f: [UNK_CATEGORY] + sorted({p.field(f) for p in train_posts}) for f in schema.ct_fields
        }
        model = cls(schema, encoder, fusion, vocab, categories, {k: list(v) for k, v in classes.items()})
        model.init_params(rng)
        return model

    def init_params(self, rng: np.random.Generator) -> None:
        self.schema.validate()
        self.fusion.validate()
        for head, labels in self.classes.items():
            if not labels:
                raise ValueError(f"head {head!r} has no classes")
        H = self.encoder.hidden
        p: Params = {}
        textenc.init_text_encoder(p, self.encoder, len(self.vocab), rng)
        if self.schema.ct_mode == "onehot":
            for f in self.schema.ct_fields:
                layers.uniform(p, f"ct.{f}.proj", (len(self.categories[f]), H), rng)
        if self.schema.time_fields:
            if self.schema.time_mode == "unihier":
                temporal.init_unihier(p, H, rng, self.schema.time_elements)
            elif self.schema.time_mode == "onehot":
                temporal.init_time_onehot(p, H, rng)
        d_in = 2 * H if self.fusion.position_mode == "concat" else H
        layers.init_linear(p, "fusion.in", d_in, self.fusion.width, rng)
        for i in range(self.fusion.active_layers):
            layers.init_encoder_block(p, f"fusion.block{i}", self.fusion.width, self.fusion.ff, rng)
        flat = self.schema.n_rows * self.fusion.width
        for head, labels in self.classes.items():
            layers.init_linear(p, f"head.{head}", flat, len(labels), rng)
        self.params = p

    # -- representations ---------------------------------------------------

    def _text_fields(self) -> list[tuple[str, str]]:
        """(field, kind) pairs routed through the text encoder, in row order."""
        out = [(f, "text") for f in self.schema.text_fields]
        if self.schema.ct_mode == "text":
            out += [(f, "ct") for f in self.schema.ct_fields]
        if self.schema.time_mode == "text":
            out += [(f, "time") for f in self.schema.time_fields]
        return out

    def encode_strings(self, strings: Sequence[str], rng=None, training: bool = False) -> Tensor:
        """[CLS] vectors (len(strings), H) for raw strings.

        Each distinct string is encoded once; distinct strings are sorted by
        length and padded per bucket to keep padding small.
        """
        uniq = sorted(set(strings))
        seqs = [textenc.tokenize(s, self.vocab, self.encoder.max_len) for s in uniq]
        order = sorted(range(len(seqs)), key=lambda i: (len(seqs[i]), i))
        chunks = []
        for lo in range(0, len(order), _BUCKET):
            bucket = [seqs[i] for i in order[lo : lo + _BUCKET]]
            ids, mask = textenc.pad_batch(bucket)
            chunks.append(textenc.encode_batch(ids, mask, self.encoder, self.params, rng, training).C)
        C = chunks[0] if len(chunks) == 1 else nx.concat(chunks, axis=0)
        row_of = {uniq[i]: r for r, i in enumerate(order)}
        return nx.slice_(C, np.array([row_of[s] for s in strings], dtype=np.int64))

    def encode_categorical(self, field_name: str, values: Sequence[str], rng=None, training: bool = False) -> Tensor:
        if self.schema.ct_mode == "text":
            return self.encode_strings(values, rng, training)
        cats = self.categories[field_name]
        lookup = {c: i for i, c in enumerate(cats)}
        idx = np.array([lookup.get(v, 0) for v in values], dtype=np.int64)
        return nx.embed_lookup(self.params[f"ct.{field_name}.proj"], idx)

    def encode_time(self, stamps: Sequence[str], rng=None, training: bool = False) -> Tensor:
        mode = self.schema.time_mode
        if mode == "text":
            return self.encode_strings([temporal.time_as_text(t) for t in stamps], rng, training)
        elements = [temporal.decompose_timestamp(t) for t in stamps]
        if mode == "unihier":
            return temporal.unihier_embed(elements, self.params, self.schema.time_elements)
        return temporal.time_one_hot(elements, self.params)

    def assemble_features(self, posts: Sequence[Post], rng=None, training: bool = False) -> Tensor:
        """Feature matrices (B, m+n+t, H), rows in schema order."""
        B = len(posts)
        if B == 0:
            raise ValueError("empty batch")
        H = self.encoder.hidden
        routed = self._text_fields()
        strings = []
        for f, kind in routed:
            col = [p.field(f) for p in posts]
            strings += [temporal.time_as_text(s) for s in col] if kind == "time" else col
        rows: dict[str, Tensor] = {}
        C = self.encode_strings(strings, rng, training)
        C = nx.reshape(C, (len(routed), B, H))
        for j, (f, _) in enumerate(routed):
            rows[f] = nx.reshape(nx.slice_(C, j), (B, 1, H))
        if self.schema.ct_mode == "onehot":
            for f in self.schema.ct_fields:
                rows[f] = nx.reshape(self.encode_categorical(f, [p.field(f) for p in posts]), (B, 1, H))
        if self.schema.time_mode != "text":
            for f in self.schema.time_fields:
                rows[f] = nx.reshape(self.encode_time([p.field(f) for p in posts]), (B, 1, H))
        order = self.schema.text_fields + self.schema.ct_fields + self.schema.time_fields
        return nx.concat([rows[f] for f in order], axis=1)

    def fused(self, posts: Sequence[Post], rng=None, training: bool = False) -> Tensor:
        F = self.assemble_features(posts, rng, training)
        pe = make_positional_encoding(self.schema.n_rows, self.encoder.hidden)
        X = apply_positions(F, pe, self.fusion.position_mode)
        return fuse(X, self.fusion, self.params, rng, training)

    def logits(self, posts: Sequence[Post], rng=None, training: bool = False) -> dict[str, Tensor]:
        h = self.fused(posts, rng, training)
        return {head: classify_logits(h, self.params, head) for head in self.classes}

    def predict_proba(self, posts: Sequence[Post], head: str = "poi", batch_size: int = 256) -> np.ndarray:
        """Eval-mode class probabilities, shape (len(posts), n_classes)."""
        out = []
        for lo in range(0, len(posts), batch_size):
            logits = self.logits(posts[lo : lo + batch_size])[head]
            out.append(nx.softmax(logits).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, len(self.classes[head])))

    def config_dict(self) -> dict:
        return {
            "schema": asdict(self.schema),
            "encoder": asdict(self.encoder),
            "fusion": asdict(self.fusion),
            "categories": self.categories,
            "classes": self.classes,
        }


def text_corpus(posts: Sequence[Post], schema: FeatureSchema) -> list[str]:
    """Every string the text encoder will see for ``schema``."""
    out = []
    for p in posts:
        out += [p.field(f) for f in schema.text_fields]
        if schema.ct_mode == "text":
            out += [p.field(f) for f in schema.ct_fields]
        if schema.time_mode == "text":
            out += [temporal.time_as_text(p.field(f)) for f in schema.time_fields]
    return out
