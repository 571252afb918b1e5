"""Whitespace/punctuation tokenizer and a small bidirectional text encoder.

The encoder follows the usual BERT input recipe (token + learned position +
segment embeddings) followed by ``layers`` post-norm encoder blocks.  The
hidden state of the leading ``[CLS]`` token summarises the sequence.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import layers
from . import numerics as nx
from .layers import Params
from .numerics import Tensor

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
RESERVED = (PAD, UNK, CLS)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def normalize(text: str) -> list[str]:
    """Lowercase and split into word runs and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:3]) != RESERVED:
            raise ValueError(f"vocab must start with {RESERVED}")
        self.itos = list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocab")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocab:
    """Reserved tokens, then the most frequent tokens (ties broken lexicographically)."""
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be at least {len(RESERVED)}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(normalize(text))
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocab(list(RESERVED) + keep)


@dataclass
class TokenSeq:
    ids: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(text: str, vocab: Vocab, max_len: int = 100) -> TokenSeq:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = [CLS_ID] + [vocab.id(tok) for tok in normalize(text)]
    ids = np.asarray(ids[:max_len], dtype=np.int64)
    return TokenSeq(ids=ids, mask=ids != PAD_ID)


def pad_batch(seqs: Sequence[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (B, N) id and mask arrays, right-padded with [PAD]."""
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), PAD_ID, dtype=np.int64)
    for row, s in enumerate(seqs):
        ids[row, : len(s)] = s.ids
    return ids, ids != PAD_ID


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 128
    ff: int = 256
    dropout: float = 0.1
    max_len: int = 100

    def validate(self) -> None:
        if self.layers < 0 or min(self.heads, self.hidden, self.ff, self.max_len) <= 0:
            raise ValueError(f"encoder sizes must be positive: {self}")
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


def init_text_encoder(
    params: Params, cfg: EncoderConfig, vocab_size: int, rng: np.random.Generator, prefix: str = "text"
) -> None:
    cfg.validate()
    layers.uniform(params, f"{prefix}.tok_emb", (vocab_size, cfg.hidden), rng)
    layers.uniform(params, f"{prefix}.pos_emb", (cfg.max_len, cfg.hidden), rng)
    layers.constant(params, f"{prefix}.seg_emb", (1, cfg.hidden), 0.0)
    layers.init_layer_norm(params, f"{prefix}.emb_ln", cfg.hidden)
    for i in range(cfg.layers):
        layers.init_encoder_block(params, f"{prefix}.block{i}", cfg.hidden, cfg.ff, rng)


def embed_sequence(ids: np.ndarray, params: Params, prefix: str = "text") -> Tensor:
    """Token + position + segment embeddings for a (N,) or (B, N) id array."""
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.shape[-1]
    pos_table = params[f"{prefix}.pos_emb"]
    if n > pos_table.shape[0]:
        raise ValueError(f"sequence length {n} exceeds position table size {pos_table.shape[0]}")
    tok = nx.embed_lookup(params[f"{prefix}.tok_emb"], ids)
    pos = nx.embed_lookup(pos_table, np.arange(n))
    seg = nx.embed_lookup(params[f"{prefix}.seg_emb"], np.zeros(n, dtype=np.int64))
    return nx.add(nx.add(tok, pos), seg)


@dataclass
class EncodedText:
    E: Tensor
    C: Tensor


def encode_batch(
    ids: np.ndarray,
    mask: np.ndarray,
    cfg: EncoderConfig,
    params: Params,
    rng: np.random.Generator | None = None,
    training: bool = False,
    prefix: str = "text",
) -> EncodedText:
    """Encode a (B, N) padded batch. Returns E of shape (B, N, H) and C of shape (B, H)."""
    x = embed_sequence(ids, params, prefix)
    x = layers.apply_layer_norm(params, f"{prefix}.emb_ln", x)
    x = nx.dropout(x, cfg.dropout, rng, training)
    for i in range(cfg.layers):
        x = layers.encoder_block(params, f"{prefix}.block{i}", x, cfg.heads, mask, cfg.dropout, rng, training)
    return EncodedText(E=x, C=nx.slice_(x, (slice(None), 0)))


def encode_text(seq: TokenSeq, cfg: EncoderConfig, params: Params, prefix: str = "text") -> EncodedText:
    """Encode one sequence in eval mode. E is (N, H), C is (H,)."""
    enc = encode_batch(seq.ids[None, :], seq.mask[None, :], cfg, params, prefix=prefix)
    return EncodedText(E=nx.slice_(enc.E, 0), C=nx.slice_(enc.C, 0))
