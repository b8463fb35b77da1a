"""Tokenizer, vocabulary and a small BERT-style transformer encoder."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .numerics import ops
from .numerics.tensor import ShapeMismatch

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)

_TOKEN = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


class IdOutOfRange(IndexError):
    pass


class EmptyInput(ValueError):
    pass


def tokenize(text, max_len, wrap=False):
    """Lowercase word/punctuation tokens, truncated to ``max_len``.

    Punctuation (including ``_``) becomes a token of its own. With ``wrap``
    two slots are reserved for the surrounding ``[CLS]``/``[SEP]``.
    """
    toks = _TOKEN.findall(text.lower())
    if wrap:
        return [CLS] + toks[:max(0, max_len - 2)] + [SEP]
    return toks[:max_len]


class Vocab:
    """Token to id map with the four reserved ids first."""

    def __init__(self, tokens=()):
        self.itos = list(RESERVED)
        for t in tokens:
            if t in RESERVED:
                continue
            self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token):
        return self.stoi.get(token, UNK_ID)

    def ids(self, tokens):
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    @classmethod
    def build(cls, texts, size, max_len=10_000):
        """Frequency-ranked vocabulary over ``texts`` (ties broken by token)."""
        counts = Counter()
        for text in texts:
            counts.update(tokenize(text, max_len))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        keep = max(0, size - len(RESERVED))
        return cls([t for t, _ in ranked[:keep]])

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass
class EncoderConfig:
    num_blocks: int = 2
    hidden_size: int = 128
    num_heads: int = 4
    max_desc_len: int = 64
    max_field_len: int = 10
    vocab_size: int = 2000
    dropout: float = 0.1
    activation: str = "gelu"

    def __post_init__(self):
        for name in ("hidden_size", "num_heads", "max_desc_len", "max_field_len", "vocab_size"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be non-negative")
        if self.hidden_size % self.num_heads:
            raise ValueError("hidden_size must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.activation not in ("gelu", "relu"):
            raise ValueError("activation must be gelu or relu")
        if self.max_desc_len < 2:
            raise ValueError("max_desc_len must leave room for [CLS] and [SEP]")

    @property
    def max_positions(self):
        return max(self.max_desc_len, self.max_field_len)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class EncodedInput:
    token_ids: tuple
    segment_ids: tuple
    position_ids: tuple

    def __post_init__(self):
        if not len(self.token_ids) == len(self.segment_ids) == len(self.position_ids):
            raise ValueError("token, segment and position ids must have equal length")

    def __len__(self):
        return len(self.token_ids)


def encode_description(vocab, text, cfg):
    ids = vocab.ids(tokenize(text, cfg.max_desc_len, wrap=True))
    n = len(ids)
    return EncodedInput(tuple(ids), (0,) * n, tuple(range(n)))


def encode_field(vocab, name, cfg, pad=True):
    """Field tokens in segment 1, positions restarting at 0, padded to length."""
    ids = vocab.ids(tokenize(name, cfg.max_field_len))
    if pad:
        ids = ids + [PAD_ID] * (cfg.max_field_len - len(ids))
    elif not ids:
        ids = [UNK_ID]
    n = len(ids)
    return EncodedInput(tuple(ids), (1,) * n, tuple(range(n)))


def encode_plain(vocab, text, length, segment=0):
    """Unwrapped tokens padded or cut to exactly ``length`` positions."""
    ids = vocab.ids(tokenize(text, length))
    ids = ids + [PAD_ID] * (length - len(ids))
    return EncodedInput(tuple(ids), (segment,) * length, tuple(range(length)))


# --------------------------------------------------------------------------
# parameters

def add_embedding_params(store, cfg, vocab_size, prefix="emb"):
    h = cfg.hidden_size
    store.add(f"{prefix}.token", (vocab_size, h), "embedding")
    store.add(f"{prefix}.segment", (2, h), "embedding")
    store.add(f"{prefix}.position", (cfg.max_positions, h), "embedding")


def add_encoder_params(store, cfg, prefix="enc"):
    h = cfg.hidden_size
    for b in range(cfg.num_blocks):
        p = f"{prefix}.{b}"
        for m in ("q", "k", "v", "o"):
            store.add(f"{p}.w{m}", (h, h), "glorot")
        # no key bias: it shifts every score of a query equally and
        # cancels in the softmax
        store.add(f"{p}.bq", (h,), "zeros")
        store.add(f"{p}.bv", (h,), "zeros")
        store.add(f"{p}.bo", (h,), "zeros")
        store.add(f"{p}.ln1.g", (h,), "ones")
        store.add(f"{p}.ln1.b", (h,), "zeros")
        store.add(f"{p}.w1", (h, 4 * h), "glorot")
        store.add(f"{p}.b1", (4 * h,), "zeros")
        store.add(f"{p}.w2", (4 * h, h), "glorot")
        store.add(f"{p}.b2", (h,), "zeros")
        store.add(f"{p}.ln2.g", (h,), "ones")
        store.add(f"{p}.ln2.b", (h,), "zeros")


# --------------------------------------------------------------------------
# forward

def embed(inp, params, prefix="emb"):
    """Sum of token, segment and position embedding rows, ``[len, hidden]``."""
    tok = params[f"{prefix}.token"]
    seg = params[f"{prefix}.segment"]
    pos = params[f"{prefix}.position"]
    for ids, table, what in ((inp.token_ids, tok, "token"), (inp.segment_ids, seg, "segment"),
                             (inp.position_ids, pos, "position")):
        if len(ids) and (min(ids) < 0 or max(ids) >= table.shape[0]):
            raise IdOutOfRange(f"{what} id outside [0, {table.shape[0]})")
    x = ops.add(ops.take_rows(tok, inp.token_ids), ops.take_rows(seg, inp.segment_ids))
    return ops.add(x, ops.take_rows(pos, inp.position_ids))


def _linear(x, w, b=None):
    y = ops.matmul(x, w)
    return y if b is None else ops.add(y, b)


def encode(x, params, cfg, training=False, rng=None, prefix="enc", mask=None):
    """Post-LN transformer blocks over an embedded sequence; returns HS_E."""
    if x.data.ndim != 2 or x.shape[1] != cfg.hidden_size:
        raise ShapeMismatch("encode", x.shape, (None, cfg.hidden_size))
    act = ops.gelu if cfg.activation == "gelu" else ops.relu
    p_drop = cfg.dropout if training else 0.0
    for b in range(cfg.num_blocks):
        p = f"{prefix}.{b}"
        q = _linear(x, params[f"{p}.wq"], params[f"{p}.bq"])
        k = _linear(x, params[f"{p}.wk"])
        v = _linear(x, params[f"{p}.wv"], params[f"{p}.bv"])
        a = ops.attention(q, k, v, cfg.num_heads, mask)
        a = ops.dropout(_linear(a, params[f"{p}.wo"], params[f"{p}.bo"]), p_drop, rng, training)
        x = ops.layer_norm(ops.add(x, a), params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        f = act(_linear(x, params[f"{p}.w1"], params[f"{p}.b1"]))
        f = ops.dropout(_linear(f, params[f"{p}.w2"], params[f"{p}.b2"]), p_drop, rng, training)
        x = ops.layer_norm(ops.add(x, f), params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    return x


def cls_vector(hs):
    """Row 0 of HS_E, the ``[CLS]`` summary vector."""
    if hs.data.ndim != 2 or hs.shape[0] == 0:
        raise EmptyInput("HS_E has no rows")
    return ops.slice_(hs, 0)
