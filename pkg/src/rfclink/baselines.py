"""Comparison models that ignore the header field, plus the model factory."""

from __future__ import annotations

import numpy as np

from . import encoder as enc
from .fusion import (
    BIDIRECTIONAL_GATED,
    CONVOLUTIONAL,
    DOMAIN_KINDS,
    FEEDFORWARD,
    Classifier,
    EncoderOnly,
    JointModel,
    UnknownKind,
    _HeadMixin,
    add_domain_params,
    aggregate,
    bigru_states,
    domain_forward,
)
from .numerics import ops
from .numerics.tensor import Tensor


def _desc_ids(vocab, text, length):
    return np.asarray(enc.encode_plain(vocab, text, length).token_ids, dtype=np.intp)


class DomainOnly(_HeadMixin, Classifier):
    """Domain model + aggregation + linear + softmax over description words."""

    def __init__(self, vocab, cfg, num_classes, domain_kind=BIDIRECTIONAL_GATED, seed=0,
                 dtype=np.float32):
        if domain_kind not in DOMAIN_KINDS:
            raise UnknownKind(f"unknown domain model kind {domain_kind!r}")
        self.domain_kind = domain_kind
        super().__init__(vocab, cfg, num_classes, seed, dtype)

    @property
    def kind(self):
        return "domain-only"

    def _build(self):
        h = self.cfg.hidden_size
        enc.add_embedding_params(self.params, self.cfg, len(self.vocab))
        add_domain_params(self.params, self.domain_kind, h)
        self.params.add("agg.a", (self.cfg.max_desc_len * h, h))
        self._add_head(h)

    def prepare(self, field, description):
        return enc.encode_plain(self.vocab, description, self.cfg.max_desc_len)

    def logits(self, inputs, training=False):
        x = ops.dropout(enc.embed(inputs, self.params), self.cfg.dropout, self.rng, training)
        hs = domain_forward(x, self.domain_kind, self.params)
        return self._head(aggregate(hs, self.params["agg.a"]))

    def config_record(self):
        rec = super().config_record()
        rec["domain_kind"] = self.domain_kind
        return rec


class _WordModel(_HeadMixin, Classifier):
    """Trainable word-embedding table shared by the classic baselines."""

    default_optimizer = "sgd"

    def _add_words(self):
        self.params.add("words", (len(self.vocab), self.cfg.hidden_size), "embedding")

    def _words(self, ids):
        return ops.take_rows(self.params["words"], ids)


class SvmBaseline(Classifier):
    """One-vs-rest linear SVM over mean-pooled frozen random word vectors.

    Trained with the hinge loss ``sum_c max(0, margin - y_c s_c)`` plus
    ``l2 / 2 * |W|^2``. ``prepare`` returns the pooled feature vector, so
    the model can also be fed hand-built features directly.
    """

    kind = "svm"
    default_optimizer = "sgd"

    def __init__(self, vocab, cfg, num_classes, seed=0, dtype=np.float32, l2=1e-3, margin=1.0):
        self.l2 = l2
        self.margin = margin
        super().__init__(vocab, cfg, num_classes, seed, dtype)

    def _build(self):
        d = self.cfg.hidden_size
        table_rng = np.random.default_rng([self.seed, 2])
        self.table = table_rng.normal(0.0, 1.0, size=(len(self.vocab), d)).astype(self.params.dtype)
        self.params.add("svm.w", (d, self.num_classes))
        self.params.add("svm.b", (self.num_classes,), "zeros")

    def prepare(self, field, description):
        ids = enc.encode_plain(self.vocab, description, self.cfg.max_desc_len).token_ids
        ids = [i for i in ids if i != enc.PAD_ID] or [enc.UNK_ID]
        return self.table[ids].mean(axis=0)

    def logits(self, inputs, training=False):
        x = Tensor(np.asarray(inputs, dtype=self.params.dtype).reshape(1, -1))
        s = ops.add(ops.matmul(x, self.params["svm.w"]), self.params["svm.b"])
        return ops.reshape(s, (self.num_classes,))

    def loss(self, inputs, target, training=False):
        s = self.logits(inputs, training)
        y = -np.ones(self.num_classes, dtype=self.params.dtype)
        y[int(target)] = 1.0
        slack = ops.relu(ops.sub(Tensor(np.full_like(y, self.margin)), ops.mul(s, Tensor(y))))
        w = self.params["svm.w"]
        return ops.add(ops.sum_(slack), ops.scale(ops.sum_(ops.mul(w, w)), 0.5 * self.l2))

    def config_record(self):
        rec = super().config_record()
        rec.update(l2=self.l2, margin=self.margin)
        return rec


class FeedforwardBaseline(_WordModel):
    """Mean-pooled word vectors through one ReLU hidden layer."""

    kind = "bpnn"

    def _build(self):
        h = self.cfg.hidden_size
        self._add_words()
        self.params.add("mlp.w", (h, h))
        self.params.add("mlp.b", (h,), "zeros")
        self._add_head(h)

    def prepare(self, field, description):
        ids = _desc_ids(self.vocab, description, self.cfg.max_desc_len)
        return ids[ids != enc.PAD_ID] if (ids != enc.PAD_ID).any() else np.array([enc.UNK_ID])

    def logits(self, inputs, training=False):
        h = self.cfg.hidden_size
        avg = Tensor(np.full((1, len(inputs)), 1.0 / len(inputs), dtype=self.params.dtype))
        pooled = ops.matmul(avg, self._words(inputs))
        hid = ops.relu(ops.add(ops.matmul(pooled, self.params["mlp.w"]), self.params["mlp.b"]))
        hid = ops.dropout(ops.reshape(hid, (h,)), self.cfg.dropout, self.rng, training)
        return self._head(hid)


class ConvolutionalBaseline(_WordModel):
    """Three height-3 kernels over padded description words, 2x2 max pooling."""

    kind = "cnn"
    channels = 3

    def _build(self):
        h = self.cfg.hidden_size
        self._add_words()
        self.params.add("cnn.kernel", (3 * h, self.channels))
        self.params.add("cnn.bias", (self.channels,), "zeros")
        pooled = (self.cfg.max_desc_len // 2) * (self.channels // 2)
        self._add_head(pooled)

    def prepare(self, field, description):
        return _desc_ids(self.vocab, description, self.cfg.max_desc_len)

    def logits(self, inputs, training=False):
        fmap = ops.relu(ops.conv1d_same(self._words(inputs), self.params["cnn.kernel"], self.params["cnn.bias"]))
        pooled = ops.max_pool2d(fmap, 2)
        flat = ops.reshape(pooled, (pooled.data.size,))
        return self._head(ops.dropout(flat, self.cfg.dropout, self.rng, training))


class BidirectionalGatedBaseline(_WordModel):
    """Bi-GRU over description words; final states of both directions."""

    kind = "bigru"

    def _build(self):
        h = self.cfg.hidden_size
        self._add_words()
        add_domain_params(self.params, BIDIRECTIONAL_GATED, h, prefix="gru")
        self._add_head(2 * h)

    def prepare(self, field, description):
        ids = _desc_ids(self.vocab, description, self.cfg.max_desc_len)
        ids = ids[ids != enc.PAD_ID]
        return ids if ids.size else np.array([enc.UNK_ID])

    def logits(self, inputs, training=False):
        fwd, bwd = bigru_states(self._words(inputs), self.params, "gru")
        last = ops.concat([ops.slice_(fwd, -1), ops.slice_(bwd, 0)])
        return self._head(ops.dropout(last, self.cfg.dropout, self.rng, training))


# --------------------------------------------------------------------------
# factory

BASELINE_KINDS = ("SVM", FEEDFORWARD, CONVOLUTIONAL, BIDIRECTIONAL_GATED, "EncoderOnly", "DomainOnly")
MODEL_KINDS = ("joint-a", "joint-b", "joint-c", "encoder-only", "domain-only", "svm", "bpnn", "cnn", "bigru")
CLASSIC_KINDS = ("svm", "bpnn", "cnn", "bigru")
_JOINT = {"joint-a": FEEDFORWARD, "joint-b": CONVOLUTIONAL, "joint-c": BIDIRECTIONAL_GATED}


def build_baseline(kind, vocab, cfg, num_classes, seed=0, dtype=np.float32, domain_kind=BIDIRECTIONAL_GATED):
    if kind == "SVM":
        return SvmBaseline(vocab, cfg, num_classes, seed, dtype)
    if kind == FEEDFORWARD:
        return FeedforwardBaseline(vocab, cfg, num_classes, seed, dtype)
    if kind == CONVOLUTIONAL:
        return ConvolutionalBaseline(vocab, cfg, num_classes, seed, dtype)
    if kind == BIDIRECTIONAL_GATED:
        return BidirectionalGatedBaseline(vocab, cfg, num_classes, seed, dtype)
    if kind == "EncoderOnly":
        return EncoderOnly(vocab, cfg, num_classes, seed, dtype)
    if kind == "DomainOnly":
        return DomainOnly(vocab, cfg, num_classes, domain_kind, seed, dtype)
    raise UnknownKind(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")


def build_model(model_kind, vocab, cfg, num_classes, seed=0, dtype=np.float32,
                domain_kind=BIDIRECTIONAL_GATED, agg_mask=False):
    """Instantiate a model by its command-line name.

    ``domain_kind`` only affects ``domain-only``; ``agg_mask`` only the
    joint variants.
    """
    if model_kind in _JOINT:
        return JointModel(vocab, cfg, num_classes, _JOINT[model_kind], seed, dtype, agg_mask)
    table = {"encoder-only": "EncoderOnly", "domain-only": "DomainOnly", "svm": "SVM",
             "bpnn": FEEDFORWARD, "cnn": CONVOLUTIONAL, "bigru": BIDIRECTIONAL_GATED}
    if model_kind not in table:
        raise UnknownKind(f"unknown model kind {model_kind!r}; expected one of {MODEL_KINDS}")
    return build_baseline(table[model_kind], vocab, cfg, num_classes, seed, dtype, domain_kind)
