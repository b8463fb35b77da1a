"""Domain model over header-field tokens, fusion unit and classifier head."""

from __future__ import annotations

import numpy as np

from . import encoder as enc
from .numerics import ParamStore, ops
from .numerics.tensor import ShapeMismatch, Tensor

FEEDFORWARD = "Feedforward"
CONVOLUTIONAL = "Convolutional"
BIDIRECTIONAL_GATED = "BidirectionalGated"
DOMAIN_KINDS = (FEEDFORWARD, CONVOLUTIONAL, BIDIRECTIONAL_GATED)


class UnknownKind(ValueError):
    pass


class ClassOutOfRange(IndexError):
    pass


def _check_kind(kind):
    if kind not in DOMAIN_KINDS:
        raise UnknownKind(f"unknown domain model kind {kind!r}; expected one of {DOMAIN_KINDS}")


# --------------------------------------------------------------------------
# domain model

def add_domain_params(store, kind, hidden, prefix="dom", window=3):
    _check_kind(kind)
    h = hidden
    if kind == FEEDFORWARD:
        store.add(f"{prefix}.w1", (h, h))
        store.add(f"{prefix}.b1", (h,), "zeros")
        store.add(f"{prefix}.w2", (h, h))
        store.add(f"{prefix}.b2", (h,), "zeros")
    elif kind == CONVOLUTIONAL:
        store.add(f"{prefix}.kernel", (window * h, h))
        store.add(f"{prefix}.bias", (h,), "zeros")
    else:
        for d in ("fwd", "bwd"):
            store.add(f"{prefix}.{d}.wx", (h, 3 * h))
            store.add(f"{prefix}.{d}.bx", (3 * h,), "zeros")
            store.add(f"{prefix}.{d}.u", (h, 3 * h))
        store.add(f"{prefix}.out.w", (2 * h, h))
        store.add(f"{prefix}.out.b", (h,), "zeros")


def bigru_states(x, params, prefix):
    """Forward and backward GRU state sequences, both in input order."""
    fwd = ops.gru_scan(ops.add(ops.matmul(x, params[f"{prefix}.fwd.wx"]), params[f"{prefix}.fwd.bx"]),
                       params[f"{prefix}.fwd.u"])
    rev = ops.flip_rows(x)
    bwd = ops.gru_scan(ops.add(ops.matmul(rev, params[f"{prefix}.bwd.wx"]), params[f"{prefix}.bwd.bx"]),
                       params[f"{prefix}.bwd.u"])
    return fwd, ops.flip_rows(bwd)


def domain_forward(x, kind, params, prefix="dom"):
    """HS_F for field embeddings ``x`` of shape ``[m, hidden]``."""
    _check_kind(kind)
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ShapeMismatch("domain_forward", x.shape)
    if kind == FEEDFORWARD:
        hid = ops.relu(ops.add(ops.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
        return ops.add(ops.matmul(hid, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    if kind == CONVOLUTIONAL:
        return ops.relu(ops.conv1d_same(x, params[f"{prefix}.kernel"], params[f"{prefix}.bias"]))
    fwd, bwd = bigru_states(x, params, prefix)
    both = ops.concat([fwd, bwd], axis=1)
    return ops.add(ops.matmul(both, params[f"{prefix}.out.w"]), params[f"{prefix}.out.b"])


def aggregate(hs, agg, mask=None):
    """Flatten ``[m, hidden]`` states and project with ``agg`` ``[m*hidden, hidden]``.

    ``mask`` (boolean ``[m]``) zeroes padded positions before the
    projection; by default every position contributes.
    """
    m, h = hs.shape
    if agg.shape != (m * h, h):
        raise ShapeMismatch("aggregate", hs.shape, agg.shape)
    if mask is not None:
        keep = np.repeat(np.asarray(mask, dtype=hs.dtype)[:, None], h, axis=1)
        hs = ops.mul(hs, Tensor(keep))
    flat = ops.reshape(hs, (1, m * h))
    return ops.reshape(ops.matmul(flat, agg), (h,))


def _affine(vec, w, b):
    h = vec.shape[0]
    return ops.reshape(ops.add(ops.matmul(ops.reshape(vec, (1, h)), w), b), (w.shape[1],))


def fuse(t_a, t_cls, w, b):
    """O_A = ReLU(W T_A + b) + T_CLS."""
    if t_a.shape != t_cls.shape or w.shape != (t_a.shape[0], t_a.shape[0]) or b.shape != t_a.shape:
        raise ShapeMismatch("fuse", t_a.shape, t_cls.shape, w.shape, b.shape)
    return ops.add(ops.relu(_affine(t_a, w, b)), t_cls)


def class_logits(o, u, c):
    """z = U O + c, one score per class."""
    if u.shape[0] != o.shape[0] or c.shape != (u.shape[1],):
        raise ShapeMismatch("classify", o.shape, u.shape, c.shape)
    return _affine(o, u, c)


def classify(o, u, c):
    """Class probabilities softmax(U O + c) as a tensor."""
    return ops.softmax_row(class_logits(o, u, c))


def loss(logits, target):
    """Cross-entropy ``-z_t + logsumexp(z)`` of one logit vector."""
    c = logits.shape[0]
    if not 0 <= int(target) < c:
        raise ClassOutOfRange(f"class {target} outside [0, {c})")
    return ops.cross_entropy(logits, int(target))


def batch_loss(losses):
    total = losses[0]
    for x in losses[1:]:
        total = ops.add(total, x)
    return ops.scale(total, 1.0 / len(losses))


# --------------------------------------------------------------------------
# models

class Classifier:
    """Common shape of every model the trainer can fit.

    Subclasses define ``_build`` (parameter registration), ``prepare`` (text
    to cached integer inputs) and ``logits``.
    """

    kind = "abstract"
    default_optimizer = "adam"

    def __init__(self, vocab, cfg, num_classes, seed=0, dtype=np.float32):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.vocab = vocab
        self.cfg = cfg
        self.num_classes = num_classes
        self.seed = seed
        self.params = ParamStore(seed, dtype)
        self.rng = np.random.default_rng([seed, 1])
        self.frozen = set()
        self._build()

    def _build(self):
        raise NotImplementedError

    def prepare(self, field, description):
        raise NotImplementedError

    def logits(self, inputs, training=False):
        raise NotImplementedError

    def loss(self, inputs, target, training=False):
        return loss(self.logits(inputs, training), target)

    def trainable(self):
        return [n for n in self.params.names() if n not in self.frozen]

    def freeze(self, names):
        self.frozen.update(names)

    def probabilities(self, inputs):
        z = self.logits(inputs, training=False).data.astype(np.float64)
        e = np.exp(z - z.max())
        return e / e.sum()

    def predict(self, inputs):
        return int(np.argmax(self.logits(inputs, training=False).data))

    def predict_proba(self, field, description):
        return self.probabilities(self.prepare(field, description))

    def config_record(self):
        return {"model_kind": self.kind, "encoder": self.cfg.to_dict(),
                "num_classes": self.num_classes, "seed": self.seed}


class _HeadMixin:
    def _add_head(self, dim):
        self.params.add("head.u", (dim, self.num_classes))
        self.params.add("head.c", (self.num_classes,), "zeros")

    def _head(self, o):
        return class_logits(o, self.params["head.u"], self.params["head.c"])


class EncoderOnly(_HeadMixin, Classifier):
    """Encoder, ``[CLS]`` vector, linear layer and softmax over descriptions."""

    kind = "encoder-only"

    def _build(self):
        enc.add_embedding_params(self.params, self.cfg, len(self.vocab))
        enc.add_encoder_params(self.params, self.cfg)
        self._add_head(self.cfg.hidden_size)

    def prepare(self, field, description):
        return enc.encode_description(self.vocab, description, self.cfg)

    def cls(self, inputs, training=False):
        x = enc.embed(inputs, self.params)
        x = ops.dropout(x, self.cfg.dropout, self.rng, training)
        return enc.cls_vector(enc.encode(x, self.params, self.cfg, training, self.rng))

    def logits(self, inputs, training=False):
        return self._head(self.cls(inputs, training))


class JointModel(EncoderOnly):
    """Description encoder fused with a domain model over the header field."""

    def __init__(self, vocab, cfg, num_classes, domain_kind=BIDIRECTIONAL_GATED, seed=0,
                 dtype=np.float32, agg_mask=False):
        _check_kind(domain_kind)
        self.domain_kind = domain_kind
        self.agg_mask = agg_mask
        super().__init__(vocab, cfg, num_classes, seed, dtype)

    @property
    def kind(self):
        return {FEEDFORWARD: "joint-a", CONVOLUTIONAL: "joint-b", BIDIRECTIONAL_GATED: "joint-c"}[self.domain_kind]

    def _build(self):
        h = self.cfg.hidden_size
        super()._build()
        add_domain_params(self.params, self.domain_kind, h)
        self.params.add("agg.a", (self.cfg.max_field_len * h, h))
        self.params.add("fuse.w", (h, h))
        self.params.add("fuse.b", (h,), "zeros")

    def domain_names(self):
        return [n for n in self.params.names() if n.startswith(("dom.", "agg.", "fuse."))]

    def prepare(self, field, description):
        return (enc.encode_description(self.vocab, description, self.cfg),
                enc.encode_field(self.vocab, field, self.cfg))

    def t_a(self, field_inp, training=False):
        x = enc.embed(field_inp, self.params)
        x = ops.dropout(x, self.cfg.dropout, self.rng, training)
        hs = domain_forward(x, self.domain_kind, self.params)
        mask = np.asarray(field_inp.token_ids) != enc.PAD_ID if self.agg_mask else None
        return aggregate(hs, self.params["agg.a"], mask)

    def logits(self, inputs, training=False):
        desc, field = inputs
        t_cls = self.cls(desc, training)
        o = fuse(self.t_a(field, training), t_cls, self.params["fuse.w"], self.params["fuse.b"])
        return self._head(o)

    def config_record(self):
        rec = super().config_record()
        rec["domain_kind"] = self.domain_kind
        rec["agg_mask"] = self.agg_mask
        return rec
