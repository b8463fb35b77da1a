"""Training loop, macro-averaged metrics and k-fold cross-validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataset import TooFewSamples, make_folds
from .encoder import EncoderConfig, Vocab
from .fusion import ClassOutOfRange
from .numerics import make_optimizer


class EmptyTrainingSet(ValueError):
    pass


class ZeroSamples(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration

CLASSIC_KINDS = ("svm", "bpnn", "cnn", "bigru")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``iterations`` > 0 switches to iteration-capped mode: training runs for
    exactly that many parameter updates, reshuffling every pass over the
    data, and ``epochs`` is ignored.
    """

    epochs: int = 6
    learning_rate: float = 2e-5
    batch_size: int = 1
    seed: int = 0
    optimizer: str = "adam"
    iterations: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.optimizer.lower() not in ("sgd", "adam", "adagrad"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def defaults_for(cls, model_kind, **overrides):
        if model_kind in CLASSIC_KINDS:
            base = cls(learning_rate=2e-2, optimizer="sgd", iterations=8000)
        else:
            base = cls()
        return replace(base, **overrides)

    def to_dict(self):
        return asdict(self)


_ENC_FIELDS = {f.name: f.type for f in fields(EncoderConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_EXTRA_FIELDS = {"domain_kind": "str", "agg_mask": "bool"}


def _convert(key, value, kind):
    kind = str(kind)
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ValueError(f"bad value for {key}: {value!r}") from None
    return value


def parse_config(text):
    """Parse flat ``key = value`` lines into encoder, train and extra settings.

    Blank lines and ``#`` comments are skipped; unknown keys are errors.
    """
    enc, train, extra = {}, {}, {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _ENC_FIELDS:
            enc[key] = _convert(key, value, _ENC_FIELDS[key])
        elif key in _TRAIN_FIELDS:
            train[key] = _convert(key, value, _TRAIN_FIELDS[key])
        elif key in _EXTRA_FIELDS:
            extra[key] = _convert(key, value, _EXTRA_FIELDS[key])
        else:
            raise ValueError(f"line {n}: unknown key {key!r}")
    return EncoderConfig(**enc), train, extra


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    loss_curve: list
    updates: int


def train(model, examples, config):
    """Fit ``model`` on prepared ``(inputs, target)`` pairs.

    Each epoch visits the examples in a fresh order drawn from a generator
    seeded by ``config.seed``. Gradients of a mini-batch are averaged before
    one optimiser step. Returns the per-epoch mean training loss.
    """
    examples = list(examples)
    if not examples:
        raise EmptyTrainingSet("no training examples")
    rng = np.random.default_rng([config.seed, 3])
    opt = make_optimizer(config.optimizer, model.params, config.learning_rate)
    names = model.trainable()
    curve = []
    updates = 0
    n = len(examples)
    capped = config.iterations > 0

    def done():
        return updates >= config.iterations if capped else len(curve) >= config.epochs

    while not done():
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        for start in range(0, n, config.batch_size):
            if capped and updates >= config.iterations:
                break
            batch = order[start:start + config.batch_size]
            model.params.zero_grad()
            for i in batch:
                inputs, target = examples[i]
                loss = model.loss(inputs, target, training=True)
                total += float(loss.data)
                seen += 1
                loss.backward(np.asarray(1.0 / len(batch), dtype=loss.data.dtype))
            opt.step(names)
            updates += 1
        curve.append(total / seen)
    return TrainResult(curve, updates)


def prepare_examples(model, samples, schema):
    return [(model.prepare(s.header_field, s.description), schema.index(s.label)) for s in samples]


# --------------------------------------------------------------------------
# metrics

@dataclass
class Confusion:
    num_classes: int
    tp: np.ndarray = None
    fp: np.ndarray = None
    fn: np.ndarray = None
    n: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.num_classes, dtype=np.int64))

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        return Confusion(self.num_classes, self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.n + other.n)


def update_confusion(conf, predicted, true):
    """TP(a) += 1 when a == b, else FP(a) += 1 and FN(b) += 1."""
    c = conf.num_classes
    for v in (predicted, true):
        if not 0 <= int(v) < c:
            raise ClassOutOfRange(f"class {v} outside [0, {c})")
    if predicted == true:
        conf.tp[predicted] += 1
    else:
        conf.fp[predicted] += 1
        conf.fn[true] += 1
    conf.n += 1
    return conf


@dataclass(frozen=True)
class Metrics:
    tp: tuple
    fp: tuple
    fn: tuple
    n: int
    acc: float
    avg_p: float
    avg_r: float
    avg_f: float

    def scores(self):
        return {"acc": self.acc, "avg_p": self.avg_p, "avg_r": self.avg_r, "avg_f": self.avg_f}


def _ratio(num, den):
    return num / den if den else 0.0


def compute_metrics(conf, n=None):
    """Accuracy and macro precision/recall/F over all classes.

    Classes whose precision or recall denominator is zero contribute 0 to
    the average; the average is still taken over every class.
    """
    n = conf.n if n is None else n
    if n == 0:
        raise ZeroSamples("no predictions to score")
    c = conf.num_classes
    tp, fp, fn = (np.asarray(x, dtype=np.int64) for x in (conf.tp, conf.fp, conf.fn))
    acc = int(tp.sum()) / n
    avg_p = sum(_ratio(int(tp[a]), int(tp[a] + fp[a])) for a in range(c)) / c
    avg_r = sum(_ratio(int(tp[a]), int(tp[a] + fn[a])) for a in range(c)) / c
    avg_f = _ratio(2 * avg_p * avg_r, avg_p + avg_r)
    return Metrics(tuple(int(x) for x in tp), tuple(int(x) for x in fp), tuple(int(x) for x in fn),
                   n, acc, avg_p, avg_r, avg_f)


def evaluate_model(model, examples, num_classes):
    conf = Confusion(num_classes)
    for inputs, target in examples:
        update_confusion(conf, model.predict(inputs), target)
    return conf


# --------------------------------------------------------------------------
# cross-validation

@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    metrics: Metrics
    final_loss: float


@dataclass
class CvResult:
    seed: int
    folds: list = field(default_factory=list)
    pooled: Metrics = None

    def mean(self):
        keys = ("acc", "avg_p", "avg_r", "avg_f")
        return {k: float(np.mean([getattr(f.metrics, k) for f in self.folds])) for k in keys}


def fold_vocab(samples, size):
    texts = [s.description for s in samples] + [s.header_field for s in samples]
    return Vocab.build(texts, size)


def cross_validate(factory, samples, schema, k=10, seed=0, train_config=None, vocab_size=2000):
    """Stratified k-fold evaluation of models built by ``factory``.

    ``factory(vocab, seed)`` returns a fresh model. Fold ``i`` uses seed
    ``seed + i`` for the model and the shuffle, and a vocabulary built from
    its training split only.
    """
    samples = list(samples)
    if len(samples) < k:
        raise TooFewSamples(f"{len(samples)} samples cannot fill {k} folds")
    labels = [schema.index(s.label) for s in samples]
    split = make_folds(len(samples), k, seed, labels)
    cfg = train_config or TrainConfig()
    result = CvResult(seed)
    total = Confusion(schema.num_classes)
    for i in range(k):
        tr, te = split.train_test(i)
        fold_seed = seed + i
        train_samples = [samples[j] for j in tr]
        model = factory(fold_vocab(train_samples, vocab_size), fold_seed)
        fit = train(model, prepare_examples(model, train_samples, schema), replace(cfg, seed=fold_seed))
        conf = evaluate_model(model, prepare_examples(model, [samples[j] for j in te], schema),
                              schema.num_classes)
        total = total + conf
        final = fit.loss_curve[-1] if fit.loss_curve else float("nan")
        result.folds.append(FoldResult(i, len(tr), len(te), compute_metrics(conf), final))
    result.pooled = compute_metrics(total)
    return result


# --------------------------------------------------------------------------
# results file

def config_hash(record):
    blob = json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def samples_digest(samples):
    h = hashlib.sha256()
    for s in samples:
        h.update(json.dumps([s.header_field, s.description, s.label], ensure_ascii=False).encode("utf-8"))
    return h.hexdigest()[:16]


def result_records(results, protocol):
    """Per-fold records, one summary per seed and an overall summary.

    ``protocol`` is the configuration being evaluated; its hash tags every
    record and it is stored in full in the final summary.
    """
    chash = config_hash(protocol)
    out = []
    for res in results:
        for f in res.folds:
            out.append({"record": "fold", "config_hash": chash, "seed": res.seed, "fold": f.fold,
                        "n_train": f.n_train, "n_test": f.n_test, **f.metrics.scores(),
                        "final_loss": f.final_loss})
        out.append({"record": "seed", "config_hash": chash, "seed": res.seed,
                    "pooled": res.pooled.scores(), "fold_mean": res.mean()})
    keys = ("acc", "avg_p", "avg_r", "avg_f")
    out.append({
        "record": "summary", "config_hash": chash, "seeds": [r.seed for r in results],
        "pooled": {k: float(np.mean([getattr(r.pooled, k) for r in results])) for k in keys},
        "fold_mean": {k: float(np.mean([r.mean()[k] for r in results])) for k in keys},
        "protocol": protocol,
    })
    return out


def write_results(records, path):
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    Path(path).write_text(text, encoding="utf-8")


def read_results(path):
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def format_table(rows):
    """Plain-text table of ``(name, scores)`` rows in percent."""
    head = f"{'Model':<16}{'Acc':>8}{'Avg_P':>8}{'Avg_R':>8}{'Avg_F':>8}"
    lines = [head, "-" * len(head)]
    for name, sc in rows:
        lines.append(f"{name:<16}" + "".join(f"{100 * sc[k]:>8.1f}" for k in ("acc", "avg_p", "avg_r", "avg_f")))
    return "\n".join(lines)
