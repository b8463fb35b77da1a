"""Saving and restoring a trained model together with its vocabulary and classes."""

from __future__ import annotations

import json
from pathlib import Path

from .baselines import build_model
from .encoder import EncoderConfig, Vocab
from .numerics import CheckpointMismatch, load_checkpoint, save_checkpoint

CONFIG = "config.json"
VOCAB = "vocab.txt"


def save_model(model, classes, directory, train_config=None):
    """Write parameters, ``config.json`` and ``vocab.txt`` into ``directory``."""
    directory = Path(directory)
    save_checkpoint(model.params, directory)
    model.vocab.save(directory / VOCAB)
    record = {"model": model.config_record(), "classes": list(classes),
              "vocab_size": len(model.vocab)}
    if train_config is not None:
        record["train"] = train_config.to_dict()
    (directory / CONFIG).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(directory):
    """Rebuild the model described by ``config.json`` and load its parameters.

    Returns ``(model, classes)``. Raises :class:`CheckpointMismatch` when
    the config, vocabulary and parameter files disagree.
    """
    directory = Path(directory)
    try:
        record = json.loads((directory / CONFIG).read_text(encoding="utf-8"))
        vocab = Vocab.load(directory / VOCAB)
    except FileNotFoundError as e:
        raise CheckpointMismatch(f"incomplete checkpoint: {e.filename} missing") from None
    except json.JSONDecodeError as e:
        raise CheckpointMismatch(f"unreadable {CONFIG}: {e.msg}") from None
    try:
        m = record["model"]
        classes = list(record["classes"])
        if len(vocab) != record["vocab_size"]:
            raise CheckpointMismatch(f"vocabulary has {len(vocab)} entries, config says {record['vocab_size']}")
        if len(classes) != m["num_classes"]:
            raise CheckpointMismatch(f"{len(classes)} class names for {m['num_classes']} outputs")
        cfg = EncoderConfig.from_dict(m["encoder"])
        model = build_model(m["model_kind"], vocab, cfg, m["num_classes"], m["seed"],
                            domain_kind=m.get("domain_kind", "BidirectionalGated"),
                            agg_mask=m.get("agg_mask", False))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CheckpointMismatch):
            raise
        raise CheckpointMismatch(f"invalid {CONFIG}: {e}") from None
    load_checkpoint(model.params, directory)
    return model, classes
