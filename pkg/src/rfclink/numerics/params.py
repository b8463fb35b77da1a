"""Named trainable parameters, initialisation and checkpoint files."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered map of parameter name to :class:`Tensor`.

    All parameters require grad. The store owns the random generator used
    for initialisation and dropout so that a single seed reproduces a run.
    """

    def __init__(self, seed=0, dtype=np.float64):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self._params = {}

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def add(self, name, shape, init="glorot"):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "glorot":
            fan_in, fan_out = shape[0], shape[-1]
            r = math.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-r, r, size=shape)
        elif init == "embedding":
            data = self.rng.normal(0.0, 0.02, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype):
        """Cast every parameter in place."""
        self.dtype = np.dtype(dtype)
        for t in self._params.values():
            t.data = t.data.astype(self.dtype)
            t.grad = None
        return self

    def snapshot(self):
        return {k: t.data.copy() for k, t in self._params.items()}

    def restore(self, snap):
        for k, v in snap.items():
            self._params[k].data = v.copy()

    def num_values(self):
        return sum(t.data.size for t in self._params.values())


MANIFEST = "manifest.json"
PAYLOAD = "params.bin"


def save_checkpoint(store, directory):
    """Write ``manifest.json`` (name, shape, byte offset) and ``params.bin``.

    The payload is every parameter flattened in manifest order as
    little-endian float32.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, t in store.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    (directory / PAYLOAD).write_bytes(b"".join(chunks))
    manifest = {"dtype": "float32-le", "seed": store.seed, "params": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


class CheckpointMismatch(ValueError):
    pass


def load_checkpoint(store, directory):
    """Fill ``store`` from a checkpoint; names and shapes must match exactly."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    payload = (directory / PAYLOAD).read_bytes()
    found = {e["name"]: e for e in manifest["params"]}
    if set(found) != set(store.names()):
        missing = sorted(set(store.names()) - set(found))
        extra = sorted(set(found) - set(store.names()))
        raise CheckpointMismatch(f"parameter names differ: missing={missing} extra={extra}")
    for name, t in store.items():
        e = found[name]
        if tuple(e["shape"]) != t.shape:
            raise CheckpointMismatch(f"{name}: checkpoint shape {e['shape']} != model {list(t.shape)}")
        n = int(np.prod(t.shape)) if t.shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=e["offset"])
        t.data = arr.reshape(t.shape).astype(store.dtype)
    return store
