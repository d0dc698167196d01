"""JSON parameter checkpoints: ``{name: {"shape": [...], "values": [...]}}``.

Floats are written with ``repr`` precision, which round-trips float64 exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor


def state_dict(params: dict[str, Tensor]) -> dict:
    return {name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in params.items()}


def load_state_dict(params: dict[str, Tensor], payload: dict) -> None:
    for name, tensor in params.items():
        if name not in payload:
            raise KeyError(f"checkpoint has no tensor named {name!r}")
        entry = payload[name]
        shape = tuple(entry["shape"])
        if shape != tensor.shape:
            raise ValueError(f"{name}: checkpoint shape {shape} != parameter shape {tensor.shape}")
        tensor.data[...] = np.asarray(entry["values"], dtype=np.float64).reshape(shape)


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    Path(path).write_text(json.dumps(state_dict(params)))


def load_checkpoint(path, params: dict[str, Tensor]) -> None:
    load_state_dict(params, json.loads(Path(path).read_text()))
