"""Text tensor checkpoints shared by the action-unit and Siamese networks.

Layout::

    SKILLEVAL-LSTM v1 role=<role>
    meta <json>
    tensor <name> <d0>,<d1>,...
    <space-separated values, row-major>
    ...
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

LSTM_MAGIC = "SKILLEVAL-LSTM v1"


class CheckpointError(ValueError):
    pass


def write_tensors(path, role: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [f"{LSTM_MAGIC} role={role}", "meta " + json.dumps(meta or {}, sort_keys=True)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"tensor {name} {','.join(str(d) for d in arr.shape)}")
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_tensors(path, role: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint missing")
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or not lines[0].startswith(LSTM_MAGIC + " role="):
        raise CheckpointError(f"{path}: bad checkpoint header")
    found = lines[0].split("role=", 1)[1].strip()
    if role is not None and found != role:
        raise CheckpointError(f"{path}: checkpoint role is {found!r}, expected {role!r}")
    if not lines[1].startswith("meta "):
        raise CheckpointError(f"{path}: missing meta line")
    meta = json.loads(lines[1][5:])
    tensors = {}
    body = lines[2:]
    if len(body) % 2:
        raise CheckpointError(f"{path}: truncated tensor block")
    for k in range(0, len(body), 2):
        parts = body[k].split(" ")
        if len(parts) != 3 or parts[0] != "tensor":
            raise CheckpointError(f"{path}: malformed tensor header {body[k]!r}")
        shape = tuple(int(d) for d in parts[2].split(",") if d)
        vals = np.array([float(v) for v in body[k + 1].split(" ") if v])
        if vals.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {parts[1]} has {vals.size} values for shape {shape}")
        tensors[parts[1]] = vals.reshape(shape)
    return found, meta, tensors
