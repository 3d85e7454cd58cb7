"""JSON tensor manifests: {name, shape, row-major data} per tensor.

Python floats are doubles, so float64 tensors round-trip exactly.  The
same format serves encoder checkpoints and full trainable-state dumps.
"""

from __future__ import annotations

import json

import torch
from torch import nn

_DTYPES = {
    "float64": torch.float64,
    "float32": torch.float32,
    "int64": torch.int64,
}


def state_to_manifest(state: dict[str, torch.Tensor]) -> dict:
    tensors = []
    for name, t in state.items():
        td = t.detach().cpu()
        dtype = str(td.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {dtype} for {name}")
        data = td.reshape(-1).tolist()
        tensors.append(
            {"name": name, "shape": list(td.shape), "dtype": dtype, "data": data}
        )
    return {"tensors": tensors}


def manifest_to_state(manifest: dict) -> dict[str, torch.Tensor]:
    state: dict[str, torch.Tensor] = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPES[entry.get("dtype", "float64")]
        t = torch.tensor(entry["data"], dtype=dtype).reshape(entry["shape"])
        state[entry["name"]] = t
    return state


def save_manifest(obj: nn.Module | dict[str, torch.Tensor], path: str) -> None:
    state = obj.state_dict() if isinstance(obj, nn.Module) else obj
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_manifest(state), fh)


def load_manifest(path: str) -> dict[str, torch.Tensor]:
    with open(path, encoding="utf-8") as fh:
        return manifest_to_state(json.load(fh))
