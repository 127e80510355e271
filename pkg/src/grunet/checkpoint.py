"""Weights checkpoint archive.

A checkpoint is a zip archive with fixed entry timestamps, so identical
weights always give identical bytes::

    manifest.json          format, version, model_config, seed, encoder_id, tensor list
    tensors/<name>.npy     one array per state_dict entry (hierarchical layer name)
    text/raw.npy           the (16, N) label embedding matrix, full variant only
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .backbone import GRUNet, ModelConfig

FORMAT_NAME = "grunet-checkpoint"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf, name, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(path, model: GRUNet, text: torch.Tensor | None = None,
                    encoder_id: str | None = None, extra: dict | None = None):
    state = model.state_dict()
    manifest = {
        "format": FORMAT_NAME,
        "version": 1,
        "model_config": model.cfg.to_dict(),
        "seed": model.cfg.seed,
        "encoder_id": encoder_id,
        "tensors": list(state),
        "has_text": text is not None,
    }
    if extra:
        manifest["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())
        for name, tensor in state.items():
            _write_entry(zf, f"tensors/{name}.npy", _npy_bytes(tensor.detach().cpu().numpy()))
        if text is not None:
            _write_entry(zf, "text/raw.npy", _npy_bytes(text.detach().cpu().numpy()))


def load_checkpoint(path):
    """Return ``(model, text, manifest)``; the model is in eval mode."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path}: not a {FORMAT_NAME} archive")
        arrays = {name: np.load(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False)
                  for name in manifest["tensors"]}
        text = None
        if manifest.get("has_text"):
            text = torch.from_numpy(np.load(io.BytesIO(zf.read("text/raw.npy")), allow_pickle=False))
    model = GRUNet(ModelConfig.from_dict(manifest["model_config"]))
    load_state(model, arrays)
    model.eval()
    return model, text, manifest


def load_state(model: GRUNet, arrays: dict[str, np.ndarray]):
    state = model.state_dict()
    missing = [k for k in state if k not in arrays]
    unexpected = [k for k in arrays if k not in state]
    if missing or unexpected:
        raise CheckpointError(f"layer mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}")
    for name, target in state.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(target.shape):
            raise CheckpointError(
                f"layer {name}: checkpoint shape {tuple(arr.shape)} != model shape {tuple(target.shape)}"
            )
        with torch.no_grad():
            target.copy_(torch.from_numpy(arr))
