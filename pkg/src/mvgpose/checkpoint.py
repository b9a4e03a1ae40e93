"""Checkpoints: a JSON manifest (names, shapes, dtype, byte offsets, config
hash) next to one little-endian float32 blob."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptManifest
from .network import ModelConfig, MultiViewPoseNet, build_model


def save_checkpoint(path, model: MultiViewPoseNet, step: int,
                    momentum: dict[str, torch.Tensor] | None = None) -> None:
    """Write <path>.json + <path>.bin. Momentum buffers ride along so a
    resumed run reproduces the uninterrupted one bit-for-bit."""
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = []
    for name, p in model.state_dict().items():
        arrays.append((f"model.{name}", p.detach().cpu().numpy().astype("<f4")))
    for name, v in (momentum or {}).items():
        arrays.append((f"momentum.{name}", v.detach().cpu().numpy().astype("<f4")))

    entries, offset, chunks = [], 0, []
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "config": asdict(model.cfg),
        "config_hash": model.cfg.config_hash(),
        "step": step,
        "arrays": entries,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(manifest, f, indent=1)
    with open(path.with_suffix(".bin"), "wb") as f:
        f.write(b"".join(chunks))


def load_checkpoint(path, dtype: torch.dtype = torch.float32):
    """Returns (model, step, momentum dict)."""
    path = Path(path)
    with open(path.with_suffix(".json")) as f:
        manifest = json.load(f)
    blob = path.with_suffix(".bin").read_bytes()

    cfg = ModelConfig(**manifest["config"])
    if cfg.config_hash() != manifest["config_hash"]:
        raise CorruptManifest("checkpoint config hash mismatch")

    tensors: dict[str, torch.Tensor] = {}
    for e in manifest["arrays"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CorruptManifest(f"blob truncated at {e['name']}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy()
        tensors[e["name"]] = torch.from_numpy(arr)

    model = build_model(cfg, dtype)
    state = {n[len("model."):]: t.to(dtype) for n, t in tensors.items()
             if n.startswith("model.")}
    model.load_state_dict(state)
    momentum = {n[len("momentum."):]: t.to(dtype) for n, t in tensors.items()
                if n.startswith("momentum.")}
    return model, manifest["step"], momentum
