"""Aggregated object point cloud, per-point feature encoder, and dispersal
of point features back into view-aligned feature maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import EmptyCloud, NonFinite, ProvenanceOutOfRange
from .render import ViewBundle


@dataclass
class PointSet:
    """S x 9 records (position, normal, color) with per-point source pixels."""

    records: np.ndarray      # (S, 9) float32
    provenance: np.ndarray   # (S, 3) int64 rows of (view index, u, v)
    view_shape: tuple[int, int]  # (H, W) of the source views

    def __len__(self) -> int:
        return len(self.records)


def assemble_point_cloud(bundles: list[ViewBundle], stride: int = 4) -> PointSet:
    """Concatenate masked pixels of all views, sampled on a stride grid.

    Record order is (view-major, row-major); positions are copied verbatim
    from the source point maps.
    """
    if len(bundles) == 0 or stride < 1:
        raise EmptyCloud("need at least one bundle and stride >= 1")
    H, W = bundles[0].mask.shape
    records, prov = [], []
    for i, b in enumerate(bundles):
        sub = b.mask[::stride, ::stride].astype(bool)
        vs, us = np.nonzero(sub)
        vs, us = vs * stride, us * stride
        if len(us) == 0:
            continue
        rec = np.concatenate(
            [b.pointmap[vs, us], b.normal[vs, us], b.rgb[vs, us]], axis=1
        )
        records.append(rec.astype(np.float32))
        p = np.empty((len(us), 3), dtype=np.int64)
        p[:, 0] = i
        p[:, 1] = us
        p[:, 2] = vs
        prov.append(p)
    if not records:
        raise EmptyCloud("no masked pixels survive the stride grid")
    return PointSet(np.concatenate(records), np.concatenate(prov), (H, W))


class PointFeatureEncoder(nn.Module):
    """Per-point features with pooled global context.

    Two per-point layers, a global max-pool, concatenation of the pooled
    vector back onto every point, and one more layer down to c_out dims.
    Permutation-equivariant by construction.
    """

    def __init__(self, c_out: int = 64, hidden: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(9, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(2 * hidden, c_out)
        self.c_out = c_out

    def forward(self, records: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(records).all():
            raise NonFinite("point records contain NaN/Inf")
        h = torch.relu(self.fc1(records))
        h = torch.relu(self.fc2(h))
        pooled = h.max(dim=0, keepdim=True).values.expand_as(h)
        return self.fc3(torch.cat([h, pooled], dim=-1))


def encode_points(ps: PointSet, encoder: PointFeatureEncoder) -> torch.Tensor:
    """Run the encoder on a PointSet; returns (S, C) embeddings."""
    dtype = next(encoder.parameters()).dtype
    return encoder(torch.from_numpy(ps.records).to(dtype))


def disperse_to_feature_maps(
    embeddings: torch.Tensor,
    provenance: np.ndarray,
    n_views: int,
    view_shape: tuple[int, int],
    stride: int,
) -> tuple[torch.Tensor, int]:
    """Scatter embeddings into (N, H/stride, W/stride, C) maps by provenance.

    Non-provenance cells stay exactly zero. When stride aliasing maps two
    points to the same cell the later record wins; the number of dropped
    earlier records is returned as the collision count.
    """
    H, W = view_shape
    Hs, Ws = H // stride, W // stride
    S, C = embeddings.shape
    view = provenance[:, 0]
    us = provenance[:, 1] // stride
    vs = provenance[:, 2] // stride
    if (view.min(initial=0) < 0 or view.max(initial=-1) >= n_views
            or (us >= Ws).any() or (vs >= Hs).any()
            or (provenance[:, 1:] < 0).any()):
        raise ProvenanceOutOfRange("provenance pixel outside its view")

    flat = view * (Hs * Ws) + vs * Ws + us
    # keep only the last record per cell so the scatter is deterministic
    last = {}
    for j, f in enumerate(flat.tolist()):
        last[f] = j
    keep = np.fromiter(last.values(), dtype=np.int64)
    collisions = S - len(keep)

    maps = embeddings.new_zeros((n_views * Hs * Ws, C))
    maps[torch.from_numpy(flat[keep])] = embeddings[torch.from_numpy(keep)]
    return maps.reshape(n_views, Hs, Ws, C), collisions


def gather_from_feature_maps(maps: torch.Tensor, provenance: np.ndarray,
                             stride: int) -> torch.Tensor:
    """Inverse of the scatter on collision-free provenance."""
    view = torch.from_numpy(provenance[:, 0])
    us = torch.from_numpy(provenance[:, 1] // stride)
    vs = torch.from_numpy(provenance[:, 2] // stride)
    return maps[view, vs, us]
