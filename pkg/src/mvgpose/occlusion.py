"""Synthetic occluders for query views: ellipses, rectangles, free-form strokes."""

from __future__ import annotations

import numpy as np

from .errors import BudgetInfeasible

KINDS = ("ellipse", "rectangle", "freeform")


def apply_occlusion(
    rgb: np.ndarray,
    mask: np.ndarray,
    kind: str,
    rng: np.random.Generator,
    budget: float = 0.2,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero out RGB and mask under a random occluder of ~budget * mask area.

    budget is the occluder area as a fraction of the object mask area
    (0 leaves the input untouched). The occluder is centered on a random
    object pixel so it actually hides part of the object. Returns
    (rgb, mask, occluder_mask) copies.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown occluder kind {kind!r}")
    rgb = rgb.copy()
    mask = mask.copy()
    h, w = mask.shape
    if budget <= 0:
        return rgb, mask, np.zeros((h, w), dtype=np.uint8)

    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise BudgetInfeasible("object mask is empty")
    area = budget * len(ys)
    i = rng.integers(len(ys))
    cy, cx = float(ys[i]), float(xs[i])

    if kind == "rectangle":
        aspect = rng.uniform(0.5, 2.0)
        bw = np.sqrt(area * aspect)
        bh = area / bw
        angle = rng.uniform(0, np.pi)
        occ = _rotated_rect(h, w, cx, cy, bw, bh, angle)
    elif kind == "ellipse":
        aspect = rng.uniform(0.5, 2.0)
        ra = np.sqrt(area * aspect / np.pi)
        rb = area / (np.pi * ra)
        angle = rng.uniform(0, np.pi)
        occ = _rotated_ellipse(h, w, cx, cy, ra, rb, angle)
    else:
        bbox = (xs.min(), xs.max(), ys.min(), ys.max())
        occ = _freeform_strokes(h, w, cx, cy, area, rng, bbox, mask)

    rgb[occ.astype(bool)] = 0
    mask[occ.astype(bool)] = 0
    return rgb, mask, occ


def _pixel_grid(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w]
    return xs + 0.5, ys + 0.5


def _rotated_rect(h, w, cx, cy, bw, bh, angle) -> np.ndarray:
    xs, ys = _pixel_grid(h, w)
    dx, dy = xs - cx, ys - cy
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    return ((np.abs(u) <= bw / 2) & (np.abs(v) <= bh / 2)).astype(np.uint8)


def _rotated_ellipse(h, w, cx, cy, ra, rb, angle) -> np.ndarray:
    xs, ys = _pixel_grid(h, w)
    dx, dy = xs - cx, ys - cy
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    return (((u / ra) ** 2 + (v / rb) ** 2) <= 1.0).astype(np.uint8)


def _freeform_strokes(h, w, cx, cy, area, rng, bbox, mask) -> np.ndarray:
    """Random-walk brush: stamp discs along a jittering path until the union
    reaches the area budget. The walk is confined to the object bbox and
    keeps going until at least a quarter of the budget overlaps the object,
    so a wandering stroke cannot degenerate into a no-op occluder."""
    occ = np.zeros((h, w), dtype=np.uint8)
    radius = max(1.5, np.sqrt(area / np.pi) / 3.0)
    x0, x1, y0, y1 = bbox
    x, y = cx, cy
    heading = rng.uniform(0, 2 * np.pi)
    xs, ys = _pixel_grid(h, w)
    mask_bool = mask.astype(bool)
    for _ in range(256):
        occ |= (((xs - x) ** 2 + (ys - y) ** 2) <= radius**2).astype(np.uint8)
        if occ.sum() >= area and (occ.astype(bool) & mask_bool).sum() >= 0.25 * area:
            break
        heading += rng.uniform(-0.9, 0.9)
        step = radius * rng.uniform(0.7, 1.6)
        x = np.clip(x + step * np.cos(heading), x0, x1)
        y = np.clip(y + step * np.sin(heading), y0, y1)
    return occ
