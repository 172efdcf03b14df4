"""Crop geometry: fixed-corner regions, resizing, coordinate maps, and
per-view ground-truth rasterization.

Conventions, fixed once for the whole system:
  * crop side length is round-half-up of delta times the image side,
    anchored exactly to the named corner;
  * bilinear resampling is corner-aligned: destination index i samples
    source coordinate i*(S-1)/(D-1), so linear ramps are reproduced
    exactly and identity-size resizes are bit-identical copies;
  * images and probability maps resample bilinearly, label/mask rasters
    use nearest neighbor (round half up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import DataError, DimensionError, ParameterError

CORNERS = ("upper_left", "upper_right", "bottom_left", "bottom_right")
FULL = "full"


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class CropSpec:
    """A fixed-corner crop: per-dimension side ratio `delta` in (0, 1]."""

    corner: str
    delta: float

    def __post_init__(self):
        if self.corner not in CORNERS + (FULL,):
            raise ParameterError(f"unknown corner {self.corner!r}")
        if not (0.0 < self.delta <= 1.0):
            raise ParameterError(f"delta must be in (0, 1], got {self.delta}")
        if self.corner == FULL and self.delta != 1.0:
            raise ParameterError("full view requires delta == 1.0")


def full_spec() -> CropSpec:
    return CropSpec(FULL, 1.0)


def corner_specs(delta: float) -> list[CropSpec]:
    return [CropSpec(c, delta) for c in CORNERS]


def crop_region(spec: CropSpec, width: int, height: int) -> tuple[int, int, int, int]:
    """Pixel rectangle (x0, y0, x1, y1) of the crop in the full image."""
    if width < 1 or height < 1:
        raise ParameterError(f"degenerate image extents {width}x{height}")
    if spec.corner == FULL:
        return (0, 0, width, height)
    cw = max(1, round_half_up(spec.delta * width))
    ch = max(1, round_half_up(spec.delta * height))
    x0 = 0 if spec.corner in ("upper_left", "bottom_left") else width - cw
    y0 = 0 if spec.corner in ("upper_left", "upper_right") else height - ch
    return (x0, y0, x0 + cw, y0 + ch)


# ---------------------------------------------------------------------------
# coordinate maps between a view raster and the full-image frame.
# Exact rational arithmetic keeps the two maps mutual inverses on covered
# pixels; the resampling kernels use the same convention in float.

def view_to_full_coord(p, view_len: int, r0: int, r1: int):
    """Map a view-axis coordinate to the full-image axis (one dimension)."""
    if view_len > 1:
        return r0 + Fraction(p) * Fraction(r1 - r0 - 1, view_len - 1)
    return Fraction(r0)


def full_to_view_coord(x, view_len: int, r0: int, r1: int):
    """Inverse of `view_to_full_coord` on the covered interval."""
    if r1 - r0 > 1:
        return (Fraction(x) - r0) * Fraction(view_len - 1, r1 - r0 - 1)
    return Fraction(0)


# ---------------------------------------------------------------------------
# resampling

def _channels_first(img):
    if img.ndim == 2:
        return img[None], True
    return np.ascontiguousarray(np.moveaxis(img, -1, 0)), False


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of (H, W) or (H, W, C) float rasters."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"target extents must be >= 1, got {out_h}x{out_w}")
    if img.shape[0] == out_h and img.shape[1] == out_w:
        return img.copy()
    cf, squeeze = _channels_first(np.asarray(img, dtype=np.float32))
    out = kernels.bilinear_resize(cf, out_h, out_w)
    return out[0] if squeeze else np.moveaxis(out, 0, -1)


def _nearest_indices(src_len: int, dst_len: int) -> np.ndarray:
    if dst_len == 1:
        return np.zeros(1, dtype=np.intp)
    coords = np.arange(dst_len, dtype=np.float64) * ((src_len - 1) / (dst_len - 1))
    return np.clip(np.floor(coords + 0.5).astype(np.intp), 0, src_len - 1)


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize for label and mask rasters."""
    if arr.shape[0] == out_h and arr.shape[1] == out_w:
        return arr.copy()
    yi = _nearest_indices(arr.shape[0], out_h)
    xi = _nearest_indices(arr.shape[1], out_w)
    return arr[yi[:, None], xi[None, :]]


# ---------------------------------------------------------------------------
# scenes and batches

@dataclass
class GroundTruthScene:
    """Non-overlapping full-resolution entity masks."""

    entity_ids: list
    label: np.ndarray  # (H, W) int, -1 background, else index into entity_ids

    @classmethod
    def from_masks(cls, masks, entity_ids=None):
        masks = [np.asarray(m, dtype=bool) for m in masks]
        if entity_ids is None:
            entity_ids = list(range(len(masks)))
        label = np.full(masks[0].shape if masks else (0, 0), -1, dtype=np.int16)
        covered = np.zeros_like(label, dtype=bool)
        for i, m in enumerate(masks):
            if not m.any():
                raise DataError(f"entity {entity_ids[i]} has an empty mask")
            if (covered & m).any():
                raise DataError(f"entity {entity_ids[i]} overlaps a previous mask")
            covered |= m
            label[m] = i
        return cls(entity_ids=list(entity_ids), label=label)

    @property
    def height(self):
        return self.label.shape[0]

    @property
    def width(self):
        return self.label.shape[1]

    def mask(self, index: int) -> np.ndarray:
        return self.label == index

    def masks(self) -> list[np.ndarray]:
        return [self.mask(i) for i in range(len(self.entity_ids))]


@dataclass
class ViewGroundTruth:
    """Entity masks rasterized into one view's frame."""

    masks: np.ndarray    # (E, H', W') bool; all-zero where absent
    present: np.ndarray  # (E,) bool: entity intersects the crop rectangle


@dataclass
class MultiViewBatch:
    """A full image plus resized views with their source rectangles."""

    image_size: tuple[int, int]          # (H, W) of the full image
    rects: list[tuple[int, int, int, int]]
    specs: list[CropSpec | None]         # None for free-position crops
    views: np.ndarray                    # (T, 3, H', W') float32

    @property
    def view_count(self):
        return len(self.rects)


def _extract_view(image: np.ndarray, rect, out_h: int, out_w: int) -> np.ndarray:
    x0, y0, x1, y1 = rect
    crop = image[y0:y1, x0:x1]
    view = resize_bilinear(crop, out_h, out_w)
    return np.ascontiguousarray(np.moveaxis(view, -1, 0))


def rasterize_view_gt_rect(scene: GroundTruthScene, rect, out_h: int, out_w: int) -> ViewGroundTruth:
    x0, y0, x1, y1 = rect
    sub = scene.label[y0:y1, x0:x1]
    view_label = resize_nearest(sub, out_h, out_w)
    n = len(scene.entity_ids)
    present = np.zeros(n, dtype=bool)
    present_in_rect = np.unique(sub)
    present[present_in_rect[present_in_rect >= 0]] = True
    masks = np.zeros((n, out_h, out_w), dtype=bool)
    for i in np.unique(view_label):
        if i >= 0:
            masks[i] = view_label == i
    return ViewGroundTruth(masks=masks, present=present)


def rasterize_view_gt(scene: GroundTruthScene, spec: CropSpec, out_h: int, out_w: int) -> ViewGroundTruth:
    rect = crop_region(spec, scene.width, scene.height)
    return rasterize_view_gt_rect(scene, rect, out_h, out_w)


def map_view_to_full_rect(rect, view: np.ndarray, full_h: int, full_w: int):
    """Resample a view raster back onto its rectangle of a full canvas.

    Returns (canvas, coverage); coverage is True exactly on the rectangle.
    """
    x0, y0, x1, y1 = rect
    if not (0 <= x0 < x1 <= full_w and 0 <= y0 < y1 <= full_h):
        raise DimensionError(f"rect {rect} outside full extents {full_w}x{full_h}")
    src = np.ascontiguousarray(view[None].astype(np.float64, copy=False))
    acc = np.zeros((1, full_h, full_w), dtype=np.float64)
    cnt = np.zeros((full_h, full_w), dtype=np.int32)
    kernels.bilinear_accumulate(acc, cnt, src, x0, y0, x1, y1)
    coverage = cnt > 0
    return acc[0].astype(view.dtype, copy=False), coverage


def map_view_to_full(spec: CropSpec, view: np.ndarray, full_h: int, full_w: int):
    rect = crop_region(spec, full_w, full_h)
    return map_view_to_full_rect(rect, view, full_h, full_w)


def _random_rect(delta: float, width: int, height: int, rng) -> tuple[int, int, int, int]:
    cw = max(1, round_half_up(delta * width))
    ch = max(1, round_half_up(delta * height))
    x0 = int(rng.integers(0, width - cw + 1))
    y0 = int(rng.integers(0, height - ch + 1))
    return (x0, y0, x0 + cw, y0 + ch)


def build_training_batch(image: np.ndarray, scene: GroundTruthScene, delta: float,
                         rng, out_size: int, crops: str = "fixed4"):
    """View 0 is the full image; view 1 is one crop drawn by `rng`.

    Returns (MultiViewBatch, [ViewGroundTruth per view]).
    """
    if not (0.0 < delta < 1.0):
        raise ParameterError(f"training delta must be in (0, 1), got {delta}")
    h, w = image.shape[:2]
    if min(h, w) < 4:
        raise DataError(f"image too small to crop: {w}x{h}")
    specs: list[CropSpec | None] = [full_spec()]
    rects = [(0, 0, w, h)]
    if crops == "fixed4":
        spec = CropSpec(CORNERS[int(rng.integers(4))], delta)
        specs.append(spec)
        rects.append(crop_region(spec, w, h))
    elif crops == "random":
        specs.append(None)
        rects.append(_random_rect(delta, w, h, rng))
    else:
        raise ParameterError(f"unknown training crop set {crops!r}")
    views = np.stack([_extract_view(image, r, out_size, out_size) for r in rects])
    gts = [rasterize_view_gt_rect(scene, r, out_size, out_size) for r in rects]
    return MultiViewBatch((h, w), rects, specs, views), gts


def build_fusion_batch(image: np.ndarray, delta: float, out_size: int,
                       include_crops: bool = True) -> MultiViewBatch:
    """Inference batch: the full view plus, optionally, the 4 corner crops."""
    h, w = image.shape[:2]
    if min(h, w) < 4:
        raise DataError(f"image too small for inference: {w}x{h}")
    specs: list[CropSpec | None] = [full_spec()]
    if include_crops:
        specs.extend(corner_specs(delta))
    rects = [crop_region(s, w, h) for s in specs]
    views = np.stack([_extract_view(image, r, out_size, out_size) for r in rects])
    return MultiViewBatch((h, w), rects, specs, views)
