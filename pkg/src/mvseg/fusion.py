"""Full inference path: multi-view forward, probability fusion at full
resolution, and non-overlapping entity map extraction.

Decoder modes select which predictions feed the per-pixel average:
  i-o   image-level decoder, full view only
  b-o   batch-level decoder, full view only
  b-c   batch-level decoder, the four corner crops
  b-oc  batch-level decoder, full view plus the four crops

The batch-level modes share one five-view forward pass, so with delta = 1
the averaged maps are identical and b-oc collapses bitwise onto b-o.
Fusion accumulates in float64 and casts once, which makes the average of
T identical float32 maps return them bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, kernels, rle
from .errors import ParameterError
from .grad import pause
from .model import MultiViewModel

MODES = ("i-o", "b-o", "b-c", "b-oc")


@dataclass
class ViewPredictions:
    """Per-view mask probability maps selected for fusion."""

    probs: np.ndarray   # (V, N, h, w) float32 probabilities
    rects: list         # V source rectangles in the full frame
    scores: np.ndarray  # (N,) entity confidence
    image_size: tuple


@dataclass
class FusedEntityMap:
    """Non-overlapping entities at full resolution, scores nonincreasing."""

    entities: list      # (score, full-resolution bool mask)
    label: np.ndarray   # (H, W) int32; -1 background, else entity index

    def to_record(self, image_id) -> dict:
        return {
            "image_id": image_id,
            "entities": [{"score": float(s), "rle": rle.encode(m)}
                         for s, m in self.entities],
        }


def _sigmoid32(x):
    x = np.asarray(x, dtype=np.float64)
    return (1.0 / (1.0 + np.exp(-x))).astype(np.float32)


def infer_views(model: MultiViewModel, image: np.ndarray, delta: float,
                mode: str, fuse_space: str = "prob") -> ViewPredictions:
    """Run the network on the fusion batch and pick the maps `mode` fuses."""
    if mode not in MODES:
        raise ParameterError(f"decoder mode must be one of {MODES}, got {mode!r}")
    size = model.cfg.input_size
    with pause():
        if mode == "i-o":
            batch = geometry.build_fusion_batch(image, delta, size, include_crops=False)
            preds = model.forward(batch.views[None])
            logits = preds.mask_image.data[0]                # (1, N, h, w)
            scores = _sigmoid32(preds.ent_image.data[0, 0])
            rects = batch.rects
        else:
            batch = geometry.build_fusion_batch(image, delta, size, include_crops=True)
            preds = model.forward(batch.views[None])
            logits = preds.mask_batch.data[0]                # (T, N, h, w)
            scores = _sigmoid32(preds.ent_batch.data[0])
            if mode == "b-o":
                logits, rects = logits[:1], batch.rects[:1]
            elif mode == "b-c":
                logits, rects = logits[1:], batch.rects[1:]
            else:
                rects = batch.rects
    maps = np.ascontiguousarray(logits) if fuse_space == "logit" else _sigmoid32(logits)
    return ViewPredictions(probs=maps, rects=list(rects), scores=scores,
                           image_size=batch.image_size)


def fuse_probability(views: ViewPredictions, fuse_space: str = "prob") -> np.ndarray:
    """Per-pixel mean over the views covering each pixel, at full resolution.

    Views are visited in a canonical rectangle order so the result does not
    depend on how the crops were stacked.
    """
    full_h, full_w = views.image_size
    n = views.probs.shape[1]
    acc = np.zeros((n, full_h, full_w), dtype=np.float64)
    cnt = np.zeros((full_h, full_w), dtype=np.int32)
    order = sorted(range(len(views.rects)), key=lambda i: views.rects[i])
    for i in order:
        x0, y0, x1, y1 = views.rects[i]
        kernels.bilinear_accumulate(acc, cnt, views.probs[i], x0, y0, x1, y1)
    covered = cnt > 0
    out = np.zeros((n, full_h, full_w), dtype=np.float64)
    out[:, covered] = acc[:, covered] / cnt[covered]
    if fuse_space == "logit":
        out = 1.0 / (1.0 + np.exp(-out))
        out[:, ~covered] = 0.0
    return out.astype(np.float32)


def emit_entities(fused: np.ndarray, scores: np.ndarray,
                  score_threshold: float = 0.3, mask_threshold: float = 0.5) -> FusedEntityMap:
    """Resolve overlaps by score*probability argmax and drop weak entities."""
    if not (0.0 < score_threshold < 1.0) or not (0.0 < mask_threshold < 1.0):
        raise ParameterError("thresholds must lie in (0, 1)")
    keep = np.flatnonzero(scores >= score_threshold)
    h, w = fused.shape[-2:]
    if keep.size == 0:
        return FusedEntityMap(entities=[], label=np.full((h, w), -1, dtype=np.int32))
    weighted = scores[keep, None, None] * fused[keep]
    valid = fused[keep] >= mask_threshold
    weighted[~valid] = -1.0
    best = np.argmax(weighted, axis=0)          # ties go to the lowest index
    label_q = np.where(valid.any(axis=0), keep[best], -1)

    entities = []
    for rank, q in enumerate(keep):
        m = label_q == q
        if m.any():
            entities.append((float(scores[q]), int(q), m))
    entities.sort(key=lambda t: (-t[0], t[1]))
    label = np.full((h, w), -1, dtype=np.int32)
    out = []
    for idx, (score, _, m) in enumerate(entities):
        label[m] = idx
        out.append((score, m))
    return FusedEntityMap(entities=out, label=label)


def run_inference(model: MultiViewModel, image: np.ndarray, delta: float, mode: str,
                  score_threshold: float = 0.3, mask_threshold: float = 0.5,
                  fuse_space: str = "prob") -> FusedEntityMap:
    views = infer_views(model, image, delta, mode, fuse_space)
    fused = fuse_probability(views, fuse_space)
    return emit_entities(fused, views.scores, score_threshold, mask_threshold)
