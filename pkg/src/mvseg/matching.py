"""Hungarian set-prediction assignment and the combined training loss.

Image-level terms use one independent assignment per view; batch-level
terms use a single assignment computed on the cost summed over the views
where each entity is present, so one query owns one entity in every view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError, NonFiniteLoss
from .grad import Tensor, ops, pause
from .grad.tensor import default_dtype


@dataclass(frozen=True)
class LossWeights:
    ce: float = 2.0
    bce: float = 5.0
    dice: float = 5.0
    dice_eps: float = 1.0


@dataclass
class Assignment:
    pairs: list               # (query index, entity index), sorted by query
    unmatched_queries: list

    def query_for_entity(self) -> dict:
        return {e: q for q, e in self.pairs}


@dataclass
class LossReport:
    """The six loss terms; total is their weighted sum."""

    ce_i: float
    bce_i: float
    dice_i: float
    ce_b: float
    bce_b: float
    dice_b: float
    total: float
    weights: LossWeights

    def as_dict(self):
        return {
            "ce_i": self.ce_i, "bce_i": self.bce_i, "dice_i": self.dice_i,
            "ce_b": self.ce_b, "bce_b": self.bce_b, "dice_b": self.dice_b,
            "total": self.total,
        }


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost assignment of min(M, E) pairs.

    O(n^3) potentials-and-augmenting-paths formulation; all scans go in
    index order, so ties resolve toward the lowest (query, entity) index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {cost.shape}")
    m, e = cost.shape
    if m == 0 or e == 0:
        return Assignment(pairs=[], unmatched_queries=list(range(m)))
    if not np.all(np.isfinite(cost)):
        raise InputError("cost matrix contains non-finite entries")

    n = max(m, e)
    sq = np.zeros((n, n), dtype=np.float64)
    sq[:m, :e] = cost

    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=np.intp)  # column -> row (1-based, 0 free)
    for row in range(1, n + 1):
        match_col[0] = row
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        way = np.zeros(n + 1, dtype=np.intp)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = inf
            j1 = -1
            cur = sq[i0 - 1] - u[i0] - v[1:]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                val = cur[j - 1]
                if val < minv[j]:
                    minv[j] = val
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            minv[~used] -= delta
            u[match_col[used]] += delta
            v[used] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1

    pairs = []
    for col in range(1, n + 1):
        row = match_col[col] - 1
        if row < m and col - 1 < e:
            pairs.append((int(row), int(col - 1)))
    pairs.sort()
    matched_rows = {q for q, _ in pairs}
    return Assignment(pairs=pairs,
                      unmatched_queries=[q for q in range(m) if q not in matched_rows])


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def match_cost(ent_logits: np.ndarray, mask_logits: np.ndarray,
               gt_masks: np.ndarray, weights: LossWeights) -> np.ndarray:
    """Dense (all-pixel) matching cost between N predictions and E entities.

    cost(n, e) = w_ce*(1 - sigmoid(ent_n)) + w_bce*BCE(mask_n, gt_e)
               + w_dice*Dice(mask_n, gt_e), with BCE averaged per pixel.
    """
    n = mask_logits.shape[0]
    if gt_masks.ndim != 3 or gt_masks.shape[1:] != mask_logits.shape[1:]:
        raise DimensionError(
            f"mask resolution mismatch: preds {mask_logits.shape[1:]} vs gt {gt_masks.shape[1:]}")
    e = gt_masks.shape[0]
    hw = mask_logits.shape[1] * mask_logits.shape[2]
    x = mask_logits.reshape(n, hw).astype(np.float64)
    g = gt_masks.reshape(e, hw).astype(np.float64)

    # stable dense BCE: -log(sigmoid) = softplus(-x), -log(1-sigmoid) = softplus(x)
    bce = (_softplus(-x) @ g.T + _softplus(x) @ (1.0 - g).T) / hw

    p = _sigmoid(x)
    inter = p @ g.T
    denom = p.sum(axis=1, keepdims=True) + g.sum(axis=1)[None, :]
    dice = 1.0 - (2.0 * inter + weights.dice_eps) / (denom + weights.dice_eps)

    ent = weights.ce * (1.0 - _sigmoid(ent_logits.astype(np.float64)))[:, None]
    return ent + weights.bce * bce + weights.dice * dice


def _pair_terms(mask_logits: Tensor, index, gt_stack: np.ndarray, eps: float):
    """BCE and dice terms for matched (view, query) -> entity mask pairs."""
    picked = ops.getitem(mask_logits, index)        # (P, h, w)
    gt = Tensor(gt_stack.astype(default_dtype()))
    bce = ops.mean(ops.bce_with_logits(picked, gt))
    probs = ops.sigmoid(picked)
    inter = ops.sum_(ops.mul(probs, gt), axis=(1, 2))
    denom = ops.add(ops.sum_(probs, axis=(1, 2)), ops.sum_(gt, axis=(1, 2)))
    dice_vec = ops.sub(1.0, ops.div(ops.add(ops.mul(inter, 2.0), eps), ops.add(denom, eps)))
    return bce, ops.mean(dice_vec)


def _zero() -> Tensor:
    return Tensor(np.asarray(0.0, dtype=default_dtype()))


def image_level_loss(ent_logits: Tensor, mask_logits: Tensor, view_targets,
                     weights: LossWeights):
    """Per-view independent assignment. ent_logits: (T, N); mask_logits:
    (T, N, h, w); view_targets: per view (masks (E, h, w), present (E,))."""
    t_count, n = ent_logits.shape
    ce_targets = np.zeros((t_count, n), dtype=default_dtype())
    pick_t, pick_q, gts = [], [], []
    for t, (gt_masks, present) in enumerate(view_targets):
        idx = np.flatnonzero(present)
        if idx.size == 0:
            continue
        with pause():
            cost = match_cost(ent_logits.data[t], mask_logits.data[t],
                              gt_masks[idx], weights)
        assign = hungarian(cost)
        for q, local_e in assign.pairs:
            ce_targets[t, q] = 1.0
            pick_t.append(t)
            pick_q.append(q)
            gts.append(gt_masks[idx[local_e]])
    ce = ops.mean(ops.bce_with_logits(ent_logits, Tensor(ce_targets)))
    if not pick_t:
        return ce, _zero(), _zero()
    index = (np.asarray(pick_t), np.asarray(pick_q))
    bce, dice = _pair_terms(mask_logits, index, np.stack(gts), weights.dice_eps)
    return ce, bce, dice


def batch_level_loss(ent_logits: Tensor, mask_logits: Tensor, view_targets,
                     weights: LossWeights):
    """One assignment on the view-summed cost; the matched query's mask is
    supervised in every view where the entity is present. ent_logits: (N,);
    mask_logits: (T, N, h, w)."""
    n = ent_logits.shape[0]
    t_count = mask_logits.shape[0]
    e_count = view_targets[0][0].shape[0] if view_targets else 0
    present = np.stack([vt[1] for vt in view_targets]) if view_targets else np.zeros((0, 0), bool)
    visible = np.flatnonzero(present.any(axis=0))

    ce_targets = np.zeros(n, dtype=default_dtype())
    pick_t, pick_q, gts = [], [], []
    if visible.size:
        with pause():
            total = np.zeros((n, visible.size))
            for t in range(t_count):
                idx = np.flatnonzero(present[t][visible])
                if idx.size == 0:
                    continue
                cost_t = match_cost(ent_logits.data, mask_logits.data[t],
                                    view_targets[t][0][visible[idx]], weights)
                total[:, idx] += cost_t
        assign = hungarian(total)
        for q, local_e in assign.pairs:
            e = visible[local_e]
            ce_targets[q] = 1.0
            for t in range(t_count):
                if present[t, e]:
                    pick_t.append(t)
                    pick_q.append(q)
                    gts.append(view_targets[t][0][e])
    ce = ops.mean(ops.bce_with_logits(ent_logits, Tensor(ce_targets)))
    if not pick_t:
        return ce, _zero(), _zero()
    index = (np.asarray(pick_t), np.asarray(pick_q))
    bce, dice = _pair_terms(mask_logits, index, np.stack(gts), weights.dice_eps)
    return ce, bce, dice


def total_loss(terms_i, terms_b, weights: LossWeights):
    """Weighted sum of the six terms; returns (scalar Tensor, LossReport)."""
    ce_i, bce_i, dice_i = terms_i
    ce_b, bce_b, dice_b = terms_b
    total = ops.add(
        ops.add(ops.mul(ops.add(ce_i, ce_b), weights.ce),
                ops.mul(ops.add(bce_i, bce_b), weights.bce)),
        ops.mul(ops.add(dice_i, dice_b), weights.dice))
    report = LossReport(
        ce_i=float(ce_i.data), bce_i=float(bce_i.data), dice_i=float(dice_i.data),
        ce_b=float(ce_b.data), bce_b=float(bce_b.data), dice_b=float(dice_b.data),
        total=float(total.data), weights=weights)
    if not np.isfinite(report.total):
        raise NonFiniteLoss(f"non-finite training loss: {report.as_dict()}")
    return total, report
