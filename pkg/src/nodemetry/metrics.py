"""Dice coefficient, composite loss evaluation, and SAD-stratified reports.

Per-patient evaluation labels the ground-truth mask into nodes, measures each
node's SAD, matches predicted components to the nodes they overlap, and
computes Dice three ways: over the whole mask, restricted to nodes at or above
the SAD threshold, and restricted to nodes below it. A stratum with no
ground-truth node is reported as absent, never as 0. Cohort statistics are the
per-patient mean and population standard deviation of each stratum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import label_components
from .errors import ValidationError
from .morphometry import NodeMeasurement, measure_components
from .volume import Volume, assert_same_grid, canonicalize

SOFT_DICE_EPS = 1e-5
BCE_CLAMP = 1e-7
DEFAULT_SAD_THRESHOLD_MM = 8.0

STRATUM_ALL = "all"
STRATUM_LARGE = "large"
STRATUM_SMALL = "small"
STRATA = (STRATUM_ALL, STRATUM_LARGE, STRATUM_SMALL)


@dataclass(frozen=True)
class PatientReport:
    """Stratified Dice and per-node results for one GT/prediction pair."""

    patient_id: str
    dice_all: float
    dice_large: float | None  # absent when no GT node reaches the threshold
    dice_small: float | None  # absent when every GT node reaches it
    per_node: tuple[tuple[NodeMeasurement, float], ...]
    gt_node_count: int
    detected_count: int
    unmatched_pred_count: int

    def stratum_value(self, stratum: str) -> float | None:
        return {STRATUM_ALL: self.dice_all, STRATUM_LARGE: self.dice_large,
                STRATUM_SMALL: self.dice_small}[stratum]


@dataclass(frozen=True)
class StratumStats:
    mean: float | None
    std: float | None  # population std; absent when n < 2
    n: int


@dataclass(frozen=True)
class CohortReport:
    n_patients: int
    strata: dict[str, StratumStats]
    rows: tuple[tuple[str, str, float], ...]  # (patient_id, stratum, dice) for box plots


def dice(a: Volume, b: Volume) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|); two empty masks agree perfectly (1.0)."""
    assert_same_grid(a, b)
    return _dice_masks(a.data != 0, b.data != 0)


def _dice_masks(a: np.ndarray, b: np.ndarray) -> float:
    na = int(np.count_nonzero(a))
    nb = int(np.count_nonzero(b))
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a & b))
    return 2.0 * inter / (na + nb)


def _check_probabilities(p: np.ndarray) -> None:
    if p.size and (float(p.min()) < 0.0 or float(p.max()) > 1.0):
        raise ValidationError("probabilities must lie in [0, 1]")


def soft_dice(prob: Volume, gt: Volume) -> float:
    """Soft Dice (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps) for one class."""
    assert_same_grid(prob, gt)
    p = np.asarray(prob.data, dtype=np.float64)
    _check_probabilities(p)
    g = (gt.data != 0).astype(np.float64)
    return _soft_dice_arrays(p, g)


def _soft_dice_arrays(p: np.ndarray, g: np.ndarray) -> float:
    num = 2.0 * float((p * g).sum()) + SOFT_DICE_EPS
    den = float(p.sum()) + float(g.sum()) + SOFT_DICE_EPS
    return num / den


def _bce_arrays(p: np.ndarray, g: np.ndarray) -> float:
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-(g * np.log(p) + (1.0 - g) * np.log1p(-p)).mean())


def composite_loss(probs: Volume, gt: Volume) -> float:
    """Equally weighted BCE + soft-Dice loss, averaged over classes.

    probs is a per-class probability volume, gt a label volume with the same
    declared class count; per class c the loss is BCE(p_c, onehot_c) plus
    (1 - soft_dice(p_c, onehot_c)).
    """
    assert_same_grid(probs, gt)
    if probs.kind != "probability":
        raise ValidationError("composite_loss needs a probability volume")
    n_classes = probs.class_count
    if gt.class_count is not None and gt.class_count != n_classes:
        raise ValidationError(
            f"class counts differ: probs {n_classes}, gt {gt.class_count}"
        )
    if gt.data.size and int(gt.data.max()) >= n_classes:
        raise ValidationError("gt label outside the probability class range")

    p_all = np.asarray(probs.data, dtype=np.float64)
    _check_probabilities(p_all)
    total = 0.0
    for c in range(n_classes):
        p = p_all[..., c]
        g = (gt.data == c).astype(np.float64)
        total += _bce_arrays(p, g) + (1.0 - _soft_dice_arrays(p, g))
    return total / n_classes


def stratify(measurements, threshold_mm: float = DEFAULT_SAD_THRESHOLD_MM):
    """Split node measurements into (large, small) at the SAD threshold.

    Large means sad_mm >= threshold (the >= is inclusive: an exactly-8mm node
    is clinically significant).
    """
    if threshold_mm <= 0:
        raise ValidationError(f"threshold must be positive, got {threshold_mm}")
    large = tuple(m for m in measurements if m.sad_mm >= threshold_mm)
    small = tuple(m for m in measurements if m.sad_mm < threshold_mm)
    return large, small


def _pair_overlaps(gt_set, pred_set, gt_mask: np.ndarray,
                   pred_mask: np.ndarray) -> dict[tuple[int, int], int]:
    """Voxel overlap count per (gt component, pred component) pair.

    Works inside the intersection of the two foreground bounding boxes, so the
    cost scales with the occupied region, not the grid.
    """
    if gt_set.count == 0 or pred_set.count == 0:
        return {}
    bbox = tuple(
        slice(max(a.start, b.start), min(a.stop, b.stop))
        for a, b in zip(gt_set.bbox, pred_set.bbox)
    )
    if any(s.start >= s.stop for s in bbox):
        return {}
    both = (gt_mask[bbox] != 0) & (pred_mask[bbox] != 0)
    if not both.any():
        return {}
    gi = gt_set.component_of[bbox][both].astype(np.int64)
    pj = pred_set.component_of[bbox][both].astype(np.int64)
    n_pred = pred_set.count
    keys = gi * (n_pred + 1) + pj
    uniq, counts = np.unique(keys, return_counts=True)
    return {(int(k // (n_pred + 1)), int(k % (n_pred + 1))): int(c)
            for k, c in zip(uniq, counts)}


def evaluate_patient(gt_ln: Volume, pred_ln: Volume,
                     threshold_mm: float = DEFAULT_SAD_THRESHOLD_MM,
                     connectivity: int = 26,
                     match_min_overlap: float = 0.0,
                     patient_id: str = "") -> PatientReport:
    """Evaluate one prediction against ground truth, stratified by node SAD.

    A predicted component is matched to every GT node it overlaps (at least
    one voxel, or at least match_min_overlap of the predicted component's
    voxels when set). Per-node Dice compares a node against the union of its
    matched components; stratum Dice compares the union of the stratum's
    nodes against the union of components matched to any of them.
    """
    assert_same_grid(gt_ln, pred_ln)
    gt_c = canonicalize(gt_ln)
    pred_c = canonicalize(pred_ln)

    gt_set = label_components(gt_c.data, connectivity)
    pred_set = label_components(pred_c.data, connectivity)
    measurements = measure_components(gt_set, gt_c)

    overlaps = _pair_overlaps(gt_set, pred_set, gt_c.data, pred_c.data)

    # every intersecting voxel sits in exactly one (gt, pred) component pair
    n_gt = int(gt_set.sizes.sum())
    n_pred_total = int(pred_set.sizes.sum())
    n_inter = sum(overlaps.values())
    dice_all = 1.0 if n_gt + n_pred_total == 0 else 2.0 * n_inter / (n_gt + n_pred_total)

    gt_sizes = gt_set.sizes
    pred_sizes = pred_set.sizes
    matched_preds: dict[int, list[int]] = {i: [] for i in range(1, gt_set.count + 1)}
    matched_any_pred = set()
    overlapped_gt = set()
    for (i, j), n_vox in overlaps.items():
        overlapped_gt.add(i)
        if n_vox >= match_min_overlap * pred_sizes[j - 1]:
            matched_preds[i].append(j)
            matched_any_pred.add(j)

    per_node = []
    for i in range(1, gt_set.count + 1):
        js = matched_preds[i]
        inter = sum(overlaps[(i, j)] for j in js)
        union_pred = int(pred_sizes[[j - 1 for j in js]].sum()) if js else 0
        d = 2.0 * inter / (int(gt_sizes[i - 1]) + union_pred) if (gt_sizes[i - 1] + union_pred) else 1.0
        per_node.append((measurements[i - 1], d))

    def stratum_dice(node_ids: list[int]) -> float | None:
        if not node_ids:
            return None
        js = sorted({j for i in node_ids for j in matched_preds[i]})
        g_total = int(gt_sizes[[i - 1 for i in node_ids]].sum())
        p_total = int(pred_sizes[[j - 1 for j in js]].sum()) if js else 0
        # every overlap between the stratum's GT voxels and the matched
        # components counts, also pairs below the matching threshold
        inter = sum(overlaps.get((i, j), 0) for i in node_ids for j in js)
        return 2.0 * inter / (g_total + p_total) if (g_total + p_total) else 1.0

    large_ids = [m.component_index for m in measurements if m.sad_mm >= threshold_mm]
    small_ids = [m.component_index for m in measurements if m.sad_mm < threshold_mm]

    return PatientReport(
        patient_id=patient_id,
        dice_all=dice_all,
        dice_large=stratum_dice(large_ids),
        dice_small=stratum_dice(small_ids),
        per_node=tuple(per_node),
        gt_node_count=gt_set.count,
        detected_count=len(overlapped_gt),
        unmatched_pred_count=pred_set.count - len(matched_any_pred),
    )


def aggregate(reports) -> CohortReport:
    """Cohort mean and population std per stratum over the patients that
    possess it, plus per-patient rows for box-plot tooling."""
    reports = list(reports)
    if not reports:
        raise ValidationError("aggregate needs at least one patient report")

    strata: dict[str, StratumStats] = {}
    for stratum in STRATA:
        values = [r.stratum_value(stratum) for r in reports]
        values = [v for v in values if v is not None]
        if not values:
            strata[stratum] = StratumStats(mean=None, std=None, n=0)
            continue
        arr = np.asarray(values, dtype=np.float64)
        mean = float(arr.mean())
        std = float(arr.std(ddof=0)) if len(arr) >= 2 else None
        strata[stratum] = StratumStats(mean=mean, std=std, n=len(arr))

    rows = []
    for r in sorted(reports, key=lambda r: r.patient_id):
        for stratum in STRATA:
            v = r.stratum_value(stratum)
            if v is not None:
                rows.append((r.patient_id, stratum, v))
    return CohortReport(n_patients=len(reports), strata=strata, rows=tuple(rows))
