"""COCO-style evaluation: confusion counts, PR metrics, greedy IoU matching,
101-point interpolated AP, mAP, the threshold sweep AP50:95, and scale
buckets.

Canonical ordering rules (shared with any reference implementation so
results are reproducible to the bit): detections are ranked by descending
confidence with ties broken by image id order then insertion order; classes
iterate in sorted label order; IoU thresholds ascend.
"""

import bisect
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import mask_iou

IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))

SMALL_MAX_AREA = 32 * 32  # exclusive upper bound for "small"
MEDIUM_MAX_AREA = 96 * 96  # inclusive upper bound for "medium"


def prf_metrics(tp, fp, fn, tn=0):
    """(precision, recall, f1, accuracy) with vacuous 0/0 cases read as 1."""
    for name, v in (("tp", tp), ("fp", fp), ("fn", fn), ("tn", tn)):
        if v < 0:
            raise ValueError(f"{name} must be >= 0, got {v}")
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 1.0
    return precision, recall, f1, accuracy


def box_iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = min(ax + aw, bx + bw) - max(ax, bx)
    iy = min(ay + ah, by + bh) - max(ay, by)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 1.0 if inter == 0.0 else 0.0
    return inter / union


def _check_geometry(mask, box, what):
    if (mask is None) == (box is None):
        raise InputError(f"{what} needs exactly one of mask or box")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    else:
        box = tuple(float(v) for v in box)
        if len(box) != 4 or box[2] < 0 or box[3] < 0:
            raise InputError(f"{what} box must be (x, y, w, h) with w, h >= 0")
    return mask, box


@dataclass(frozen=True, eq=False)
class Detection:
    image_id: object
    label: object
    confidence: float
    mask: np.ndarray = None
    box: tuple = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise InputError(
                f"confidence must be in [0, 1], got {self.confidence}"
            )
        mask, box = _check_geometry(self.mask, self.box, "detection")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "box", box)

    @property
    def area(self):
        if self.mask is not None:
            return int(self.mask.sum())
        return self.box[2] * self.box[3]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    image_id: object
    label: object
    mask: np.ndarray = None
    box: tuple = None

    def __post_init__(self):
        mask, box = _check_geometry(self.mask, self.box, "ground truth")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "box", box)

    @property
    def area(self):
        if self.mask is not None:
            return int(self.mask.sum())
        return self.box[2] * self.box[3]


def pair_iou(det, gt):
    if det.mask is not None and gt.mask is not None:
        return mask_iou(det.mask, gt.mask)
    if det.box is not None and gt.box is not None:
        return box_iou(det.box, gt.box)
    raise InputError("cannot compare a mask detection with a box ground truth")


@dataclass(frozen=True)
class MatchResult:
    """Per-detection (is_tp, gt_index or None, iou) in confidence order along
    with the order used, plus per-GT matched flags."""

    det_order: tuple
    det_flags: tuple
    gt_matched: tuple

    @property
    def tp(self):
        return sum(1 for is_tp, _, _ in self.det_flags if is_tp)

    @property
    def fp(self):
        return len(self.det_flags) - self.tp

    @property
    def fn(self):
        return sum(1 for m in self.gt_matched if not m)


def match_detections(dets, gts, iou_threshold):
    """Greedy same-class matching within one image.

    Detections are visited by descending confidence (stable in input order);
    each claims the unmatched same-class GT of highest IoU >= threshold,
    ties to the earliest GT.
    """
    ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(ids) > 1:
        raise InputError(f"match_detections got mixed image ids: {sorted(map(str, ids))}")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    matched = [False] * len(gts)
    flags = []
    for i in order:
        det = dets[i]
        best_iou = 0.0
        best_j = None
        for j, gt in enumerate(gts):
            if matched[j] or gt.label != det.label:
                continue
            iou = pair_iou(det, gt)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j is None:
            flags.append((False, None, 0.0))
        else:
            matched[best_j] = True
            flags.append((True, best_j, best_iou))
    return MatchResult(
        det_order=tuple(order), det_flags=tuple(flags), gt_matched=tuple(matched)
    )


def average_precision(matches, n_gt):
    """101-point interpolated AP from (confidence, is_tp) pairs.

    matches: per-detection (confidence, is_tp) for one class; they are ranked
    by descending confidence (stable, so caller order breaks ties). AP is the
    mean over recall levels {0, 0.01, ..., 1} of the best precision at any
    operating point whose recall reaches the level, 0 if none does.
    """
    if n_gt < 1:
        raise InputError(
            "average_precision needs n_gt >= 1; classes without ground "
            "truth are excluded from mAP"
        )
    ordered = sorted(matches, key=lambda m: -m[0])
    recalls = []
    precisions = []
    tp = 0
    fp = 0
    for _, is_tp in ordered:
        if is_tp:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (tp + fp))
    # best precision from each operating point onward (recall is
    # nondecreasing, so a suffix max answers "precision at recall >= r")
    n = len(precisions)
    suffix_best = [0.0] * n
    best = 0.0
    for i in range(n - 1, -1, -1):
        if precisions[i] > best:
            best = precisions[i]
        suffix_best[i] = best
    total = 0.0
    for level in range(101):
        r = level / 100
        idx = bisect.bisect_left(recalls, r)
        total += suffix_best[idx] if idx < n else 0.0
    return total / 101


def mean_ap(per_class_ap):
    """Unweighted mean AP over classes, iterated in sorted label order."""
    if not per_class_ap:
        raise InputError("mean_ap needs at least one class")
    total = 0.0
    for label in sorted(per_class_ap):
        total += per_class_ap[label]
    return total / len(per_class_ap)


@dataclass(frozen=True, eq=False)
class EvalReport:
    per_class: dict  # label -> {threshold: AP}
    per_threshold: dict  # threshold -> mAP
    ap50: float
    ap75: float
    ap50_95: float
    ap_small: object
    ap_medium: object
    ap_large: object
    precision: float
    recall: float
    f1: float

    def to_json_dict(self):
        """Interface formatting: values x100 at 3 decimals (None -> null)."""

        def fmt(v):
            return None if v is None else float(format(v * 100, ".3f"))

        return {
            "ap50": fmt(self.ap50),
            "ap75": fmt(self.ap75),
            "ap50_95": fmt(self.ap50_95),
            "ap_small": fmt(self.ap_small),
            "ap_medium": fmt(self.ap_medium),
            "ap_large": fmt(self.ap_large),
            "precision": fmt(self.precision),
            "recall": fmt(self.recall),
            "f1": fmt(self.f1),
            "per_threshold": {
                f"{t:.2f}": fmt(v) for t, v in self.per_threshold.items()
            },
            "per_class": {
                str(label): {f"{t:.2f}": fmt(v) for t, v in aps.items()}
                for label, aps in self.per_class.items()
            },
        }


def _area_bucket(area):
    if area < SMALL_MAX_AREA:
        return "small"
    if area <= MEDIUM_MAX_AREA:
        return "medium"
    return "large"


def _group_by_image(items):
    groups = {}
    for item in items:
        groups.setdefault(item.image_id, []).append(item)
    return groups


def _class_matches(dets_by_img, gts_by_img, image_ids, label, thr, bucket=None):
    """Canonically ordered (confidence, is_tp) list plus the GT count.

    With a bucket, ground truths outside it are dropped before matching and
    unmatched detections whose own area falls outside the bucket are ignored
    rather than counted as false positives.
    """
    pairs = []
    n_gt = 0
    for img in image_ids:
        dets = [d for d in dets_by_img.get(img, []) if d.label == label]
        gts = [g for g in gts_by_img.get(img, []) if g.label == label]
        if bucket is not None:
            gts = [g for g in gts if _area_bucket(g.area) == bucket]
        n_gt += len(gts)
        result = match_detections(dets, gts, thr)
        for pos, i in enumerate(result.det_order):
            is_tp, _, _ = result.det_flags[pos]
            det = dets[i]
            if bucket is not None and not is_tp and _area_bucket(det.area) != bucket:
                continue
            pairs.append((det.confidence, is_tp))
    return pairs, n_gt


def coco_suite(dets, gts):
    """Full evaluation report over a detection/ground-truth set.

    AP at IoU thresholds 0.50..0.95, their mean, scale-bucket APs (small
    < 32^2, medium 32^2..96^2, large > 96^2 by GT area), and micro P/R/F1
    at IoU 0.5 using every detection. Classes with no ground truth anywhere
    are excluded from averages; empty scale buckets report None.
    """
    dets = list(dets)
    gts = list(gts)
    dets_by_img = _group_by_image(dets)
    gts_by_img = _group_by_image(gts)
    image_ids = sorted(set(dets_by_img) | set(gts_by_img), key=str)
    classes = sorted({g.label for g in gts})

    per_class = {label: {} for label in classes}
    per_threshold = {}
    for thr in IOU_THRESHOLDS:
        for label in classes:
            pairs, n_gt = _class_matches(dets_by_img, gts_by_img, image_ids, label, thr)
            per_class[label][thr] = average_precision(pairs, n_gt)
        per_threshold[thr] = (
            mean_ap({lbl: per_class[lbl][thr] for lbl in classes}) if classes else 0.0
        )

    aps = [per_threshold[t] for t in IOU_THRESHOLDS]
    total = 0.0
    for v in aps:
        total += v
    ap50_95 = total / len(aps)

    bucket_values = {}
    for bucket in ("small", "medium", "large"):
        class_aps = {}
        for label in classes:
            ap_sum = 0.0
            usable = True
            for thr in IOU_THRESHOLDS:
                pairs, n_gt = _class_matches(
                    dets_by_img, gts_by_img, image_ids, label, thr, bucket=bucket
                )
                if n_gt == 0:
                    usable = False
                    break
                ap_sum += average_precision(pairs, n_gt)
            if usable:
                class_aps[label] = ap_sum / len(IOU_THRESHOLDS)
        bucket_values[bucket] = mean_ap(class_aps) if class_aps else None

    tp = fp = fn = 0
    for img in image_ids:
        labels_here = {d.label for d in dets_by_img.get(img, [])}
        labels_here |= {g.label for g in gts_by_img.get(img, [])}
        for label in sorted(labels_here, key=str):
            d_im = [d for d in dets_by_img.get(img, []) if d.label == label]
            g_im = [g for g in gts_by_img.get(img, []) if g.label == label]
            result = match_detections(d_im, g_im, 0.5)
            tp += result.tp
            fp += result.fp
            fn += result.fn
    precision, recall, f1, _ = prf_metrics(tp, fp, fn, 0)

    return EvalReport(
        per_class=per_class,
        per_threshold=per_threshold,
        ap50=per_threshold[IOU_THRESHOLDS[0]],
        ap75=per_threshold[IOU_THRESHOLDS[5]],
        ap50_95=ap50_95,
        ap_small=bucket_values["small"],
        ap_medium=bucket_values["medium"],
        ap_large=bucket_values["large"],
        precision=precision,
        recall=recall,
        f1=f1,
    )
