import numpy as np
import pytest

import reference_eval as ref
from vdkit.errors import InputError
from vdkit.metrics import (
    IOU_THRESHOLDS,
    Detection,
    GroundTruth,
    average_precision,
    box_iou,
    coco_suite,
    match_detections,
    mean_ap,
    pair_iou,
    prf_metrics,
)

SEED = 20260813


def det(img, label, conf, box=None, mask=None):
    return Detection(image_id=img, label=label, confidence=conf, box=box, mask=mask)


def gt(img, label, box=None, mask=None):
    return GroundTruth(image_id=img, label=label, box=box, mask=mask)


# ---------------------------------------------------------------------------
# prf and iou primitives


def test_prf_worked_numbers():
    precision, recall, f1, _ = prf_metrics(8, 2, 3)
    assert abs(precision - 0.80) < 1e-9
    assert abs(recall - 8 / 11) < 1e-9
    assert abs(f1 - 2 * 0.8 * (8 / 11) / (0.8 + 8 / 11)) < 1e-9
    assert abs(f1 - 0.7619047619047619) < 1e-9


def test_prf_all_correct():
    assert prf_metrics(5, 0, 0) == (1.0, 1.0, 1.0, 1.0)


def test_prf_vacuous_conventions():
    precision, recall, f1, accuracy = prf_metrics(0, 0, 0, tn=10)
    assert precision == 1.0 and recall == 1.0
    assert accuracy == 1.0
    assert f1 == 1.0


def test_prf_rejects_negative():
    with pytest.raises(ValueError, match="fp"):
        prf_metrics(1, -1, 0)


def test_box_iou_values():
    assert box_iou((0, 0, 10, 10), (0, 0, 10, 8)) == pytest.approx(0.8)
    assert box_iou((0, 0, 2, 2), (5, 5, 2, 2)) == 0.0
    assert box_iou((0, 0, 3, 3), (0, 0, 3, 3)) == 1.0


def test_detection_validation():
    with pytest.raises(InputError, match="confidence"):
        det("a", "c", 1.5, box=(0, 0, 1, 1))
    with pytest.raises(InputError, match="exactly one"):
        det("a", "c", 0.5)
    with pytest.raises(InputError, match="exactly one"):
        det("a", "c", 0.5, box=(0, 0, 1, 1), mask=np.ones((2, 2), bool))


def test_pair_iou_type_mismatch():
    d = det("a", "c", 0.5, mask=np.ones((2, 2), bool))
    g = gt("a", "c", box=(0, 0, 2, 2))
    with pytest.raises(InputError, match="mask detection with a box"):
        pair_iou(d, g)


# ---------------------------------------------------------------------------
# matching


def test_match_single_overlap_thresholds():
    d = [det("img", "dent", 0.9, box=(0, 0, 10, 8))]
    g = [gt("img", "dent", box=(0, 0, 10, 10))]  # IoU 0.8
    for thr, want_tp in ((0.5, 1), (0.75, 1), (0.85, 0)):
        result = match_detections(d, g, thr)
        assert result.tp == want_tp
        assert result.fp == 1 - want_tp
        assert result.fn == 1 - want_tp


def test_match_two_dets_one_gt():
    box = (0, 0, 4, 4)
    d = [
        det("img", "dent", 0.7, box=box),
        det("img", "dent", 0.9, box=box),
    ]
    g = [gt("img", "dent", box=box)]
    result = match_detections(d, g, 0.5)
    # confidence order visits index 1 first; it takes the GT
    assert result.det_order == (1, 0)
    assert result.det_flags[0][0] is True
    assert result.det_flags[1][0] is False
    assert (result.tp, result.fp, result.fn) == (1, 1, 0)


def test_match_tie_takes_earliest_gt():
    d = [det("img", "dent", 0.9, box=(0, 0, 2, 2))]
    g = [
        gt("img", "dent", box=(0, 0, 2, 1)),
        gt("img", "dent", box=(0, 1, 2, 1)),
    ]  # both IoU 0.5 with the detection
    result = match_detections(d, g, 0.4)
    assert result.det_flags[0][:2] == (True, 0)


def test_match_respects_labels_and_image_ids():
    d = [det("img", "dent", 0.9, box=(0, 0, 2, 2))]
    g = [gt("img", "scrape", box=(0, 0, 2, 2))]
    result = match_detections(d, g, 0.5)
    assert result.tp == 0 and result.fn == 1
    with pytest.raises(InputError, match="mixed image ids"):
        match_detections(d, [gt("other", "dent", box=(0, 0, 2, 2))], 0.5)


# ---------------------------------------------------------------------------
# average precision


def test_ap_single_tp():
    assert average_precision([(0.9, True)], 1) == 1.0


def test_ap_tp_then_fp():
    assert average_precision([(0.9, True), (0.8, False)], 1) == 1.0


def test_ap_fp_then_tp():
    # precision is 0.5 once recall reaches 1; every level interpolates to 0.5
    assert average_precision([(0.9, False), (0.8, True)], 1) == pytest.approx(0.5)


def test_ap_no_detections_is_zero():
    assert average_precision([], 3) == 0.0


def test_ap_requires_ground_truth():
    with pytest.raises(InputError, match="n_gt"):
        average_precision([(0.9, True)], 0)


def test_ap_monotone_transform_invariant():
    rng = np.random.default_rng(SEED)
    for _ in range(10):
        n = int(rng.integers(1, 8))
        confs = rng.uniform(0.05, 0.95, size=n)
        flags = rng.uniform(size=n) > 0.5
        n_gt = max(1, int(flags.sum()) + int(rng.integers(0, 3)))
        pairs = list(zip(confs.tolist(), flags.tolist()))
        squared = [(c * c, f) for c, f in pairs]  # strictly monotone remap
        assert average_precision(pairs, n_gt) == average_precision(squared, n_gt)


def test_mean_ap_worked_number():
    got = mean_ap({"a": 0.27, "b": 0.28, "c": 0.55})
    assert abs(got - 1.1 / 3) < 1e-9
    assert abs(got - 0.3666666666666667) < 1e-9


def test_mean_ap_single_and_empty():
    assert mean_ap({"only": 0.42}) == 0.42
    with pytest.raises(InputError, match="at least one"):
        mean_ap({})


# ---------------------------------------------------------------------------
# full suite


def test_suite_perfect_detections():
    m1 = np.zeros((20, 20), dtype=bool)
    m1[2:8, 2:8] = True
    m2 = np.zeros((20, 20), dtype=bool)
    m2[10:18, 10:19] = True
    dets = [
        det("i1", "dent", 1.0, mask=m1),
        det("i1", "scrape", 1.0, mask=m2),
        det("i2", "dent", 1.0, mask=m2),
    ]
    gts = [
        gt("i1", "dent", mask=m1),
        gt("i1", "scrape", mask=m2),
        gt("i2", "dent", mask=m2),
    ]
    report = coco_suite(dets, gts)
    assert report.ap50 == 1.0
    assert report.ap75 == 1.0
    assert report.ap50_95 == 1.0
    assert report.ap_small == 1.0  # all GTs are < 32^2 px
    assert report.ap_medium is None and report.ap_large is None
    assert report.precision == 1.0 and report.recall == 1.0 and report.f1 == 1.0
    for label in ("dent", "scrape"):
        for thr in IOU_THRESHOLDS:
            assert report.per_class[label][thr] == 1.0


def test_suite_threshold_bracket():
    # IoU exactly 0.52: a hit at 0.50, a miss at every higher threshold
    dets = [det("img", "dent", 1.0, box=(0, 0, 100, 52))]
    gts = [gt("img", "dent", box=(0, 0, 100, 100))]
    report = coco_suite(dets, gts)
    assert report.ap50 == 1.0
    for thr in IOU_THRESHOLDS[1:]:
        assert report.per_threshold[thr] == 0.0
    assert report.ap50_95 == pytest.approx(0.1)
    assert report.ap50_95 == 0.1


def test_suite_ap_nonincreasing_in_threshold():
    rng = np.random.default_rng(SEED + 1)
    dets, gts = _random_box_dataset(rng)
    report = coco_suite(dets, gts)
    values = [report.per_threshold[t] for t in IOU_THRESHOLDS]
    for a, b in zip(values, values[1:]):
        assert b <= a + 1e-12


def test_suite_totals_per_class_threshold():
    rng = np.random.default_rng(SEED + 2)
    dets, gts = _random_box_dataset(rng)
    images = sorted({d.image_id for d in dets} | {g.image_id for g in gts})
    labels = sorted({g.label for g in gts} | {d.label for d in dets})
    for thr in IOU_THRESHOLDS:
        for label in labels:
            for img in images:
                d_im = [d for d in dets if d.image_id == img and d.label == label]
                g_im = [g for g in gts if g.image_id == img and g.label == label]
                result = match_detections(d_im, g_im, thr)
                assert result.tp + result.fp == len(d_im)
                assert result.tp + result.fn == len(g_im)


def test_suite_bucket_semantics():
    small = (0, 0, 10, 10)  # 100 px
    large = (0, 0, 120, 120)  # 14400 px
    dets = [
        det("i1", "dent", 0.9, box=small),
        det("i1", "dent", 0.8, box=large),
    ]
    gts = [gt("i1", "dent", box=small), gt("i1", "dent", box=large)]
    report = coco_suite(dets, gts)
    assert report.ap_small == 1.0
    assert report.ap_large == 1.0
    assert report.ap_medium is None
    # the large detection is ignored (not an FP) inside the small bucket
    assert report.ap50 == 1.0


def test_report_json_formatting():
    dets = [det("img", "dent", 1.0, box=(0, 0, 100, 52))]
    gts = [gt("img", "dent", box=(0, 0, 100, 100))]
    d = coco_suite(dets, gts).to_json_dict()
    assert d["ap50"] == 100.0
    assert d["ap50_95"] == 10.0
    assert d["ap_medium"] is None
    assert set(d["per_threshold"]) == {f"{t:.2f}" for t in IOU_THRESHOLDS}
    assert d["per_class"]["dent"]["0.50"] == 100.0


# ---------------------------------------------------------------------------
# reference-evaluator equality


def _random_box_dataset(rng):
    n_images = int(rng.integers(1, 6))
    labels = ["dent", "scrape", "crack"][: int(rng.integers(1, 4))]
    dets = []
    gts = []
    for i in range(n_images):
        img = f"img{i}"
        for _ in range(int(rng.integers(0, 4))):
            side = float(rng.integers(5, 130))
            gts.append(
                gt(
                    img,
                    labels[int(rng.integers(0, len(labels)))],
                    box=(float(rng.integers(0, 40)), float(rng.integers(0, 40)), side, side),
                )
            )
        for _ in range(int(rng.integers(0, 7))):
            side = float(rng.integers(5, 130))
            dets.append(
                det(
                    img,
                    labels[int(rng.integers(0, len(labels)))],
                    float(rng.uniform(0.05, 1.0)),
                    box=(float(rng.integers(0, 40)), float(rng.integers(0, 40)), side, side),
                )
            )
    if not gts:
        gts.append(gt("img0", labels[0], box=(0.0, 0.0, 10.0, 10.0)))
    return dets, gts


def _random_mask_dataset(rng):
    n_images = int(rng.integers(1, 4))
    labels = ["dent", "scrape"]
    dets = []
    gts = []
    for i in range(n_images):
        img = f"img{i}"
        for _ in range(int(rng.integers(1, 3))):
            m = np.zeros((24, 24), dtype=bool)
            x, y = rng.integers(0, 12, size=2)
            w, h = rng.integers(4, 12, size=2)
            m[y : y + h, x : x + w] = True
            gts.append(gt(img, labels[int(rng.integers(0, 2))], mask=m))
        for _ in range(int(rng.integers(0, 4))):
            m = np.zeros((24, 24), dtype=bool)
            x, y = rng.integers(0, 12, size=2)
            w, h = rng.integers(4, 12, size=2)
            m[y : y + h, x : x + w] = True
            dets.append(
                det(img, labels[int(rng.integers(0, 2))], float(rng.uniform(0.1, 1.0)), mask=m)
            )
    return dets, gts


def _assert_reports_equal(report, want):
    got = {
        "per_class": report.per_class,
        "per_threshold": report.per_threshold,
        "ap50": report.ap50,
        "ap75": report.ap75,
        "ap50_95": report.ap50_95,
        "ap_small": report.ap_small,
        "ap_medium": report.ap_medium,
        "ap_large": report.ap_large,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
    }
    assert got == want  # exact float equality, not approx


def test_suite_matches_reference_evaluator_boxes():
    rng = np.random.default_rng(SEED + 3)
    for _ in range(15):
        dets, gts = _random_box_dataset(rng)
        _assert_reports_equal(coco_suite(dets, gts), ref.evaluate(dets, gts))


def test_suite_matches_reference_evaluator_masks():
    rng = np.random.default_rng(SEED + 4)
    for _ in range(10):
        dets, gts = _random_mask_dataset(rng)
        _assert_reports_equal(coco_suite(dets, gts), ref.evaluate(dets, gts))
