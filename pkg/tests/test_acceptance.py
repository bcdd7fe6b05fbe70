"""Acceptance gate: one test per headline requirement.

Each test enforces its stated tolerance and, where given, its runtime
budget, then prints a single [PASS] line (visible with -s). Run with
`pytest tests/test_acceptance.py -v` for one line per criterion.
"""

import itertools
import math
import time

import numpy as np
import pytest

import reference_eval as ref
from vdkit._backend import kernels as _K
from vdkit.blocks import (
    AttentionWeights,
    FfnWeights,
    GruWeights,
    MaskHeadWeights,
    attention_input_grad,
    dynamic_mask_head,
    ffn_block,
    ffn_input_grad,
    gru_cell,
    gru_cell_grads,
    mask_head_query_grad,
    multi_head_attention,
)
from vdkit.decode import BeamConfig, CrfModel, crf_brute_force, crf_viterbi, ctc_beam_search
from vdkit.demo import EXPECTED_CODES, EXPECTED_POLYGONS, build_demo_scene, demo_image
from vdkit.geometry import (
    Polygon,
    PolygonConfig,
    area_consistency,
    mask_iou,
    polygon_area,
    rdp_simplify,
    trace_boundary,
)
from vdkit.losses import (
    CtcProblem,
    FocalCtcConfig,
    LossWeights,
    bce_mask_grad,
    bce_mask_loss,
    collapse_path,
    composite_loss,
    cross_entropy_grad,
    ctc_brute_force,
    ctc_grad_log_probs,
    ctc_neg_log_likelihood,
    dice_grad,
    dice_loss,
    focal_ctc_grad,
    focal_ctc_loss,
    required_steps,
)
from vdkit.metrics import Detection, GroundTruth, coco_suite, mean_ap, prf_metrics
from vdkit.pipeline import load_pipeline_config, run_pipeline
from vdkit.quadtree import QuadtreeConfig, decompose, decompose_info
from vdkit.tensorops import finite_diff_check

SEED = 20260813


def _pass(line):
    print(f"[PASS] {line}")


def _random_problem(rng, t, a, max_target=3):
    logits = rng.standard_normal((t, a + 1)) * 2.0
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    while True:
        tgt_len = int(rng.integers(0, max_target + 1))
        target = tuple(int(v) for v in rng.integers(1, a + 1, size=tgt_len))
        if required_steps(target) <= t:
            return CtcProblem(np.log(probs), target)


# ---------------------------------------------------------------------------
# criterion 1: worked-example goldens (< 1 s)


def test_worked_example_goldens():
    start = time.monotonic()
    precision, recall, f1, _ = prf_metrics(8, 2, 3)
    assert abs(precision - 0.800000000) < 1e-9
    assert abs(recall - 0.727272727) < 1e-9
    assert abs(f1 - 0.761904762) < 1e-9

    a = np.zeros((10, 10), dtype=bool)
    a[:, :] = True
    b = np.zeros((10, 10), dtype=bool)
    b[:8, :] = True  # intersection 80, union 100
    assert mask_iou(a, b) == pytest.approx(0.80, abs=1e-12)

    assert abs(mean_ap({"a": 0.27, "b": 0.28, "c": 0.55}) - 0.366666667) < 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 1.0
    _pass(f"worked-example goldens within 1e-9 ({elapsed:.3f} s)")


# ---------------------------------------------------------------------------
# criterion 2: CTC oracle equivalence (< 30 s)


def test_ctc_forward_matches_brute_force_500():
    start = time.monotonic()
    rng = np.random.default_rng(SEED)
    checked = 0
    worst = 0.0
    while checked < 500:
        t = int(rng.integers(1, 9))
        a = int(rng.integers(1, 4))
        p = _random_problem(rng, t, a)
        got = ctc_neg_log_likelihood(p)
        want = ctc_brute_force(p)
        worst = max(worst, abs(got - want))
        assert abs(got - want) < 1e-10
        checked += 1
    hand = CtcProblem(np.full((2, 2), math.log(0.5)), (1,))
    assert abs(ctc_neg_log_likelihood(hand) - (-math.log(0.75))) < 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    _pass(
        f"CTC DP == brute force on 500 instances, worst gap {worst:.2e}; "
        f"-ln(0.75) reproduced ({elapsed:.1f} s)"
    )


# ---------------------------------------------------------------------------
# criterion 3: focal reduction at gamma = 0


def test_focal_gamma_zero_bit_equal_100():
    rng = np.random.default_rng(SEED + 1)
    zero = FocalCtcConfig(gamma=0.0)
    for _ in range(100):
        p = _random_problem(rng, int(rng.integers(1, 8)), int(rng.integers(1, 4)))
        loss, _ = focal_ctc_loss(p, zero)
        assert loss == ctc_neg_log_likelihood(p)  # bit-equal, no tolerance
    _pass("focal CTC at gamma=0 bit-equal to plain CTC on 100 instances")


# ---------------------------------------------------------------------------
# criterion 4: gradient suite (< 2 min)


def test_gradient_suite():
    start = time.monotonic()
    rng = np.random.default_rng(SEED + 2)
    tol = 1e-4

    for _ in range(20):  # BCE
        pred = rng.uniform(0.05, 0.95, size=(3, 4))
        gt = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
        assert finite_diff_check(
            lambda x: bce_mask_loss(x, gt), pred, bce_mask_grad(pred, gt)
        ) < tol

    for _ in range(20):  # dice
        pred = rng.uniform(0.05, 0.95, size=(3, 4))
        gt = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
        gt.flat[0] = 1.0  # keep the union away from zero
        assert finite_diff_check(
            lambda x: dice_loss(x, gt), pred, dice_grad(pred, gt)
        ) < tol

    for _ in range(20):  # cross-entropy
        raw = rng.uniform(0.2, 1.0, size=6)
        probs = raw / raw.sum()
        idx = int(rng.integers(0, 6))

        def f_ce(x, idx=idx):
            # only x[idx] enters the loss; keeps perturbed rows legal
            return -math.log(max(float(x[idx]), 1e-12))

        assert finite_diff_check(f_ce, probs, cross_entropy_grad(probs, idx)) < tol

    checked = 0
    while checked < 20:  # CTC with the focal factor held constant
        p = _random_problem(rng, int(rng.integers(2, 7)), int(rng.integers(1, 4)), 2)
        if not p.target:
            continue
        gamma = float(rng.uniform(0.0, 3.0))
        loss, p_t, grad = focal_ctc_grad(p, FocalCtcConfig(gamma=gamma))
        factor = (1.0 - p_t) ** gamma
        nll, plain = ctc_grad_log_probs(p)
        assert np.array_equal(grad, factor * plain)
        assert loss == factor * nll
        ext = p.extended_target()

        def f_ctc(lp, factor=factor, ext=ext):
            # frozen focal factor times the raw DP (legal for unnormalized rows)
            return factor * _K.ctc_forward_nll(np.ascontiguousarray(lp), ext)

        assert finite_diff_check(f_ctc, p.log_probs, grad) < tol
        checked += 1

    for _ in range(20):  # attention block
        w = AttentionWeights(
            wq=rng.standard_normal((2, 3, 2)),
            wk=rng.standard_normal((2, 3, 2)),
            wv=rng.standard_normal((2, 3, 2)),
            wo=rng.standard_normal((4, 3)),
        )
        z0 = rng.standard_normal((3, 3))
        up = rng.standard_normal((3, 3))

        def f_attn(z, w=w, up=up):
            return float((multi_head_attention(z, w) * up).sum())

        assert finite_diff_check(f_attn, z0, attention_input_grad(z0, w, up)) < tol

    for _ in range(20):  # GRU cell, both input and state gradients
        w = GruWeights(
            wz=rng.standard_normal((3, 2)),
            uz=rng.standard_normal((2, 2)),
            bz=rng.standard_normal(2),
            wr=rng.standard_normal((3, 2)),
            ur=rng.standard_normal((2, 2)),
            br=rng.standard_normal(2),
            wh=rng.standard_normal((3, 2)),
            uh=rng.standard_normal((2, 2)),
            bh=rng.standard_normal(2),
        )
        x0 = rng.standard_normal(3)
        h0 = rng.standard_normal(2)
        up = rng.standard_normal(2)
        dx, dh = gru_cell_grads(x0, h0, w, up)

        def fx(x, h0=h0, w=w, up=up):
            return float((gru_cell(x, h0, w) * up).sum())

        def fh(h, x0=x0, w=w, up=up):
            return float((gru_cell(x0, h, w) * up).sum())

        assert finite_diff_check(fx, x0, dx) < tol
        assert finite_diff_check(fh, h0, dh) < tol

    for _ in range(20):  # dynamic mask head
        w = MaskHeadWeights(
            rng.standard_normal((3, 2)),
            rng.standard_normal(2),
            rng.standard_normal(3),
            float(rng.standard_normal()),
        )
        feat = rng.standard_normal((4, 4, 2))
        q0 = rng.standard_normal(3)
        up = rng.standard_normal((4, 4))

        def f_mask(q, feat=feat, w=w, up=up):
            return float((dynamic_mask_head(q, feat, w) * up).sum())

        assert finite_diff_check(f_mask, q0, mask_head_query_grad(q0, feat, w, up)) < tol

    elapsed = time.monotonic() - start
    assert elapsed < 120.0
    _pass(
        "gradients of BCE, dice, cross-entropy, focal CTC, attention, GRU, "
        f"mask head < 1e-4 rel error, 20 instances each ({elapsed:.1f} s)"
    )


# ---------------------------------------------------------------------------
# criterion 5: quadtree invariants on 200 random images


def test_quadtree_invariants_200():
    rng = np.random.default_rng(SEED + 3)
    for _ in range(200):
        h = int(rng.integers(1, 65))
        w = int(rng.integers(1, 65))
        feat = rng.standard_normal((h, w, int(rng.integers(1, 4))))
        cfg = QuadtreeConfig(
            tau=float(rng.uniform(0.0, 2.0)),
            max_depth=int(rng.integers(0, 7)),
            min_side=int(rng.integers(1, 4)),
        )
        cover = np.zeros((h, w), dtype=np.int64)
        for r, depth, var in decompose_info(feat, cfg):
            cover[r.y0 : r.y0 + r.height, r.x0 : r.x0 + r.width] += 1
            assert (
                var < cfg.tau
                or depth == cfg.max_depth
                or min(r.width, r.height) <= cfg.min_side
            )
        assert np.all(cover == 1)  # pixel-exhaustive disjoint tiling
    rng2 = np.random.default_rng(SEED + 4)
    for _ in range(20):
        feat = rng2.standard_normal((16, 16, 2))
        counts = [
            len(decompose(feat, QuadtreeConfig(tau=t, max_depth=5)))
            for t in (0.0, 0.05, 0.2, 0.8, 2.0)
        ]
        assert counts == sorted(counts, reverse=True)
    _pass("quadtree tiling, stopping condition, tau monotonicity on 200 images")


# ---------------------------------------------------------------------------
# criterion 6: decoder oracles


def _map_labeling_by_enumeration(lp):
    """Exact MAP collapse: total path mass per labeling, then argmax."""
    t, a1 = lp.shape
    rows = lp.tolist()
    masses = {}
    for path in itertools.product(range(a1), repeat=t):
        s = sum(rows[i][k] for i, k in enumerate(path))
        key = collapse_path(path)
        masses[key] = np.logaddexp(masses.get(key, -np.inf), s)
    best = max(masses.items(), key=lambda kv: (kv[1], kv[0]))
    return best[0], float(best[1])


def test_decoder_oracles():
    rng = np.random.default_rng(SEED + 5)
    for _ in range(200):
        t = int(rng.integers(1, 7))
        n_labels = int(rng.integers(1, 5))
        m = CrfModel(
            unary=rng.standard_normal((t, n_labels)),
            pairwise=rng.standard_normal((n_labels, n_labels)),
        )
        got_labels, got_score = crf_viterbi(m)
        want_labels, want_score = crf_brute_force(m)
        assert tuple(got_labels) == tuple(want_labels)
        assert got_score == want_score  # same chain_score arithmetic

    rng = np.random.default_rng(SEED + 6)
    for _ in range(100):
        t = int(rng.integers(1, 4))
        a = int(rng.integers(1, 3))
        logits = rng.standard_normal((t, a + 1)) * 2.0
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        lp = np.log(probs)
        width = (a + 1) ** t  # exhaustive: beam keeps every prefix
        ranked = ctc_beam_search(lp, BeamConfig(beam_width=width))
        want_labels, want_mass = _map_labeling_by_enumeration(lp)
        assert ranked[0][0] == want_labels
        assert ranked[0][1] == pytest.approx(want_mass, abs=1e-9)
    _pass("Viterbi == brute force on 200 chains; exhaustive beam == MAP on 100")


# ---------------------------------------------------------------------------
# criterion 7: geometry guarantees


def _fat_blob(rng, size=64):
    mask = np.zeros((size, size), dtype=bool)
    w1 = int(rng.integers(28, 45))
    h1 = int(rng.integers(28, 45))
    x1 = int(rng.integers(1, size - w1 - 1))
    y1 = int(rng.integers(1, size - h1 - 1))
    mask[y1 : y1 + h1, x1 : x1 + w1] = True
    w2 = int(rng.integers(24, 36))
    h2 = int(rng.integers(24, 36))
    x2 = min(max(1, x1 + int(rng.integers(-6, 7))), size - w2 - 1)
    y2 = min(max(1, y1 + int(rng.integers(-6, 7))), size - h2 - 1)
    mask[y2 : y2 + h2, x2 : x2 + w2] = True
    return mask


def _chain_distance(point, vertices):
    best = math.inf
    n = len(vertices)
    px, py = point
    for i in range(n):
        ax, ay = vertices[i]
        bx, by = vertices[(i + 1) % n]
        vx, vy = bx - ax, by - ay
        denom = vx * vx + vy * vy
        s = 0.0 if denom == 0.0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / denom))
        best = min(best, math.hypot(px - (ax + s * vx), py - (ay + s * vy)))
    return best


def test_geometry_guarantees():
    assert polygon_area(Polygon(((0.0, 0.0), (4.0, 0.0), (0.0, 3.0)))) == 6.0
    assert (
        polygon_area(Polygon(((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))) == 1.0
    )

    rng = np.random.default_rng(SEED + 7)
    cfg = PolygonConfig(rdp_epsilon=1.0, area_tolerance=0.1)
    for _ in range(100):
        fg = _fat_blob(rng)
        assert int(fg.sum()) >= 100
        boundary = trace_boundary(fg.astype(float))
        poly = rdp_simplify(boundary, cfg)
        # dropped boundary points stay within epsilon of the kept chain
        for p in boundary:
            assert _chain_distance(p, poly.vertices) <= cfg.rdp_epsilon + 1e-9
        ok, rel = area_consistency(fg, poly, cfg)
        assert ok and rel < 0.10
    _pass(
        "RDP distance guarantee + polygon/raster area within 10% on 100 blobs; "
        "shoelace goldens exact"
    )


# ---------------------------------------------------------------------------
# criterion 8: evaluator equals the independent reference


def _random_micro_dataset(rng, use_masks):
    labels = ["dent", "scrape", "crack"][: int(rng.integers(1, 4))]
    dets, gts = [], []
    for i in range(int(rng.integers(1, 6))):
        img = f"img{i}"

        def geo():
            if use_masks:
                m = np.zeros((24, 24), dtype=bool)
                x, y = rng.integers(0, 12, size=2)
                w, h = rng.integers(4, 12, size=2)
                m[y : y + h, x : x + w] = True
                return {"mask": m}
            side = float(rng.integers(5, 130))
            return {
                "box": (
                    float(rng.integers(0, 40)),
                    float(rng.integers(0, 40)),
                    side,
                    side,
                )
            }

        for _ in range(int(rng.integers(0, 4))):
            gts.append(
                GroundTruth(
                    image_id=img,
                    label=labels[int(rng.integers(0, len(labels)))],
                    **geo(),
                )
            )
        for _ in range(int(rng.integers(0, 7))):
            dets.append(
                Detection(
                    image_id=img,
                    label=labels[int(rng.integers(0, len(labels)))],
                    confidence=float(rng.uniform(0.05, 1.0)),
                    **geo(),
                )
            )
    if not gts:
        if use_masks:
            m = np.zeros((24, 24), dtype=bool)
            m[2:8, 2:8] = True
            gts.append(GroundTruth(image_id="img0", label=labels[0], mask=m))
        else:
            gts.append(
                GroundTruth(image_id="img0", label=labels[0], box=(0, 0, 10, 10))
            )
    return dets, gts


def test_evaluator_matches_reference_50():
    rng = np.random.default_rng(SEED + 8)
    for k in range(50):
        dets, gts = _random_micro_dataset(rng, use_masks=(k % 2 == 1))
        report = coco_suite(dets, gts)
        want = ref.evaluate(dets, gts)
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
        assert got == want  # exact equality, every field
    _pass("coco_suite == independent reference on 50 micro-datasets, exactly")


# ---------------------------------------------------------------------------
# criterion 9: end-to-end determinism on the bundled scene


def test_end_to_end_determinism(tmp_path):
    cfg = load_pipeline_config(build_demo_scene(str(tmp_path / "scene")))
    img = demo_image()
    runs = [run_pipeline(img, cfg) for _ in range(3)]
    names = set(runs[0].artifacts)
    for other in runs[1:]:
        assert set(other.artifacts) == names
        for name in names:
            assert other.artifacts[name] == runs[0].artifacts[name]

    result = runs[0]
    assert len(result.records) == 2
    assert tuple(r.code for r in result.records) == EXPECTED_CODES
    for inst, want in zip(result.instances, EXPECTED_POLYGONS):
        assert len(inst.polygon.vertices) == 4
        for (gx, gy), (wx, wy) in zip(inst.polygon.vertices, want):
            assert abs(gx - wx) <= 1.0 and abs(gy - wy) <= 1.0
    _pass(
        "3 byte-identical runs; 2 records with 4-vertex polygons within "
        "1 px of ground truth"
    )


# ---------------------------------------------------------------------------
# criterion 10: composite-loss arithmetic


def test_composite_loss_stock_coefficients():
    terms = {"detect": 1.0, "coarse": 1.0, "refine": 1.0, "inc": 1.0}
    total = composite_loss(terms, "mars4", LossWeights.mars4())
    assert total == 2.8  # exact: 0.75 + 0.75 + 0.8 + 0.5
    _pass("composite loss with stock mars4 coefficients and unit terms == 2.8")
