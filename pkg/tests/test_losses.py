import math

import numpy as np
import pytest

from vdkit._backend import kernels as _K
from vdkit.errors import CtcInfeasibleError, InputError
from vdkit.losses import (
    CtcProblem,
    FocalCtcConfig,
    LossWeights,
    bce_mask_grad,
    bce_mask_loss,
    collapse_path,
    composite_loss,
    consistency_penalty,
    cross_entropy_grad,
    cross_entropy_loss,
    ctc_brute_force,
    ctc_grad_log_probs,
    ctc_neg_log_likelihood,
    dice_grad,
    dice_loss,
    focal_ctc_grad,
    focal_ctc_loss,
    required_steps,
)
from vdkit.tensorops import finite_diff_check
from vdkit.vdc import default_compatibility, default_taxonomy

SEED = 20260813


def uniform_problem(t, a, target):
    lp = np.full((t, a + 1), math.log(1.0 / (a + 1)))
    return CtcProblem(lp, target)


def random_problem(rng, t, a, max_target=3):
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
# problem validation and helpers


def test_problem_rejects_bad_rows():
    lp = np.log(np.array([[0.6, 0.6]]))
    with pytest.raises(InputError, match="distribution"):
        CtcProblem(lp, (1,))


def test_problem_rejects_out_of_alphabet_target():
    with pytest.raises(InputError, match="alphabet"):
        uniform_problem(3, 2, (3,))


def test_collapse_path():
    assert collapse_path((1, 1, 0, 2)) == (1, 2)
    assert collapse_path((0, 0, 0)) == ()
    assert collapse_path((1, 0, 1)) == (1, 1)


def test_required_steps():
    assert required_steps(()) == 0
    assert required_steps((1, 2)) == 2
    assert required_steps((1, 1)) == 3
    assert required_steps((1, 1, 2, 2)) == 6


# ---------------------------------------------------------------------------
# ctc forward and its oracle


def test_ctc_three_alignment_hand_value():
    # T=2, uniform over {blank, a}: valid paths (a,-), (-,a), (a,a)
    p = uniform_problem(2, 1, (1,))
    want = -math.log(0.75)
    assert ctc_neg_log_likelihood(p) == pytest.approx(want, abs=1e-9)
    assert ctc_brute_force(p) == pytest.approx(want, abs=1e-12)


def test_ctc_empty_target_is_all_blank_path():
    rng = np.random.default_rng(SEED)
    p = random_problem(rng, 4, 2, max_target=0)
    want = -float(p.log_probs[:, 0].sum())
    assert ctc_neg_log_likelihood(p) == pytest.approx(want, abs=1e-12)


def test_ctc_single_path_mass():
    # T=1: the only path that collapses to "a" is (a,)
    lp = np.log(np.array([[0.2, 0.8]]))
    p = CtcProblem(lp, (1,))
    assert ctc_brute_force(p) == pytest.approx(-math.log(0.8), abs=1e-12)
    assert ctc_neg_log_likelihood(p) == pytest.approx(-math.log(0.8), abs=1e-12)


def test_ctc_infeasible_target():
    with pytest.raises(CtcInfeasibleError, match="steps"):
        ctc_neg_log_likelihood(uniform_problem(1, 1, (1, 1)))
    with pytest.raises(CtcInfeasibleError):
        ctc_brute_force(uniform_problem(2, 1, (1, 1, 1)))


def test_brute_force_size_refusal():
    with pytest.raises(InputError, match="refused"):
        ctc_brute_force(uniform_problem(11, 1, (1,)))


def test_ctc_matches_brute_force_random():
    rng = np.random.default_rng(SEED + 1)
    for _ in range(60):
        t = int(rng.integers(1, 7))
        a = int(rng.integers(1, 4))
        p = random_problem(rng, t, a)
        dp = ctc_neg_log_likelihood(p)
        bf = ctc_brute_force(p)
        assert abs(dp - bf) < 1e-10


def test_ctc_grad_finite_diff():
    rng = np.random.default_rng(SEED + 2)
    for _ in range(5):
        t = int(rng.integers(2, 7))
        a = int(rng.integers(1, 4))
        p = random_problem(rng, t, a, max_target=2)
        if not p.target:
            continue
        nll, grad = ctc_grad_log_probs(p)
        assert nll == pytest.approx(ctc_neg_log_likelihood(p), abs=1e-12)
        ext = p.extended_target()

        def f(lp):
            # the DP itself is defined for unnormalized rows, which keeps
            # the perturbed evaluations legal
            return _K.ctc_forward_nll(np.ascontiguousarray(lp), ext)

        assert finite_diff_check(f, p.log_probs, grad) < 1e-4


# ---------------------------------------------------------------------------
# focal ctc


def test_focal_gamma_zero_is_plain_ctc():
    rng = np.random.default_rng(SEED + 3)
    for _ in range(20):
        p = random_problem(rng, int(rng.integers(1, 6)), 2)
        loss, p_t = focal_ctc_loss(p, FocalCtcConfig(gamma=0.0))
        assert loss == ctc_neg_log_likelihood(p)  # bit-for-bit
        assert 0.0 < p_t <= 1.0


def test_focal_scaling_factor_hand_value():
    lp = np.log(np.array([[0.9, 0.1], [0.9, 0.1]]))
    p = CtcProblem(lp, (1,))
    loss, p_t = focal_ctc_loss(p, FocalCtcConfig(gamma=2.0))
    assert p_t == pytest.approx(0.9, abs=1e-12)
    nll = ctc_neg_log_likelihood(p)
    assert loss == pytest.approx(0.01 * nll, rel=1e-9)


def test_focal_uniform_example():
    p = uniform_problem(2, 1, (1,))
    cfg = FocalCtcConfig(gamma=1.5)
    loss, p_t = focal_ctc_loss(p, cfg)
    assert p_t == pytest.approx(0.5, abs=1e-12)
    assert loss == pytest.approx(0.5**1.5 * -math.log(0.75), abs=1e-9)


def test_focal_grad_scales_plain_grad():
    rng = np.random.default_rng(SEED + 4)
    p = random_problem(rng, 4, 2, max_target=2)
    nll, grad = ctc_grad_log_probs(p)
    loss, p_t, fgrad = focal_ctc_grad(p, FocalCtcConfig(gamma=2.0))
    factor = (1.0 - p_t) ** 2.0
    assert loss == pytest.approx(factor * nll, rel=1e-12)
    assert fgrad == pytest.approx(factor * grad, rel=1e-12)


def test_focal_config_validation():
    with pytest.raises(ValueError, match="gamma"):
        FocalCtcConfig(gamma=-0.5)


# ---------------------------------------------------------------------------
# mask losses


def test_bce_near_perfect_prediction():
    gt = np.array([[1.0, 0.0], [0.0, 1.0]])
    eps = 1e-9
    pred = np.where(gt > 0.5, 1.0 - eps, eps)
    assert bce_mask_loss(pred, gt) == pytest.approx(0.0, abs=1e-8)


def test_bce_half_everywhere_is_ln2():
    gt = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert bce_mask_loss(np.full((2, 2), 0.5), gt) == pytest.approx(math.log(2.0))


def test_bce_matches_pixel_oracle():
    rng = np.random.default_rng(SEED + 5)
    pred = rng.uniform(0.05, 0.95, size=(4, 4))
    gt = (rng.uniform(size=(4, 4)) > 0.5).astype(float)
    total = 0.0
    for i in range(4):
        for j in range(4):
            p = pred[i, j]
            total += -(gt[i, j] * math.log(p) + (1 - gt[i, j]) * math.log(1 - p))
    assert bce_mask_loss(pred, gt) == pytest.approx(total / 16, abs=1e-12)


def test_bce_grad_finite_diff():
    rng = np.random.default_rng(SEED + 6)
    pred = rng.uniform(0.1, 0.9, size=(3, 3))
    gt = (rng.uniform(size=(3, 3)) > 0.5).astype(float)
    err = finite_diff_check(
        lambda p: bce_mask_loss(p, gt), pred, bce_mask_grad(pred, gt)
    )
    assert err < 1e-4


def test_dice_identical_masks():
    m = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert dice_loss(m, m) == 0.0


def test_dice_disjoint_masks():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert dice_loss(a, b) == 1.0


def test_dice_half_overlap_hand_value():
    pred = np.array([[1.0, 0.0], [1.0, 0.0]])  # left half
    gt = np.array([[1.0, 1.0], [0.0, 0.0]])  # top half
    assert dice_loss(pred, gt) == pytest.approx(0.5)


def test_dice_empty_vs_empty_is_agreement():
    z = np.zeros((2, 2))
    assert dice_loss(z, z) == 0.0


def test_dice_symmetric_on_binary():
    rng = np.random.default_rng(SEED + 7)
    a = (rng.uniform(size=(5, 5)) > 0.5).astype(float)
    b = (rng.uniform(size=(5, 5)) > 0.5).astype(float)
    assert dice_loss(a, b) == pytest.approx(dice_loss(b, a), abs=1e-15)


def test_dice_grad_finite_diff():
    rng = np.random.default_rng(SEED + 8)
    pred = rng.uniform(0.1, 0.9, size=(3, 3))
    gt = (rng.uniform(size=(3, 3)) > 0.5).astype(float)
    err = finite_diff_check(
        lambda p: dice_loss(p, gt), pred, dice_grad(pred, gt)
    )
    assert err < 1e-4


def test_mask_loss_shape_mismatch():
    with pytest.raises(ValueError, match="shapes"):
        bce_mask_loss(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="shapes"):
        dice_loss(np.zeros((2, 2)), np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# cross entropy


def test_cross_entropy_certain_prediction():
    probs = np.zeros(5)
    probs[2] = 1.0
    assert cross_entropy_loss(probs, 2) == 0.0


def test_cross_entropy_uniform_26():
    probs = np.full(26, 1 / 26)
    assert cross_entropy_loss(probs, 0) == pytest.approx(math.log(26.0))


def test_cross_entropy_matches_oracle_and_accepts_one_hot():
    rng = np.random.default_rng(SEED + 9)
    raw = rng.uniform(0.1, 1.0, size=8)
    probs = raw / raw.sum()
    onehot = np.zeros(8)
    onehot[3] = 1.0
    want = -math.log(probs[3])
    assert cross_entropy_loss(probs, 3) == pytest.approx(want, abs=1e-12)
    assert cross_entropy_loss(probs, onehot) == pytest.approx(want, abs=1e-12)


def test_cross_entropy_invalid_target():
    probs = np.full(4, 0.25)
    with pytest.raises(InputError, match="outside"):
        cross_entropy_loss(probs, 7)


def test_cross_entropy_grad_finite_diff():
    rng = np.random.default_rng(SEED + 10)
    raw = rng.uniform(0.2, 1.0, size=6)
    probs = raw / raw.sum()
    grad = cross_entropy_grad(probs, 2)

    def f(p):
        # bypass the sum-to-1 gate: the loss value only reads p[target]
        return -math.log(max(float(p[2]), 1e-12))

    assert finite_diff_check(f, probs, grad) < 1e-4


# ---------------------------------------------------------------------------
# consistency penalty and composites


def test_consistency_penalty_values():
    tax = default_taxonomy()
    compat = default_compatibility(tax)
    assert consistency_penalty([("frontbumper", "dent")], compat, 0.5) == 0.0
    bad = [("frontwindshield", "dent")] * 3
    assert consistency_penalty(bad, compat, 0.5) == pytest.approx(1.5)


def test_consistency_penalty_unknown_label():
    compat = default_compatibility()
    with pytest.raises(InputError, match="unknown"):
        consistency_penalty([("warpdrive", "dent")], compat, 1.0)


def test_composite_mars4_stock_weights():
    terms = {"detect": 1.0, "coarse": 1.0, "refine": 1.0, "inc": 1.0}
    total = composite_loss(terms, "mars4", LossWeights.mars4())
    assert total == 0.75 + 0.75 + 0.8 + 0.5
    assert total == 2.8


def test_composite_zero_weights():
    terms = {"mask": 3.0, "damage": 1.0, "part": 2.0, "fake": 0.5}
    w = LossWeights({"mask": 0.0, "damage": 0.0, "part": 0.0, "fake": 0.0})
    assert composite_loss(terms, "albert4", w) == 0.0


def test_composite_linearity():
    rng = np.random.default_rng(SEED + 11)
    names = ("mask", "dice", "part", "damage", "cons", "poly")
    w = LossWeights({n: float(rng.uniform(0.1, 2.0)) for n in names})
    base = {n: float(rng.uniform(0.0, 3.0)) for n in names}
    total = composite_loss(base, "appendix6", w)
    for n in names:
        bumped = dict(base)
        bumped[n] = base[n] * 2.0
        delta = composite_loss(bumped, "appendix6", w) - total
        assert delta == pytest.approx(w.get(n) * base[n], abs=1e-12)


def test_composite_missing_term_and_unknown_scheme():
    with pytest.raises(ValueError, match="missing terms"):
        composite_loss({"detect": 1.0}, "mars4")
    with pytest.raises(ValueError, match="unknown scheme"):
        composite_loss({}, "bogus")


def test_loss_weights_validation_and_default():
    with pytest.raises(ValueError, match=">= 0"):
        LossWeights({"mask": -0.1})
    assert LossWeights().get("anything") == 1.0
