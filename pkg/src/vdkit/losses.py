"""Training objectives: CTC (with brute-force oracle), focal CTC, mask BCE,
dice, cross-entropy, consistency penalty, and the composite schemes.

CTC conventions: alphabet indices 1..A, blank = 0, targets are sequences
over 1..A. Emission log-probabilities are clamped at log(1e-12) inside the
lattice recursions (the brute-force oracle applies the identical clamp).
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels as _K
from .errors import CtcInfeasibleError, InputError

LOG_FLOOR = _K.LOG_FLOOR
PROB_FLOOR = 1e-12

_NEG_INF = float("-inf")


@dataclass(frozen=True, eq=False)
class CtcProblem:
    """Per-step log-probabilities (T x (A+1), blank first) and a target."""

    log_probs: np.ndarray
    target: tuple

    def __post_init__(self):
        lp = np.ascontiguousarray(self.log_probs, dtype=np.float64)
        if lp.ndim != 2 or lp.shape[1] < 2:
            raise InputError(
                f"log_probs must be (T, A+1) with A >= 1, got {lp.shape}"
            )
        if np.any(np.isnan(lp)) or np.any(lp == np.inf):
            raise InputError("log_probs contain NaN or +inf")
        sums = np.exp(lp).sum(axis=1)
        bad = np.abs(sums - 1.0) > 1e-9
        if np.any(bad):
            t = int(np.argmax(bad))
            raise InputError(
                f"log_probs row {t} is not a distribution (sum = {sums[t]!r})"
            )
        object.__setattr__(self, "log_probs", lp)
        tgt = tuple(int(v) for v in self.target)
        a = lp.shape[1] - 1
        for v in tgt:
            if not (1 <= v <= a):
                raise InputError(
                    f"target label {v} outside alphabet 1..{a}"
                )
        object.__setattr__(self, "target", tgt)

    @property
    def steps(self):
        return self.log_probs.shape[0]

    @property
    def alphabet_size(self):
        return self.log_probs.shape[1] - 1

    def extended_target(self):
        """Blank-interleaved target: [0, y1, 0, y2, ..., 0]."""
        ext = np.zeros(2 * len(self.target) + 1, dtype=np.int32)
        ext[1::2] = self.target
        return ext


def required_steps(target):
    """Minimum T that can emit the target: length plus adjacent repeats."""
    reps = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + reps


def _check_feasible(p):
    need = required_steps(p.target)
    if p.steps < need:
        raise CtcInfeasibleError(
            f"target of length {len(p.target)} with repeats needs at least "
            f"{need} steps, got {p.steps}"
        )


def ctc_neg_log_likelihood(p):
    """-log P(target | log_probs) via the forward lattice in log space."""
    _check_feasible(p)
    return _K.ctc_forward_nll(p.log_probs, p.extended_target())


def ctc_grad_log_probs(p):
    """(nll, d nll / d log_probs) via the forward-backward lattice."""
    _check_feasible(p)
    return _K.ctc_grad(p.log_probs, p.extended_target())


def collapse_path(path):
    """Collapse map B: drop adjacent repeats, then blanks."""
    out = []
    prev = None
    for v in path:
        if v != prev:
            if v != 0:
                out.append(v)
            prev = v
    return tuple(out)


def ctc_brute_force(p, max_steps=10, max_paths=10_000_000):
    """Oracle: enumerate every alignment path and sum the matching ones.

    Applies the same emission clamp as the DP so the two agree to roundoff.
    Refuses inputs larger than max_steps or (A+1)**T > max_paths.
    """
    t_len = p.steps
    a1 = p.alphabet_size + 1
    if t_len > max_steps or a1**t_len > max_paths:
        raise InputError(
            f"brute force refused: T={t_len}, (A+1)^T={a1 ** t_len}"
        )
    _check_feasible(p)
    lp = p.log_probs.tolist()
    target = p.target
    masses = []
    for path in itertools.product(range(a1), repeat=t_len):
        if collapse_path(path) != target:
            continue
        s = 0.0
        for t, k in enumerate(path):
            v = lp[t][k]
            if v < LOG_FLOOR:
                v = LOG_FLOOR
            s += v
        masses.append(math.exp(s))
    total = math.fsum(masses)
    if total <= 0.0:
        raise CtcInfeasibleError("no alignment path collapses to the target")
    return -math.log(total)


@dataclass(frozen=True)
class FocalCtcConfig:
    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def _mean_peak_prob(log_probs):
    # p_t = (1/T) sum_t max_c exp(log_probs[t, c])
    rows = log_probs.tolist()
    s = 0.0
    for row in rows:
        hi = row[0]
        for v in row[1:]:
            if v > hi:
                hi = v
        s += math.exp(hi)
    return s / len(rows)


def focal_ctc_loss(p, cfg):
    """((1 - p_t)^gamma * L_CTC, p_t); gamma = 0 reduces to plain CTC."""
    nll = ctc_neg_log_likelihood(p)
    p_t = _mean_peak_prob(p.log_probs)
    factor = (1.0 - p_t) ** cfg.gamma
    return factor * nll, p_t


def focal_ctc_grad(p, cfg):
    """(loss, p_t, grad): the focal factor is a constant during
    differentiation, scaling the plain CTC gradient."""
    nll, grad = ctc_grad_log_probs(p)
    p_t = _mean_peak_prob(p.log_probs)
    factor = (1.0 - p_t) ** cfg.gamma
    return factor * nll, p_t, factor * grad


def _check_mask_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(
            f"mask shapes differ: pred {pred.shape} vs gt {gt.shape}"
        )
    return pred, gt


def bce_mask_loss(pred, gt):
    """Pixel-mean binary cross-entropy of a soft mask against a binary one."""
    pred, gt = _check_mask_pair(pred, gt)
    pc = np.clip(pred, PROB_FLOOR, 1.0 - PROB_FLOOR)
    terms = -(gt * np.log(pc) + (1.0 - gt) * np.log(1.0 - pc))
    return float(terms.mean())


def bce_mask_grad(pred, gt):
    pred, gt = _check_mask_pair(pred, gt)
    pc = np.clip(pred, PROB_FLOOR, 1.0 - PROB_FLOOR)
    g = ((1.0 - gt) / (1.0 - pc) - gt / pc) / pred.size
    # clamped pixels sit on a flat segment of the loss
    g[(pred < PROB_FLOOR) | (pred > 1.0 - PROB_FLOOR)] = 0.0
    return g


def dice_loss(pred, gt):
    """1 - 2|pred*gt| / (|pred| + |gt|); empty vs empty counts as agreement."""
    pred, gt = _check_mask_pair(pred, gt)
    inter = float((pred * gt).sum())
    denom = float(pred.sum()) + float(gt.sum())
    if denom == 0.0:
        return 0.0
    return 1.0 - 2.0 * inter / denom


def dice_grad(pred, gt):
    pred, gt = _check_mask_pair(pred, gt)
    inter = float((pred * gt).sum())
    denom = float(pred.sum()) + float(gt.sum())
    if denom == 0.0:
        return np.zeros_like(pred)
    return -2.0 * (gt * denom - inter) / (denom * denom)


def _target_index(probs, target):
    if isinstance(target, (int, np.integer)):
        idx = int(target)
    else:
        onehot = np.asarray(target)
        if onehot.shape != probs.shape:
            raise InputError(
                f"one-hot target shape {onehot.shape} != probs {probs.shape}"
            )
        hot = np.nonzero(onehot)[0]
        if len(hot) != 1:
            raise InputError(f"one-hot target must have exactly one 1, got {len(hot)}")
        idx = int(hot[0])
    if not (0 <= idx < probs.shape[0]):
        raise InputError(f"target index {idx} outside 0..{probs.shape[0] - 1}")
    return idx


def cross_entropy_loss(probs, target):
    """-log p[target] with the probability floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError(f"probs must be 1-d, got {probs.shape}")
    if abs(float(probs.sum()) - 1.0) > 1e-9:
        raise InputError(f"probs must sum to 1, got {float(probs.sum())!r}")
    idx = _target_index(probs, target)
    return -math.log(max(float(probs[idx]), PROB_FLOOR))


def cross_entropy_grad(probs, target):
    probs = np.asarray(probs, dtype=np.float64)
    idx = _target_index(probs, target)
    g = np.zeros_like(probs)
    if probs[idx] > PROB_FLOOR:
        g[idx] = -1.0 / probs[idx]
    return g


def consistency_penalty(pairs, compat, gamma_pen):
    """gamma_pen times the number of (part, damage) pairs the table rejects."""
    invalid = 0
    for part, damage in pairs:
        if not compat.is_valid(part, damage):
            invalid += 1
    return gamma_pen * invalid


SCHEME_TERMS = {
    "mars4": ("detect", "coarse", "refine", "inc"),
    "albert4": ("mask", "damage", "part", "fake"),
    "appendix6": ("mask", "dice", "part", "damage", "cons", "poly"),
}


@dataclass(frozen=True)
class LossWeights:
    """Named nonnegative coefficients; unnamed terms default to weight 1."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.values.items():
            if v < 0:
                raise ValueError(f"weight {name} must be >= 0, got {v}")

    def get(self, name):
        return float(self.values.get(name, 1.0))

    @classmethod
    def mars4(cls):
        """Stock coefficients for the mars4 scheme."""
        return cls({"detect": 0.75, "coarse": 0.75, "refine": 0.8, "inc": 0.5})


def composite_loss(terms, scheme, weights=LossWeights()):
    """Weighted sum of named loss terms under a fixed scheme ordering.

    Schemes: mars4 (detect, coarse, refine, inc), albert4 (mask, damage,
    part, fake), appendix6 (mask, dice, part, damage, cons, poly). The
    "inc" term is caller-computed; by convention it defaults to a BCE mask
    term at the finest decomposition level.
    """
    if scheme not in SCHEME_TERMS:
        raise ValueError(
            f"unknown scheme {scheme!r}; expected one of {sorted(SCHEME_TERMS)}"
        )
    order = SCHEME_TERMS[scheme]
    missing = [name for name in order if name not in terms]
    if missing:
        raise ValueError(f"scheme {scheme} missing terms: {missing}")
    total = 0.0
    for name in order:
        total += weights.get(name) * float(terms[name])
    return total
