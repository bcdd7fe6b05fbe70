"""Sequence decoders: CTC greedy, CTC prefix beam search, and linear-chain
CRF Viterbi with its exhaustive oracle.

Labels follow the CTC convention (blank = 0, alphabet 1..A); CRF labels are
0..L-1 over caller-supplied log-domain potentials.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

_NEG_INF = float("-inf")


def _lae(a, b):
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    if a >= b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 8
    prune_log_threshold: float = _NEG_INF

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")


@dataclass(frozen=True, eq=False)
class CrfModel:
    """Log-domain unary (T x L) and pairwise (L x L) potentials."""

    unary: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.unary, dtype=np.float64)
        p = np.asarray(self.pairwise, dtype=np.float64)
        if u.ndim != 2 or u.shape[0] < 1:
            raise ValueError(f"unary must be (T, L), got {u.shape}")
        ll = u.shape[1]
        if p.shape != (ll, ll):
            raise ValueError(
                f"pairwise must be ({ll}, {ll}) to match unary, got {p.shape}"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))):
            raise InputError("CRF potentials must be finite")
        object.__setattr__(self, "unary", u)
        object.__setattr__(self, "pairwise", p)

    @property
    def steps(self):
        return self.unary.shape[0]

    @property
    def labels(self):
        return self.unary.shape[1]


def _check_log_probs(log_probs):
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[1] < 2:
        raise InputError(f"log_probs must be (T, A+1), got {lp.shape}")
    if np.any(np.isnan(lp)) or np.any(lp == np.inf):
        raise InputError("log_probs contain NaN or +inf")
    return lp


def ctc_greedy_decode(log_probs):
    """Per-step argmax (ties to the lowest index), collapsed: repeats merged,
    blanks dropped."""
    lp = _check_log_probs(log_probs)
    out = []
    prev = None
    for t in range(lp.shape[0]):
        k = int(np.argmax(lp[t]))
        if k != prev and k != 0:
            out.append(k)
        prev = k
    return tuple(out)


def ctc_beam_search(log_probs, cfg=BeamConfig()):
    """Prefix beam search over labelings.

    Tracks (blank, non-blank) path mass per prefix in log space, merging
    alignments that collapse to the same labeling. With beam_width >=
    (A+1)^T no prefix is ever dropped and the top-1 result is the exact
    maximum-posterior labeling. Returns [(labels, log_prob)] ranked by
    descending probability, ties broken by lexicographic labels.
    """
    lp = _check_log_probs(log_probs)
    t_len, a1 = lp.shape
    thr = cfg.prune_log_threshold
    # prefix -> [log mass ending in blank, log mass ending in its last label]
    beams = {(): [0.0, _NEG_INF]}
    for t in range(t_len):
        row = lp[t]
        nxt = {}

        def bucket(prefix):
            b = nxt.get(prefix)
            if b is None:
                b = [_NEG_INF, _NEG_INF]
                nxt[prefix] = b
            return b

        for prefix, (pb, pnb) in beams.items():
            total = _lae(pb, pnb)
            b = bucket(prefix)
            b[0] = _lae(b[0], total + row[0])
            last = prefix[-1] if prefix else None
            if last is not None and row[last] >= thr:
                # same label again extends the non-blank mass only
                b[1] = _lae(b[1], pnb + row[last])
            for k in range(1, a1):
                if row[k] < thr:
                    continue
                if k == last:
                    # a repeat label needs a blank in between
                    mass = pb + row[k]
                else:
                    mass = total + row[k]
                eb = bucket(prefix + (k,))
                eb[1] = _lae(eb[1], mass)
        ranked = sorted(
            nxt.items(), key=lambda kv: (-_lae(kv[1][0], kv[1][1]), kv[0])
        )
        beams = dict(ranked[: cfg.beam_width])
    final = [(prefix, _lae(pb, pnb)) for prefix, (pb, pnb) in beams.items()]
    final.sort(key=lambda item: (-item[1], item[0]))
    return final


def chain_score(m, labels):
    """Canonical left-to-right score of a CRF labeling."""
    s = m.unary[0, labels[0]]
    for t in range(1, len(labels)):
        s += m.pairwise[labels[t - 1], labels[t]] + m.unary[t, labels[t]]
    return float(s)


def crf_viterbi(m):
    """Exact MAP labeling of a linear chain.

    Runs a suffix-max recursion, then builds the labeling front to back
    choosing the smallest label that attains the max at each step, which
    yields the lexicographically smallest optimum. The returned score is
    chain_score(labels) so it is bit-identical to the oracle's scoring.
    """
    t_len, n_labels = m.unary.shape
    u = m.unary
    p = m.pairwise
    # f[t][j]: best score of the suffix starting at t given y_t = j
    f = np.empty((t_len, n_labels), dtype=np.float64)
    f[t_len - 1] = u[t_len - 1]
    for t in range(t_len - 2, -1, -1):
        for j in range(n_labels):
            best = _NEG_INF
            for k in range(n_labels):
                cand = p[j, k] + f[t + 1, k]
                if cand > best:
                    best = cand
            f[t, j] = u[t, j] + best
    labels = []
    best0 = f[0].max()
    prev = int(np.flatnonzero(f[0] == best0)[0])
    labels.append(prev)
    for t in range(1, t_len):
        cand = p[prev] + f[t]
        best = cand.max()
        prev = int(np.flatnonzero(cand == best)[0])
        labels.append(prev)
    return labels, chain_score(m, labels)


def crf_brute_force(m, max_sequences=1_000_000):
    """Oracle: exhaustive maximization with the same tie-break."""
    t_len, n_labels = m.unary.shape
    if n_labels**t_len > max_sequences:
        raise InputError(
            f"brute force refused: L^T = {n_labels ** t_len} sequences"
        )
    best_labels = None
    best_score = _NEG_INF
    for labels in itertools.product(range(n_labels), repeat=t_len):
        s = chain_score(m, labels)
        if s > best_score:
            best_score = s
            best_labels = labels
    return list(best_labels), best_score
